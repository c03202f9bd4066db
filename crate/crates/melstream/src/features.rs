//! Sequence reorganization and normalization.
//!
//! Log-mel-spectrograms are restacked into along-frequency sequences (one per
//! time frame, with temporal context) and along-time sequences (one per mel
//! frequency, with spectral context). Three normalization modes are
//! implemented: offline gain-level, online recursive mean, and per-utterance
//! per-frequency ASR normalization.

use crate::dsp::{peak_normalize, AudioBuffer, LogMelSpectrogram};
use crate::error::{Error, Result};
use crate::real::Real;

/// How many neighbors are stacked around each time-frequency bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextConfig {
    pub past_frames: usize,
    pub future_frames: usize,
    pub lower_freqs: usize,
    pub upper_freqs: usize,
}

impl ContextConfig {
    /// 15 past frames, no future frames; 5 lower plus 5 upper frequencies.
    pub fn online_reference() -> Self {
        Self {
            past_frames: 15,
            future_frames: 0,
            lower_freqs: 5,
            upper_freqs: 5,
        }
    }

    /// 15 past plus 15 future frames; 5 lower plus 5 upper frequencies.
    pub fn offline_reference() -> Self {
        Self {
            past_frames: 15,
            future_frames: 15,
            lower_freqs: 5,
            upper_freqs: 5,
        }
    }

    /// Length of the stacked temporal context.
    pub fn n_time(&self) -> usize {
        self.past_frames + self.future_frames + 1
    }

    /// Length of the stacked spectral context.
    pub fn n_freq(&self) -> usize {
        self.lower_freqs + self.upper_freqs + 1
    }
}

/// Context-stacked input tensors.
///
/// `along_freq` is time-major: index `(t*f_mel + f)*n_time + j` holds
/// Y(t - past + j, f). `along_time` is also time-major: index
/// `(t*f_mel + f)*n_freq + j` holds Y(t, f - lower + j). Positions outside
/// the spectrogram are zero.
#[derive(Debug, Clone)]
pub struct FramedInput<T> {
    pub along_freq: Vec<T>,
    pub along_time: Vec<T>,
    pub frames: usize,
    pub f_mel: usize,
    pub context: ContextConfig,
}

/// Stack temporal and spectral context around every bin, zero-padded at the
/// edges.
pub fn frame_context(logmel: &LogMelSpectrogram, cfg: &ContextConfig) -> FramedInput<f64> {
    let values: Vec<f64> = logmel.values.iter().copied().collect();
    frame_context_values(&values, logmel.frames(), logmel.n_mels(), cfg)
}

/// Same as [`frame_context`] but on a flat row-major T x F matrix of any
/// scalar width.
pub fn frame_context_values<T: Real>(
    values: &[T],
    t_len: usize,
    f_len: usize,
    cfg: &ContextConfig,
) -> FramedInput<T> {
    assert_eq!(values.len(), t_len * f_len);
    let n_time = cfg.n_time();
    let n_freq = cfg.n_freq();

    let mut along_freq = vec![T::ZERO; t_len * f_len * n_time];
    let mut along_time = vec![T::ZERO; t_len * f_len * n_freq];

    for t in 0..t_len {
        for f in 0..f_len {
            let base_t = (t * f_len + f) * n_time;
            for j in 0..n_time {
                let src = t as isize - cfg.past_frames as isize + j as isize;
                if src >= 0 && (src as usize) < t_len {
                    along_freq[base_t + j] = values[src as usize * f_len + f];
                }
            }
            let base_f = (t * f_len + f) * n_freq;
            for j in 0..n_freq {
                let src = f as isize - cfg.lower_freqs as isize + j as isize;
                if src >= 0 && (src as usize) < f_len {
                    along_time[base_f + j] = values[t * f_len + src as usize];
                }
            }
        }
    }

    FramedInput {
        along_freq,
        along_time,
        frames: t_len,
        f_mel: f_len,
        context: *cfg,
    }
}

/// State of the recursive online mean normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    /// Running mean of the per-frame frequency average.
    pub mu: f64,
    /// Smoothing weight, (l - 1) / (l + 1).
    pub alpha: f64,
    /// Dataset-level global mean the stream is re-centered to.
    pub global_mean: f64,
    pub initialized: bool,
}

impl NormState {
    /// Build a state from the equivalent rectangular smoothing length `l`.
    pub fn new(l_frames: usize, global_mean: f64) -> Result<Self> {
        if l_frames < 2 {
            return Err(Error::InvalidConfig(
                "smoothing length must be at least 2 frames".into(),
            ));
        }
        Ok(Self {
            mu: 0.0,
            alpha: (l_frames as f64 - 1.0) / (l_frames as f64 + 1.0),
            global_mean,
            initialized: false,
        })
    }
}

/// Mean of a frame, computed as an offset from the first element so that a
/// constant frame has exactly its value as mean.
fn frame_mean(frame: &[f64]) -> f64 {
    let reference = frame[0];
    let deviation: f64 = frame.iter().map(|x| x - reference).sum();
    reference + deviation / frame.len() as f64
}

/// One step of online recursive mean normalization:
/// mu(t) = alpha * mu(t-1) + (1 - alpha) * mean_f Y(t, f), initialized with
/// the first frame's mean, and output Y(t, .) - mu(t) + M.
pub fn online_normalize_step(frame: &[f64], state: &mut NormState) -> Result<Vec<f64>> {
    if frame.is_empty() {
        return Err(Error::InvalidConfig("empty frame".into()));
    }
    if frame.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("online normalization input".into()));
    }
    let m = frame_mean(frame);
    if state.initialized {
        // Delta form of the recursion; exact when m == mu.
        state.mu += (1.0 - state.alpha) * (m - state.mu);
    } else {
        state.mu = m;
        state.initialized = true;
    }
    let mu = state.mu;
    Ok(frame.iter().map(|y| y - mu + state.global_mean).collect())
}

/// Normalize a whole spectrogram with the online recursion, returning the
/// normalized values and the mu trace (one value per frame).
pub fn online_normalize(
    logmel: &LogMelSpectrogram,
    state: &mut NormState,
) -> Result<(LogMelSpectrogram, Vec<f64>)> {
    let t = logmel.frames();
    let f = logmel.n_mels();
    let mut out = ndarray::Array2::zeros((t, f));
    let mut trace = Vec::with_capacity(t);
    let mut frame = vec![0.0; f];
    for ti in 0..t {
        for fi in 0..f {
            frame[fi] = logmel.values[(ti, fi)];
        }
        let normalized = online_normalize_step(&frame, state)?;
        trace.push(state.mu);
        for fi in 0..f {
            out[(ti, fi)] = normalized[fi];
        }
    }
    Ok((
        LogMelSpectrogram {
            values: out,
            floor: logmel.floor,
        },
        trace,
    ))
}

/// Gain-normalize a noisy/clean pair: the gain is drawn from the noisy
/// signal's peak and applied to both.
pub fn normalize_offline_pair(
    noisy: &AudioBuffer,
    clean: &AudioBuffer,
    rng_seed: u64,
) -> Result<(AudioBuffer, AudioBuffer)> {
    if noisy.len() != clean.len() {
        return Err(Error::shape("normalize_offline_pair", noisy.len(), clean.len()));
    }
    let (noisy_out, gain) = peak_normalize(noisy, rng_seed)?;
    Ok((noisy_out, clean.scaled(gain)))
}

/// Per-utterance per-frequency mean normalization: subtract each mel
/// frequency's temporal mean.
pub fn asr_normalize(logmel: &LogMelSpectrogram) -> LogMelSpectrogram {
    let t = logmel.frames();
    let f = logmel.n_mels();
    let mut out = logmel.values.clone();
    for fi in 0..f {
        let mean = logmel.values.column(fi).sum() / t as f64;
        for ti in 0..t {
            out[(ti, fi)] -= mean;
        }
    }
    LogMelSpectrogram {
        values: out,
        floor: logmel.floor,
    }
}

/// Mean over all time-frequency bins of all utterances.
pub fn compute_global_mean(corpus: &[LogMelSpectrogram]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for lm in corpus {
        sum += lm.values.sum();
        count += lm.values.len();
    }
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lm(values: Array2<f64>) -> LogMelSpectrogram {
        LogMelSpectrogram {
            values,
            floor: 1e-5,
        }
    }

    #[test]
    fn first_frame_context_is_left_padded() {
        let t = 3;
        let f = 4;
        let mut values = Array2::zeros((t, f));
        for ti in 0..t {
            for fi in 0..f {
                values[(ti, fi)] = (ti * 10 + fi) as f64 + 1.0;
            }
        }
        let spec = lm(values);
        let cfg = ContextConfig {
            past_frames: 15,
            future_frames: 0,
            lower_freqs: 0,
            upper_freqs: 0,
        };
        let framed = frame_context(&spec, &cfg);
        // First frame: 15 zeros then Y(0, f).
        for fi in 0..f {
            let base = fi * 16;
            for j in 0..15 {
                assert_eq!(framed.along_freq[base + j], 0.0);
            }
            assert_eq!(framed.along_freq[base + 15], spec.values[(0, fi)]);
        }
    }

    #[test]
    fn identity_context_reproduces_spectrogram() {
        let values = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let spec = lm(values.clone());
        let cfg = ContextConfig {
            past_frames: 0,
            future_frames: 0,
            lower_freqs: 0,
            upper_freqs: 0,
        };
        let framed = frame_context(&spec, &cfg);
        for t in 0..3 {
            for f in 0..2 {
                assert_eq!(framed.along_freq[t * 2 + f], values[(t, f)]);
                assert_eq!(framed.along_time[t * 2 + f], values[(t, f)]);
            }
        }
    }

    /// Brute-force gather oracle on an interior bin.
    #[test]
    fn interior_bin_matches_gather_oracle() {
        let t_len = 40;
        let f_len = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let values = Array2::from_shape_fn((t_len, f_len), |_| rng.random_range(-4.0..4.0));
        let spec = lm(values.clone());
        let cfg = ContextConfig {
            past_frames: 15,
            future_frames: 15,
            lower_freqs: 5,
            upper_freqs: 5,
        };
        let framed = frame_context(&spec, &cfg);
        let (t, f) = (20usize, 40usize);
        for j in 0..31 {
            let expected = values[(t - 15 + j, f)];
            assert_eq!(framed.along_freq[(t * f_len + f) * 31 + j], expected);
        }
        for j in 0..11 {
            let expected = values[(t, f - 5 + j)];
            assert_eq!(framed.along_time[(t * f_len + f) * 11 + j], expected);
        }
    }

    #[test]
    fn constant_input_normalizes_to_global_mean_exactly() {
        let global_mean = -3.75;
        let mut state = NormState::new(200, global_mean).unwrap();
        let c = 0.1234567;
        for _ in 0..50 {
            let out = online_normalize_step(&[c; 17], &mut state).unwrap();
            for v in out {
                assert_eq!(v, global_mean);
            }
        }
    }

    #[test]
    fn alpha_matches_smoothing_length_formula() {
        let state = NormState::new(199, 0.0).unwrap();
        assert!((state.alpha - 0.99).abs() < 1e-15);
        let state = NormState::new(200, 0.0).unwrap();
        assert!((state.alpha - 199.0 / 201.0).abs() < 1e-15);
    }

    /// Hand-unrolled three-step recursion oracle.
    #[test]
    fn recursion_matches_unrolled_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let m: Vec<f64> = frames
            .iter()
            .map(|fr| fr.iter().sum::<f64>() / fr.len() as f64)
            .collect();
        let alpha = 198.0 / 200.0;
        let mu1 = m[0];
        let mu2 = alpha * mu1 + (1.0 - alpha) * m[1];
        let mu3 = alpha * mu2 + (1.0 - alpha) * m[2];

        let mut state = NormState::new(199, 0.5).unwrap();
        let mut mus = Vec::new();
        for fr in &frames {
            online_normalize_step(fr, &mut state).unwrap();
            mus.push(state.mu);
        }
        assert!((mus[0] - mu1).abs() < 1e-12);
        assert!((mus[1] - mu2).abs() < 1e-12);
        assert!((mus[2] - mu3).abs() < 1e-12);
    }

    #[test]
    fn online_step_is_causal_in_the_state() {
        // Same prefix of frames -> same outputs, regardless of what comes later.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let prefix: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut s1 = NormState::new(50, -1.0).unwrap();
        let mut s2 = NormState::new(50, -1.0).unwrap();
        let out1: Vec<Vec<f64>> = prefix
            .iter()
            .map(|f| online_normalize_step(f, &mut s1).unwrap())
            .collect();
        let out2: Vec<Vec<f64>> = prefix
            .iter()
            .map(|f| online_normalize_step(f, &mut s2).unwrap())
            .collect();
        assert_eq!(out1, out2);
        // Diverge afterwards; prior outputs were already emitted and equal.
        let _ = online_normalize_step(&[9.0; 6], &mut s1).unwrap();
        let _ = online_normalize_step(&[-9.0; 6], &mut s2).unwrap();
    }

    #[test]
    fn non_finite_frame_is_an_error() {
        let mut state = NormState::new(10, 0.0).unwrap();
        assert!(online_normalize_step(&[1.0, f64::NAN], &mut state).is_err());
    }

    #[test]
    fn offline_pair_shares_the_gain() {
        let noisy = AudioBuffer::new(vec![0.25, -0.1, 0.2], 16000).unwrap();
        let clean = AudioBuffer::new(vec![0.1, -0.05, 0.08], 16000).unwrap();
        let (n, c) = normalize_offline_pair(&noisy, &clean, 7).unwrap();
        let gain = n.samples[0] / noisy.samples[0];
        for (a, b) in clean.samples.iter().zip(c.samples.iter()) {
            assert!((a * gain - b).abs() < 1e-15);
        }
        // Force -6 dBFS to check the quoted numbers: gain = 10^(-0.3)/0.25,
        // roughly 2.0047, so the clean peak lands near 0.2005.
        let (n6, g6) = crate::dsp::peak_normalize_to(&noisy, -6.0).unwrap();
        assert!((g6 - 10f64.powf(-0.3) / 0.25).abs() < 1e-15);
        assert!((g6 - 2.0047).abs() < 1e-4);
        let c6 = clean.scaled(g6);
        assert!((c6.peak() - 0.2005).abs() < 1e-4);
        assert_eq!(n6.len(), noisy.len());
    }

    #[test]
    fn identical_pair_stays_identical() {
        let sig = AudioBuffer::new(vec![0.3, -0.2, 0.1], 16000).unwrap();
        let (n, c) = normalize_offline_pair(&sig, &sig, 3).unwrap();
        assert_eq!(n.samples, c.samples);
    }

    #[test]
    fn asr_normalize_zeroes_column_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let values = Array2::from_shape_fn((30, 12), |_| rng.random_range(-8.0..2.0));
        let out = asr_normalize(&lm(values));
        for f in 0..12 {
            let mean = out.values.column(f).sum() / 30.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn asr_normalize_is_idempotent_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let values = Array2::from_shape_fn((10, 6), |_| rng.random_range(-3.0..3.0));
        let once = asr_normalize(&lm(values.clone()));
        let twice = asr_normalize(&once);
        for (a, b) in once.values.iter().zip(twice.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let shifted = asr_normalize(&lm(values.clone() + 4.2));
        for (a, b) in once.values.iter().zip(shifted.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn asr_normalize_two_by_two_example() {
        let out = asr_normalize(&lm(array![[1.0, 3.0], [3.0, 5.0]]));
        let expected = array![[-1.0, -1.0], [1.0, 1.0]];
        assert_eq!(out.values, expected);
    }

    #[test]
    fn global_mean_basics() {
        let a = lm(Array2::from_elem((3, 4), 2.5));
        assert_eq!(compute_global_mean(std::slice::from_ref(&a)).unwrap(), 2.5);

        let b = lm(Array2::from_elem((3, 4), -1.5));
        let m = compute_global_mean(&[a, b]).unwrap();
        assert!((m - 0.5).abs() < 1e-15);

        assert!(matches!(
            compute_global_mean(&[]),
            Err(Error::EmptyCorpus)
        ));
    }

    /// Flat-concatenation oracle for the global mean.
    #[test]
    fn global_mean_matches_flat_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let corpus: Vec<LogMelSpectrogram> = (0..5)
            .map(|_| {
                let t = rng.random_range(2..10);
                lm(Array2::from_shape_fn((t, 7), |_| rng.random_range(-9.0..1.0)))
            })
            .collect();
        let mut flat = Vec::new();
        for c in &corpus {
            flat.extend(c.values.iter().copied());
        }
        let oracle = flat.iter().sum::<f64>() / flat.len() as f64;
        let got = compute_global_mean(&corpus).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }
}
