use ndarray::Array2;
use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;

use super::{AudioBuffer, StftConfig};
use crate::error::{Error, Result};

/// One-sided complex spectrogram, frames by frequency bins (T x K).
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    /// Per-bin power |S|^2.
    pub fn power(&self) -> Array2<f64> {
        self.values.mapv(|c| c.norm_sqr())
    }
}

/// Short-time Fourier transform. Frame t covers samples
/// [t*hop, t*hop + frame_len); each frame is windowed, zero-padded to
/// fft_size and transformed one-sided.
pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let n_frames = cfg.frame_count(audio.len())?;
    let window = cfg.window.samples(cfg.frame_len);
    let bins = cfg.bins();

    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);

    let mut values = Array2::zeros((n_frames, bins));
    let mut frame_buf = vec![0.0f64; cfg.fft_size];
    let mut spectrum = vec![Complex64::new(0.0, 0.0); bins];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_scratch_len()];

    for t in 0..n_frames {
        let start = t * cfg.hop;
        for i in 0..cfg.frame_len {
            frame_buf[i] = audio.samples[start + i] * window[i];
        }
        for v in frame_buf[cfg.frame_len..].iter_mut() {
            *v = 0.0;
        }
        fft.process_with_scratch(&mut frame_buf, &mut spectrum, &mut scratch)
            .expect("fft buffer sizes are fixed by construction");
        for (k, &c) in spectrum.iter().enumerate() {
            values[(t, k)] = c;
        }
    }

    Ok(ComplexSpectrogram {
        values,
        config: *cfg,
        sample_rate: audio.sample_rate,
    })
}

/// Inverse STFT by windowed overlap-add with window-energy normalization.
/// Reconstruction is exact on the fully overlapped interior for any
/// COLA-compliant window/hop pair.
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioBuffer> {
    let cfg = &spec.config;
    cfg.validate()?;
    let bins = cfg.bins();
    if spec.bins() != bins {
        return Err(Error::shape("istft", bins, spec.bins()));
    }
    let n_frames = spec.frames();
    if n_frames == 0 {
        return Err(Error::InvalidConfig("empty spectrogram".into()));
    }

    let window = cfg.window.samples(cfg.frame_len);
    let out_len = cfg.frame_len + (n_frames - 1) * cfg.hop;

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_size);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); bins];
    let mut frame_buf = vec![0.0f64; cfg.fft_size];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_scratch_len()];

    let mut out = vec![0.0f64; out_len];
    let mut norm = vec![0.0f64; out_len];
    let inv_n = 1.0 / cfg.fft_size as f64;

    for t in 0..n_frames {
        for k in 0..bins {
            spectrum[k] = spec.values[(t, k)];
        }
        // The real inverse transform requires purely real DC and Nyquist
        // bins; spectrograms produced by `stft` satisfy this already.
        spectrum[0].im = 0.0;
        if cfg.fft_size % 2 == 0 {
            spectrum[bins - 1].im = 0.0;
        }
        ifft.process_with_scratch(&mut spectrum, &mut frame_buf, &mut scratch)
            .expect("ifft buffer sizes are fixed by construction");
        let start = t * cfg.hop;
        for i in 0..cfg.frame_len {
            out[start + i] += frame_buf[i] * inv_n * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }

    // Positions with almost no overlap-add weight (the outermost window
    // tails) cannot be reconstructed; dividing there would amplify noise by
    // 1/w^2, so they are zeroed instead.
    let norm_max = norm.iter().fold(0.0f64, |a, &n| a.max(n));
    let cutoff = 1e-2 * norm_max;
    for (o, n) in out.iter_mut().zip(norm.iter()) {
        if *n > cutoff {
            *o /= n;
        } else {
            *o = 0.0;
        }
    }

    AudioBuffer::new(out, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Window;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, rate: u32, len: usize) -> AudioBuffer {
        let samples = (0..len)
            .map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / rate as f64).sin())
            .collect();
        AudioBuffer::new(samples, rate).unwrap()
    }

    #[test]
    fn zero_audio_gives_zero_spectrogram() {
        let audio = AudioBuffer::new(vec![0.0; 16000], 16000).unwrap();
        let cfg = StftConfig::speech_enhancement_16k();
        let spec = stft(&audio, &cfg).unwrap();
        assert_eq!(spec.bins(), 257);
        assert!(spec.values.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn sinusoid_peaks_at_expected_bin() {
        // 1 kHz at 16 kHz with 512-sample frames: bin = 1000 / (16000/512) = 32.
        let audio = sine(1000.0, 16000, 4096);
        let cfg = StftConfig::speech_enhancement_16k();
        let spec = stft(&audio, &cfg).unwrap();
        for t in 0..spec.frames() {
            let row = spec.values.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, 32, "frame {t}");
        }
    }

    /// Direct-DFT oracle for one windowed frame: the implementation must
    /// match an O(N^2) transform exactly (to fp accumulation error).
    #[test]
    fn matches_direct_dft_on_first_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
        let audio = AudioBuffer::new(samples.clone(), 16000).unwrap();
        let cfg = StftConfig::speech_enhancement_16k();
        let spec = stft(&audio, &cfg).unwrap();

        let window = Window::PeriodicHann.samples(512);
        for k in 0..257 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, (&x, &w)) in samples.iter().zip(window.iter()).enumerate() {
                let phase = -2.0 * std::f64::consts::PI * k as f64 * n as f64 / 512.0;
                acc += Complex64::new(phase.cos(), phase.sin()) * (x * w);
            }
            let got = spec.values[(0, k)];
            assert!(
                (got - acc).norm() < 1e-9,
                "bin {k}: got {got}, oracle {acc}"
            );
        }
    }

    fn roundtrip_interior_error(audio: &AudioBuffer, cfg: &StftConfig) -> f64 {
        let spec = stft(audio, cfg).unwrap();
        let rec = istft(&spec).unwrap();
        let lo = cfg.frame_len;
        let hi = rec.len() - cfg.frame_len;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in lo..hi {
            let d = rec.samples[i] - audio.samples[i];
            num += d * d;
            den += audio.samples[i] * audio.samples[i];
        }
        (num / den).sqrt()
    }

    #[test]
    fn roundtrip_white_noise_half_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..8192).map(|_| rng.random_range(-1.0..1.0)).collect();
        let audio = AudioBuffer::new(samples, 16000).unwrap();
        let err = roundtrip_interior_error(&audio, &StftConfig::speech_enhancement_16k());
        assert!(err < 1e-6, "interior relative error {err}");
    }

    #[test]
    fn roundtrip_white_noise_quarter_hop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<f64> = (0..8192).map(|_| rng.random_range(-1.0..1.0)).collect();
        let audio = AudioBuffer::new(samples, 16000).unwrap();
        let err = roundtrip_interior_error(&audio, &StftConfig::asr_16k());
        assert!(err < 1e-6, "interior relative error {err}");
    }

    #[test]
    fn zero_spectrogram_gives_zero_audio() {
        let cfg = StftConfig::speech_enhancement_16k();
        let spec = ComplexSpectrogram {
            values: Array2::zeros((5, cfg.bins())),
            config: cfg,
            sample_rate: 16000,
        };
        let audio = istft(&spec).unwrap();
        assert!(audio.samples.iter().all(|&s| s == 0.0));
    }
}
