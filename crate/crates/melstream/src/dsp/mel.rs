use ndarray::Array2;

use super::stft::ComplexSpectrogram;
use crate::error::{Error, Result};

/// Hz to mel, HTK convention.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// Mel to Hz, HTK convention.
pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank. Rows are filters, columns are STFT bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    pub f_min: f64,
    pub f_max: f64,
    pub n_mels: usize,
}

impl MelFilterbank {
    pub fn n_bins(&self) -> usize {
        self.weights.ncols()
    }
}

/// Build a triangular mel filterbank with centers equally spaced on the mel
/// scale; adjacent triangles overlap at each other's centers.
pub fn mel_filterbank(
    n_mels: usize,
    fft_size: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels == 0 {
        return Err(Error::InvalidConfig("n_mels must be > 0".into()));
    }
    if !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
        return Err(Error::InvalidConfig(format!(
            "need 0 <= f_min < f_max <= nyquist, got f_min={f_min} f_max={f_max} nyquist={nyquist}"
        )));
    }

    let bins = fft_size / 2 + 1;
    let mel_lo = hz_to_mel(f_min);
    let mel_hi = hz_to_mel(f_max);
    // n_mels + 2 edge points; filter m spans edges m..m+2 with its peak at m+1.
    let edges_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut weights = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        let mut nonzero = false;
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            if w > 0.0 {
                nonzero = true;
            }
            weights[(m, k)] = w;
        }
        if !nonzero {
            return Err(Error::InvalidConfig(format!(
                "mel filter {m} is empty: n_mels={n_mels} exceeds the fft resolution"
            )));
        }
    }

    Ok(MelFilterbank {
        weights,
        f_min,
        f_max,
        n_mels,
    })
}

/// Log-mel-spectrogram: T x F_mel matrix of ln(max(power, floor)).
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub values: Array2<f64>,
    pub floor: f64,
}

impl LogMelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }

    /// Build from a flat row-major T x F buffer.
    pub fn from_flat(frames: usize, n_mels: usize, data: Vec<f64>, floor: f64) -> Self {
        let values = Array2::from_shape_vec((frames, n_mels), data)
            .expect("flat buffer length must be frames * n_mels");
        Self { values, floor }
    }
}

/// Pool the power spectrogram through the filterbank, floor and take the
/// natural log.
pub fn log_mel(
    spec: &ComplexSpectrogram,
    fb: &MelFilterbank,
    floor: f64,
) -> Result<LogMelSpectrogram> {
    if floor <= 0.0 {
        return Err(Error::InvalidConfig("log floor must be > 0".into()));
    }
    if fb.n_bins() != spec.bins() {
        return Err(Error::shape("log_mel", fb.n_bins(), spec.bins()));
    }
    let t = spec.frames();
    let mut values = Array2::zeros((t, fb.n_mels));
    for ti in 0..t {
        for m in 0..fb.n_mels {
            let mut acc = 0.0;
            for k in 0..fb.n_bins() {
                let w = fb.weights[(m, k)];
                if w != 0.0 {
                    acc += w * spec.values[(ti, k)].norm_sqr();
                }
            }
            values[(ti, m)] = acc.max(floor).ln();
        }
    }
    Ok(LogMelSpectrogram { values, floor })
}
