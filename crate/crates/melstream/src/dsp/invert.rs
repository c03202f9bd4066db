use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::num_complex::Complex64;

use super::mel::{LogMelSpectrogram, MelFilterbank};
use super::stft::{istft, stft, ComplexSpectrogram};
use super::{AudioBuffer, StftConfig};
use crate::error::{Error, Result};

/// Cholesky factorization of a symmetric positive-definite matrix.
/// Returns the lower-triangular factor L with A = L L^T.
fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "mel gram matrix is not positive definite".into(),
                    ));
                }
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &Array2<f64>, b: &[f64], out: &mut [f64]) {
    let n = l.nrows();
    // Forward substitution: L y = b.
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[(i, k)] * out[k];
        }
        out[i] = sum / l[(i, i)];
    }
    // Back substitution: L^T x = y.
    for i in (0..n).rev() {
        let mut sum = out[i];
        for k in i + 1..n {
            sum -= l[(k, i)] * out[k];
        }
        out[i] = sum / l[(i, i)];
    }
}

/// Invert a log-mel-spectrogram to a linear magnitude spectrogram via a
/// ridge-regularized least-squares fit, clamping negatives to zero.
fn mel_to_magnitude(
    logmel: &LogMelSpectrogram,
    fb: &MelFilterbank,
    cfg: &StftConfig,
) -> Result<Array2<f64>> {
    if logmel.n_mels() != fb.n_mels {
        return Err(Error::shape("mel_to_magnitude", fb.n_mels, logmel.n_mels()));
    }
    if fb.n_bins() != cfg.bins() {
        return Err(Error::shape("mel_to_magnitude", cfg.bins(), fb.n_bins()));
    }
    let n_mels = fb.n_mels;
    let bins = fb.n_bins();

    // Gram matrix FB FB^T with a small ridge to keep it positive definite.
    let mut gram = Array2::zeros((n_mels, n_mels));
    for i in 0..n_mels {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..bins {
                acc += fb.weights[(i, k)] * fb.weights[(j, k)];
            }
            gram[(i, j)] = acc;
            gram[(j, i)] = acc;
        }
    }
    let ridge = 1e-8;
    for i in 0..n_mels {
        gram[(i, i)] += ridge;
    }
    let l = cholesky(&gram)?;

    let t = logmel.frames();
    let mut magnitude = Array2::zeros((t, bins));
    let mut mel_power = vec![0.0; n_mels];
    let mut coeffs = vec![0.0; n_mels];
    for ti in 0..t {
        for m in 0..n_mels {
            mel_power[m] = logmel.values[(ti, m)].exp();
        }
        // p = FB^T (FB FB^T + ridge I)^-1 m, clamped to be non-negative.
        cholesky_solve(&l, &mel_power, &mut coeffs);
        for k in 0..bins {
            let mut acc = 0.0;
            for m in 0..n_mels {
                let w = fb.weights[(m, k)];
                if w != 0.0 {
                    acc += w * coeffs[m];
                }
            }
            magnitude[(ti, k)] = acc.max(0.0).sqrt();
        }
    }
    Ok(magnitude)
}

/// Griffin-Lim phase retrieval from a magnitude spectrogram. Returns the
/// waveform together with the per-iteration spectral-convergence error
/// ||, |STFT(x)| - target ||_F / ||target||_F.
pub fn griffin_lim_with_convergence(
    magnitude: &Array2<f64>,
    cfg: &StftConfig,
    sample_rate: u32,
    iterations: usize,
    rng_seed: u64,
) -> Result<(AudioBuffer, Vec<f64>)> {
    if iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be >= 1".into()));
    }
    cfg.validate()?;
    let (t, bins) = magnitude.dim();
    if bins != cfg.bins() {
        return Err(Error::shape("griffin_lim", cfg.bins(), bins));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut estimate = Array2::zeros((t, bins));
    for ti in 0..t {
        for k in 0..bins {
            let phase = if k == 0 || k == bins - 1 {
                0.0
            } else {
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
            };
            estimate[(ti, k)] = Complex64::from_polar(magnitude[(ti, k)], phase);
        }
    }

    let target_norm = magnitude.iter().map(|m| m * m).sum::<f64>().sqrt();
    let mut errors = Vec::with_capacity(iterations);

    for _ in 0..iterations {
        let spec = ComplexSpectrogram {
            values: estimate.clone(),
            config: *cfg,
            sample_rate,
        };
        let x = istft(&spec)?;
        // istft output length is frame_len + (t-1)*hop, so the re-analysis
        // yields exactly t frames again.
        let rebuilt = stft(&x, cfg)?;

        let mut err = 0.0;
        for ti in 0..t {
            for k in 0..bins {
                let d = rebuilt.values[(ti, k)].norm() - magnitude[(ti, k)];
                err += d * d;
            }
        }
        errors.push(if target_norm > 0.0 {
            err.sqrt() / target_norm
        } else {
            0.0
        });

        // Keep the rebuilt phase, enforce the target magnitude.
        for ti in 0..t {
            for k in 0..bins {
                let c = rebuilt.values[(ti, k)];
                let n = c.norm();
                let phase = if n > 1e-300 {
                    c / n
                } else {
                    Complex64::new(1.0, 0.0)
                };
                estimate[(ti, k)] = phase * magnitude[(ti, k)];
            }
        }
    }

    // One final synthesis from the magnitude-consistent estimate.
    let spec = ComplexSpectrogram {
        values: estimate,
        config: *cfg,
        sample_rate,
    };
    let final_audio = istft(&spec)?;
    Ok((final_audio, errors))
}

/// Deterministic mel-to-waveform resynthesis: clamped pseudo-inverse of the
/// filterbank followed by Griffin-Lim phase retrieval.
pub fn mel_to_waveform(
    logmel: &LogMelSpectrogram,
    fb: &MelFilterbank,
    cfg: &StftConfig,
    sample_rate: u32,
    iterations: usize,
    rng_seed: u64,
) -> Result<AudioBuffer> {
    let magnitude = mel_to_magnitude(logmel, fb, cfg)?;
    let (audio, _) = griffin_lim_with_convergence(&magnitude, cfg, sample_rate, iterations, rng_seed)?;
    Ok(audio)
}
