use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Peak level in dB relative to digital full scale.
pub fn peak_dbfs(audio: &AudioBuffer) -> Result<f64> {
    let peak = audio.peak();
    if peak == 0.0 {
        return Err(Error::SilentInput);
    }
    Ok(20.0 * peak.log10())
}

/// Scale the signal so its peak sits exactly at `target_dbfs`.
/// Returns the scaled buffer and the gain, reusable on a paired signal.
pub fn peak_normalize_to(audio: &AudioBuffer, target_dbfs: f64) -> Result<(AudioBuffer, f64)> {
    let peak = audio.peak();
    if peak == 0.0 {
        return Err(Error::SilentInput);
    }
    let gain = 10f64.powf(target_dbfs / 20.0) / peak;
    Ok((audio.scaled(gain), gain))
}

/// Scale the signal so its peak lands at a level drawn uniformly in
/// [-6, -1] dBFS. Deterministic for a fixed seed.
pub fn peak_normalize(audio: &AudioBuffer, rng_seed: u64) -> Result<(AudioBuffer, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let target = rng.random_range(-6.0..=-1.0);
    peak_normalize_to(audio, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(samples: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(samples, 16000).unwrap()
    }

    #[test]
    fn forced_minus_six_dbfs_gain() {
        let audio = buf(vec![0.1, -0.5, 0.2]);
        let (scaled, gain) = peak_normalize_to(&audio, -6.0).unwrap();
        // dBFS formula oracle: 10^(-6/20) / 0.5, roughly 1.0024.
        assert!((gain - 10f64.powf(-6.0 / 20.0) / 0.5).abs() < 1e-15);
        assert!((gain - 1.0024).abs() < 1e-4);
        assert!((scaled.peak() - 10f64.powf(-0.3)).abs() < 1e-12);
    }

    #[test]
    fn peak_already_at_target_gives_unit_gain() {
        let level = 10f64.powf(-3.0 / 20.0);
        let audio = buf(vec![level, -level / 2.0]);
        let (_, gain) = peak_normalize_to(&audio, -3.0).unwrap();
        assert!((gain - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let audio = buf(vec![0.3, -0.2, 0.25]);
        let (a, g1) = peak_normalize(&audio, 99).unwrap();
        let (b, g2) = peak_normalize(&audio, 99).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn silent_input_is_an_error() {
        let audio = buf(vec![0.0, 0.0]);
        assert!(matches!(
            peak_normalize(&audio, 1),
            Err(Error::SilentInput)
        ));
    }

    #[test]
    fn output_peak_always_in_range() {
        for seed in 0..50u64 {
            let audio = buf(vec![0.01 * (seed + 1) as f64, -0.002]);
            let (scaled, _) = peak_normalize(&audio, seed).unwrap();
            let peak = scaled.peak();
            assert!(peak >= 10f64.powf(-6.0 / 20.0) - 1e-12);
            assert!(peak <= 10f64.powf(-1.0 / 20.0) + 1e-12);
        }
    }
}
