use std::path::Path;

use super::AudioBuffer;
use crate::error::{Error, Result};

const TARGET_RATE: u32 = 16000;

/// Read a mono 16-bit PCM wav file. Other sample rates are resampled to
/// 16 kHz on load; multichannel files are rejected.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = hound::WavReader::open(path).map_err(|source| Error::Wav {
        path: path.to_path_buf(),
        source,
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::WavFormat {
            path: path.to_path_buf(),
            detail: format!("expected mono, got {} channels", spec.channels),
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::WavFormat {
            path: path.to_path_buf(),
            detail: format!(
                "expected 16-bit PCM, got {}-bit {:?}",
                spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    let samples: Vec<f64> = reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| v as f64 / 32768.0).map_err(|source| Error::Wav {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect::<Result<_>>()?;
    let audio = AudioBuffer::new(samples, spec.sample_rate)?;
    if spec.sample_rate == TARGET_RATE {
        Ok(audio)
    } else {
        resample(&audio, TARGET_RATE)
    }
}

/// Write a mono 16-bit PCM wav file. Samples are clamped to [-1, 1].
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|source| Error::Wav {
        path: path.to_path_buf(),
        source,
    })?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|source| Error::Wav {
            path: path.to_path_buf(),
            source,
        })?;
    }
    writer.finalize().map_err(|source| Error::Wav {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Windowed-sinc resampler (Hann window, 32 taps per side).
pub fn resample(audio: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::InvalidConfig("target rate must be > 0".into()));
    }
    if target_rate == audio.sample_rate {
        return Ok(audio.clone());
    }
    let ratio = audio.sample_rate as f64 / target_rate as f64;
    let out_len = ((audio.len() as f64) / ratio).floor() as usize;
    if out_len == 0 {
        return Err(Error::AudioTooShort {
            len: audio.len(),
            min: ratio.ceil() as usize,
        });
    }
    const TAPS: isize = 32;
    // Low-pass at 95% of the narrower Nyquist to suppress aliasing.
    let cutoff = 0.95 * ratio.recip().min(1.0);
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let center = j as f64 * ratio;
        let i0 = center.floor() as isize;
        let mut acc = 0.0;
        for i in i0 - TAPS + 1..=i0 + TAPS {
            if i < 0 || i as usize >= audio.len() {
                continue;
            }
            let x = center - i as f64;
            let sinc = if x == 0.0 {
                1.0
            } else {
                let px = std::f64::consts::PI * x;
                (px * cutoff).sin() / px
            };
            let win = 0.5 + 0.5 * (std::f64::consts::PI * x / TAPS as f64).cos();
            acc += audio.samples[i as usize] * sinc * win;
        }
        out.push(acc);
    }
    AudioBuffer::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, secs: f64) -> AudioBuffer {
        let len = (rate as f64 * secs) as usize;
        let samples = (0..len)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * freq * n as f64 / rate as f64).sin())
            .collect();
        AudioBuffer::new(samples, rate).unwrap()
    }

    #[test]
    fn wav_roundtrip_is_exact_for_quantized_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        // Quantize first so the roundtrip is exact.
        let audio = AudioBuffer::new(
            sine(440.0, 16000, 0.25)
                .samples
                .iter()
                .map(|&s| ((s * 32767.0).round() as i16) as f64 / 32768.0)
                .collect(),
            16000,
        )
        .unwrap();
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        for (a, b) in audio.samples.iter().zip(back.samples.iter()) {
            assert!((a - b).abs() < 1.0 / 32768.0 + 1e-12);
        }
    }

    #[test]
    fn resample_preserves_tone_frequency() {
        let audio = sine(440.0, 48000, 0.5);
        let down = resample(&audio, 16000).unwrap();
        assert_eq!(down.sample_rate, 16000);
        // Zero crossings per second should match the tone.
        let crossings = down
            .samples
            .windows(2)
            .filter(|w| w[0] <= 0.0 && w[1] > 0.0)
            .count();
        let hz = crossings as f64 / down.duration_seconds();
        assert!((hz - 440.0).abs() < 5.0, "estimated {hz} Hz");
    }

    #[test]
    fn read_rejects_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::WavFormat { .. })));
    }

    #[test]
    fn read_resamples_non_16k() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hi.wav");
        write_wav(&path, &sine(440.0, 48000, 0.2)).unwrap();
        let audio = read_wav(&path).unwrap();
        assert_eq!(audio.sample_rate, 16000);
        assert!((audio.duration_seconds() - 0.2).abs() < 0.01);
    }
}
