//! Waveform-level signal processing: STFT/ISTFT, Mel filterbank, log
//! compression, gain normalization and deterministic Mel-to-waveform
//! resynthesis.
//!
//! All operations are pure functions of their inputs (plus an explicit seed
//! where randomness is involved) and are safe to call from multiple threads.

mod gain;
mod invert;
mod mel;
mod stft;
mod wav;

pub use gain::{peak_dbfs, peak_normalize, peak_normalize_to};
pub use invert::{griffin_lim_with_convergence, mel_to_waveform};
pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, LogMelSpectrogram, MelFilterbank};
pub use stft::{istft, stft, ComplexSpectrogram};
pub use wav::{read_wav, resample, write_wav};

use crate::error::{Error, Result};

/// Mono waveform with its sample rate. Samples are expected in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidConfig("empty audio buffer".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be > 0".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |acc, s| acc.max(s.abs()))
    }

    /// Mean squared sample value.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Analysis window shape. Periodic variants satisfy constant overlap-add at
/// hops that divide the frame length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    PeriodicHann,
}

impl Window {
    pub fn samples(self, len: usize) -> Vec<f64> {
        match self {
            Window::PeriodicHann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Window::PeriodicHann => "periodic-hann",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "periodic-hann" => Ok(Window::PeriodicHann),
            other => Err(Error::InvalidConfig(format!("unknown window: {other}"))),
        }
    }
}

/// STFT framing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: Window,
}

impl StftConfig {
    pub fn new(frame_len: usize, hop: usize, fft_size: usize, window: Window) -> Result<Self> {
        let cfg = Self {
            frame_len,
            hop,
            fft_size,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 32 ms frames with 16 ms hop, the enhancement-mode framing at 16 kHz.
    pub fn speech_enhancement_16k() -> Self {
        Self {
            frame_len: 512,
            hop: 256,
            fft_size: 512,
            window: Window::PeriodicHann,
        }
    }

    /// 32 ms frames with 8 ms hop, the ASR-frontend framing at 16 kHz.
    pub fn asr_16k() -> Self {
        Self {
            frame_len: 512,
            hop: 128,
            fft_size: 512,
            window: Window::PeriodicHann,
        }
    }

    /// Number of one-sided frequency bins.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if len < self.frame_len {
            return Err(Error::AudioTooShort {
                len,
                min: self.frame_len,
            });
        }
        Ok(1 + (len - self.frame_len) / self.hop)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.frame_len || self.frame_len > self.fft_size {
            return Err(Error::InvalidConfig(format!(
                "need 0 < hop <= frame_len <= fft_size, got hop={} frame_len={} fft_size={}",
                self.hop, self.frame_len, self.fft_size
            )));
        }
        if !self.is_cola() {
            return Err(Error::NonCola);
        }
        Ok(())
    }

    /// Check constant overlap-add: shifted copies of the window must sum to a
    /// constant on the fully overlapped interior.
    pub fn is_cola(&self) -> bool {
        let w = self.window.samples(self.frame_len);
        // Overlap-add the window over enough frames to cover one interior
        // frame, then check flatness there.
        let n_frames = self.frame_len / self.hop + 2;
        let total = self.frame_len + (n_frames - 1) * self.hop;
        let mut ola = vec![0.0; total];
        for t in 0..n_frames {
            for (i, &wi) in w.iter().enumerate() {
                ola[t * self.hop + i] += wi;
            }
        }
        let interior = &ola[self.frame_len..total - self.frame_len];
        if interior.is_empty() {
            return false;
        }
        let level = interior[0];
        if level <= 0.0 {
            return false;
        }
        interior.iter().all(|&v| (v - level).abs() / level < 1e-9)
    }
}
