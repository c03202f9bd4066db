use crate::error::{Error, Result};

/// Training run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub segment_seconds: f64,
    pub lr_init: f64,
    pub lr_peak: f64,
    pub warmup_epochs: usize,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub average_last_k: usize,
    pub grad_clip: f64,
}

impl TrainConfig {
    /// The reference full-scale schedule: 1e-4 warming to 1e-3 over 30 epochs, cosine
    /// back down to 1e-4 at epoch 200, 3 s segments, last-10 averaging.
    pub fn reference() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            segment_seconds: 3.0,
            lr_init: 1e-4,
            lr_peak: 1e-3,
            warmup_epochs: 30,
            lr_final: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            average_last_k: 10,
            grad_clip: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::InvalidConfig(format!(
                "warmup_epochs {} must be < epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.lr_init > self.lr_peak || self.lr_final > self.lr_peak {
            return Err(Error::InvalidConfig(
                "lr_init and lr_final must not exceed lr_peak".into(),
            ));
        }
        if self.segment_seconds <= 0.0 {
            return Err(Error::InvalidConfig("segment_seconds must be > 0".into()));
        }
        Ok(())
    }
}

/// Learning rate at an epoch: linear warmup from lr_init to lr_peak over
/// [0, warmup], then cosine decay to lr_final over [warmup, epochs].
pub fn lr_at(epoch: usize, tc: &TrainConfig) -> f64 {
    if epoch <= tc.warmup_epochs {
        if tc.warmup_epochs == 0 {
            return tc.lr_peak;
        }
        let progress = epoch as f64 / tc.warmup_epochs as f64;
        tc.lr_init + (tc.lr_peak - tc.lr_init) * progress
    } else {
        let span = (tc.epochs - tc.warmup_epochs) as f64;
        let progress = ((epoch - tc.warmup_epochs) as f64 / span).min(1.0);
        tc.lr_final
            + (tc.lr_peak - tc.lr_final) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
    }
}
