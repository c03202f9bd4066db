use crate::dsp::LogMelSpectrogram;
use crate::error::{Error, Result};

/// Mean squared error over all bins of two equal-shape matrices.
pub fn mse_loss(pred: &LogMelSpectrogram, target: &LogMelSpectrogram) -> Result<f64> {
    if pred.values.dim() != target.values.dim() {
        return Err(Error::ShapeMismatch {
            context: "mse_loss",
            expected: format!("{:?}", target.values.dim()),
            got: format!("{:?}", pred.values.dim()),
        });
    }
    let mut acc = 0.0;
    for (p, t) in pred.values.iter().zip(target.values.iter()) {
        let d = p - t;
        acc += d * d;
    }
    Ok(acc / pred.values.len() as f64)
}

/// MSE on flat slices; the training loop's inner form.
pub fn mse_flat(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(target.iter()) {
        let d = p - t;
        acc += d * d;
    }
    acc / pred.len() as f64
}
