//! Runtime gradient verification: reverse-mode gradients against central
//! finite differences. Used by the test suite and by the `verify` command.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::frame_context_values;
use crate::model::config::ModelConfig;
use crate::model::forward::forward;
use crate::model::params::init_parameters;
use crate::training::backward::backward;
use crate::training::loss::mse_flat;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_array: String,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Check every parameter's reverse-mode gradient against central finite
/// differences with step `step` on a small random problem.
pub fn finite_difference_check(
    cfg: &ModelConfig,
    seed: u64,
    frames: usize,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    finite_difference_check_with_fault(cfg, seed, frames, step, tolerance, None)
}

/// Same as [`finite_difference_check`], with an optional fault injected into
/// one analytic gradient entry. The fault exists so the verification path
/// itself can be shown to catch wrong gradients.
pub fn finite_difference_check_with_fault(
    cfg: &ModelConfig,
    seed: u64,
    frames: usize,
    step: f64,
    tolerance: f64,
    fault_offset: Option<f64>,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_parameters(cfg, seed)?;
    let values: Vec<f64> = (0..frames * cfg.f_mel)
        .map(|_| rng.random_range(-3.0..1.0))
        .collect();
    let target: Vec<f64> = (0..frames * cfg.f_mel)
        .map(|_| rng.random_range(-3.0..1.0))
        .collect();
    let framed = frame_context_values(&values, frames, cfg.f_mel, &cfg.context);

    let (_, mut grads) = backward(cfg, &params, &framed, &target)?;
    if let Some(offset) = fault_offset {
        grads.head_w.data[0] += offset;
    }

    let loss_of = |p: &crate::model::params::Parameters<f64>| -> Result<f64> {
        let out = forward(cfg, p, &framed)?;
        Ok(mse_flat(&out, &target))
    };

    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;

    let names: Vec<String> = params.arrays().into_iter().map(|(n, _)| n).collect();
    for (idx, name) in names.iter().enumerate() {
        let len = params.arrays()[idx].1.len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.arrays_mut()[idx].1.data[i] += step;
            let mut minus = params.clone();
            minus.arrays_mut()[idx].1.data[i] -= step;
            let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * step);
            let analytic = grads.arrays()[idx].1.data[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            let rel = (analytic - numeric).abs() / denom;
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{name}[{i}]");
            }
        }
    }

    Ok(GradCheckReport {
        checked,
        max_rel_error: max_rel,
        worst_array: worst,
        tolerance,
    })
}
