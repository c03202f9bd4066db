use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::Parameters;

/// Adam first/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Parameters<f64>,
    pub v: Parameters<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(cfg: &ModelConfig, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        Ok(Self {
            m: Parameters::zeros(cfg)?,
            v: Parameters::zeros(cfg)?,
            step: 0,
            beta1,
            beta2,
            eps,
        })
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(
    params: &mut Parameters<f64>,
    grads: &Parameters<f64>,
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    let (beta1, beta2, eps) = (opt.beta1, opt.beta2, opt.eps);

    let mut p_arrays = params.arrays_mut();
    let g_arrays = grads.arrays();
    let mut m_arrays = opt.m.arrays_mut();
    let mut v_arrays = opt.v.arrays_mut();
    if p_arrays.len() != g_arrays.len() {
        return Err(Error::shape("adam_step", p_arrays.len(), g_arrays.len()));
    }

    for i in 0..p_arrays.len() {
        let p = &mut p_arrays[i].1;
        let g = &g_arrays[i].1;
        if p.dims != g.dims {
            return Err(Error::ShapeMismatch {
                context: "adam_step",
                expected: format!("{:?}", p.dims),
                got: format!("{:?}", g.dims),
            });
        }
        let m = &mut m_arrays[i].1;
        let v = &mut v_arrays[i].1;
        for j in 0..p.data.len() {
            let gj = g.data[j];
            m.data[j] = beta1 * m.data[j] + (1.0 - beta1) * gj;
            v.data[j] = beta2 * v.data[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m.data[j] / bc1;
            let v_hat = v.data[j] / bc2;
            p.data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scale all gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut Parameters<f64>, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, t) in grads.arrays() {
        for &g in &t.data {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, t) in grads.arrays_mut() {
            for g in t.data.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{Mode, ModelConfig};
    use crate::model::params::init_parameters;

    fn setup() -> (ModelConfig, Parameters<f64>, OptimizerState) {
        let cfg = ModelConfig::tiny(Mode::Online);
        let params = init_parameters(&cfg, 3).unwrap();
        let opt = OptimizerState::new(&cfg, 0.9, 0.999, 1e-8).unwrap();
        (cfg, params, opt)
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (cfg, mut params, mut opt) = setup();
        let before = params.clone();
        let grads = Parameters::zeros(&cfg).unwrap();
        adam_step(&mut params, &grads, &mut opt, 1e-3).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_lr_for_unit_gradient() {
        // Single-coordinate algebra: m_hat = g, v_hat = g^2, so the update is
        // lr * g / (|g| + eps) = lr up to eps.
        let (cfg, mut params, mut opt) = setup();
        let before = params.head_b.data[0];
        let mut grads = Parameters::zeros(&cfg).unwrap();
        grads.head_b.data[0] = 1.0;
        let lr = 1e-3;
        adam_step(&mut params, &grads, &mut opt, lr).unwrap();
        let moved = before - params.head_b.data[0];
        assert!((moved - lr).abs() < lr * 1e-6, "moved {moved}");
    }

    #[test]
    fn two_steps_differ_from_one_with_doubled_lr() {
        let (cfg, params0, mut opt_a) = setup();
        let mut grads = Parameters::zeros(&cfg).unwrap();
        grads.head_b.data[0] = 0.7;
        grads.head_w.data[1] = -0.2;

        let mut a = params0.clone();
        adam_step(&mut a, &grads, &mut opt_a, 1e-3).unwrap();
        adam_step(&mut a, &grads, &mut opt_a, 1e-3).unwrap();

        let mut opt_b = OptimizerState::new(&cfg, 0.9, 0.999, 1e-8).unwrap();
        let mut b = params0.clone();
        adam_step(&mut b, &grads, &mut opt_b, 2e-3).unwrap();

        assert_ne!(a, b);
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let (cfg, _, _) = setup();
        let mut grads = Parameters::zeros(&cfg).unwrap();
        for (_, t) in grads.arrays_mut() {
            for g in t.data.iter_mut() {
                *g = 1.0;
            }
        }
        let n = clip_global_norm(&mut grads, 5.0);
        assert!(n > 5.0);
        let mut sq = 0.0;
        for (_, t) in grads.arrays() {
            for &g in &t.data {
                sq += g * g;
            }
        }
        assert!((sq.sqrt() - 5.0).abs() < 1e-9);
    }
}
