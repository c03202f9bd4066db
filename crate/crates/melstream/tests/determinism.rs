//! Determinism across worker-thread counts: every parallel loop writes
//! disjoint slots or reduces in index order, so pool size must not change a
//! single bit.

use melstream::features::frame_context_values;
use melstream::model::{forward, init_parameters, Mode, ModelConfig};
use melstream::training::backward;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .unwrap()
}

#[test]
fn forward_is_bit_identical_across_pool_sizes() {
    for mode in [Mode::Online, Mode::Offline] {
        let mut cfg = ModelConfig::tiny(mode);
        cfg.f_mel = 12;
        let params = init_parameters(&cfg, 5).unwrap();
        let t = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..t * cfg.f_mel)
            .map(|_| rng.random_range(-4.0..1.0))
            .collect();
        let framed = frame_context_values(&values, t, cfg.f_mel, &cfg.context);

        let single = pool(1).install(|| forward(&cfg, &params, &framed).unwrap());
        let multi = pool(4).install(|| forward(&cfg, &params, &framed).unwrap());
        assert_eq!(single, multi, "{mode:?}");
    }
}

#[test]
fn gradients_are_bit_identical_across_pool_sizes() {
    let cfg = ModelConfig::tiny(Mode::Online);
    let params = init_parameters(&cfg, 6).unwrap();
    let t = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let values: Vec<f64> = (0..t * cfg.f_mel)
        .map(|_| rng.random_range(-4.0..1.0))
        .collect();
    let target: Vec<f64> = (0..t * cfg.f_mel)
        .map(|_| rng.random_range(-4.0..1.0))
        .collect();
    let framed = frame_context_values(&values, t, cfg.f_mel, &cfg.context);

    let (loss_a, grads_a) = pool(1).install(|| backward(&cfg, &params, &framed, &target).unwrap());
    let (loss_b, grads_b) = pool(4).install(|| backward(&cfg, &params, &framed, &target).unwrap());
    assert_eq!(loss_a.to_bits(), loss_b.to_bits());
    let aa = grads_a.arrays();
    let bb = grads_b.arrays();
    for i in 0..aa.len() {
        assert_eq!(aa[i].1, bb[i].1, "{} differs", aa[i].0);
    }
}

#[test]
fn repeated_forward_is_bit_identical() {
    let cfg = ModelConfig::tiny(Mode::Online);
    let params = init_parameters(&cfg, 7).unwrap();
    let t = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let values: Vec<f64> = (0..t * cfg.f_mel)
        .map(|_| rng.random_range(-4.0..1.0))
        .collect();
    let framed = frame_context_values(&values, t, cfg.f_mel, &cfg.context);
    let a = forward(&cfg, &params, &framed).unwrap();
    let b = forward(&cfg, &params, &framed).unwrap();
    assert_eq!(a, b);
}
