use super::config::ModelConfig;
use super::lstm::{affine, lstm_sequence_into, Direction, LstmScratch};
use super::params::Parameters;
use crate::error::{Error, Result};
use crate::features::FramedInput;
use crate::par;
use crate::real::Real;

// Two interior layouts are used: time-major TFD with index (t*F + f)*D + d
// for the full-band passes, and frequency-major FTD with index
// (f*T + t)*D + d for the sub-band passes. "Reshaping" between them is a
// plain layout transpose.

pub(crate) fn transpose_tfd_to_ftd<T: Real>(src: &[T], t_len: usize, f_len: usize, d: usize, dst: &mut [T]) {
    for t in 0..t_len {
        for f in 0..f_len {
            let s = (t * f_len + f) * d;
            let q = (f * t_len + t) * d;
            dst[q..q + d].copy_from_slice(&src[s..s + d]);
        }
    }
}

pub(crate) fn transpose_ftd_to_tfd<T: Real>(src: &[T], t_len: usize, f_len: usize, d: usize, dst: &mut [T]) {
    for f in 0..f_len {
        for t in 0..t_len {
            let s = (f * t_len + t) * d;
            let q = (t * f_len + f) * d;
            dst[q..q + d].copy_from_slice(&src[s..s + d]);
        }
    }
}

/// Embed every context vector with an affine map. Input is bins x ctx in
/// time-major bin order; output bins are written through `dst_index`.
fn embed<T: Real>(
    input: &[T],
    ctx: usize,
    w: &[T],
    b: &[T],
    d: usize,
    dst: &mut [T],
    dst_index: impl Fn(usize) -> usize + Sync,
) {
    // Sequential: cheap relative to the recurrent passes, and the
    // destination indexing differs per call site.
    let n_bins = input.len() / ctx;
    for bin in 0..n_bins {
        let x = &input[bin * ctx..(bin + 1) * ctx];
        let out = dst_index(bin);
        affine(w, b, d, ctx, x, &mut dst[out..out + d]);
    }
}

/// Full-band pass: bidirectional LSTM along frequency, independently per
/// frame. `z` and `out` are TFD.
pub(crate) fn fullband_pass<T: Real>(
    z: &[T],
    f_len: usize,
    params: &Parameters<T>,
    block: usize,
    out: &mut [T],
) {
    let hf = params.blocks[block].fullband_fwd.hidden;
    let d = 2 * hf;
    par::for_each_chunk_mut(out, f_len * d, |t, chunk| {
        let zt = &z[t * f_len * d..(t + 1) * f_len * d];
        let mut fwd = vec![T::ZERO; f_len * hf];
        let mut bwd = vec![T::ZERO; f_len * hf];
        let mut scratch = LstmScratch::new(hf);
        lstm_sequence_into(
            zt,
            f_len,
            &params.blocks[block].fullband_fwd,
            Direction::Forward,
            &mut fwd,
            &mut scratch,
        );
        lstm_sequence_into(
            zt,
            f_len,
            &params.blocks[block].fullband_bwd,
            Direction::Backward,
            &mut bwd,
            &mut scratch,
        );
        for f in 0..f_len {
            chunk[f * d..f * d + hf].copy_from_slice(&fwd[f * hf..(f + 1) * hf]);
            chunk[f * d + hf..(f + 1) * d].copy_from_slice(&bwd[f * hf..(f + 1) * hf]);
        }
    });
}

/// Output gating: sigmoid(affine(h)) elementwise-multiplied with h.
/// Works on any layout; bins are independent.
pub fn gate_apply<T: Real>(
    h: &[T],
    d: usize,
    gate_w: &[T],
    gate_b: &[T],
    out: &mut [T],
) {
    let bins_per_chunk = 64;
    par::for_each_chunk_mut(out, bins_per_chunk * d, |chunk_idx, chunk| {
        let mut s = vec![T::ZERO; d];
        let base = chunk_idx * bins_per_chunk * d;
        for (i, ob) in chunk.chunks_mut(d).enumerate() {
            let hb = &h[base + i * d..base + (i + 1) * d];
            affine(gate_w, gate_b, d, d, hb, &mut s);
            for j in 0..d {
                ob[j] = s[j].sigmoid() * hb[j];
            }
        }
    });
}

/// Sub-band pass: LSTM along time, independently per mel frequency.
/// Unidirectional in online mode; bidirectional with a projection back to D
/// in offline mode. `w_in` and `out` are FTD.
pub(crate) fn subband_pass<T: Real>(
    w_in: &[T],
    t_len: usize,
    cfg: &ModelConfig,
    params: &Parameters<T>,
    block: usize,
    out: &mut [T],
) {
    let d = cfg.hidden_d;
    let hs = cfg.subband_hidden;
    let bp = &params.blocks[block];
    if !cfg.subband_bidirectional() {
        // hs == d, so the hidden sequence is the block output.
        par::for_each_chunk_mut(out, t_len * d, |f, chunk| {
            let wf = &w_in[f * t_len * d..(f + 1) * t_len * d];
            let mut scratch = LstmScratch::new(hs);
            lstm_sequence_into(wf, t_len, &bp.subband_fwd, Direction::Forward, chunk, &mut scratch);
        });
    } else {
        let proj_w = bp.subband_proj_w.as_ref().expect("offline projection");
        let proj_b = bp.subband_proj_b.as_ref().expect("offline projection");
        let bwd_w = bp.subband_bwd.as_ref().expect("offline backward pass");
        par::for_each_chunk_mut(out, t_len * d, |f, chunk| {
            let wf = &w_in[f * t_len * d..(f + 1) * t_len * d];
            let mut fwd = vec![T::ZERO; t_len * hs];
            let mut bwd = vec![T::ZERO; t_len * hs];
            let mut scratch = LstmScratch::new(hs);
            lstm_sequence_into(wf, t_len, &bp.subband_fwd, Direction::Forward, &mut fwd, &mut scratch);
            lstm_sequence_into(wf, t_len, bwd_w, Direction::Backward, &mut bwd, &mut scratch);
            let mut cat = vec![T::ZERO; 2 * hs];
            for t in 0..t_len {
                cat[..hs].copy_from_slice(&fwd[t * hs..(t + 1) * hs]);
                cat[hs..].copy_from_slice(&bwd[t * hs..(t + 1) * hs]);
                affine(
                    &proj_w.data,
                    &proj_b.data,
                    d,
                    2 * hs,
                    &cat,
                    &mut chunk[t * d..(t + 1) * d],
                );
            }
        });
    }
}

fn check_shapes<T: Real>(cfg: &ModelConfig, framed: &FramedInput<T>) -> Result<()> {
    cfg.validate()?;
    if framed.f_mel != cfg.f_mel {
        return Err(Error::shape("forward", cfg.f_mel, framed.f_mel));
    }
    if framed.context != cfg.context {
        return Err(Error::ShapeMismatch {
            context: "forward",
            expected: format!("{:?}", cfg.context),
            got: format!("{:?}", framed.context),
        });
    }
    if framed.frames == 0 {
        return Err(Error::InvalidConfig("empty input".into()));
    }
    let bins = framed.frames * framed.f_mel;
    if framed.along_freq.len() != bins * cfg.context.n_time()
        || framed.along_time.len() != bins * cfg.context.n_freq()
    {
        return Err(Error::shape(
            "forward",
            bins * cfg.context.n_time(),
            framed.along_freq.len(),
        ));
    }
    Ok(())
}

/// Batch forward pass. Returns the enhanced log-mel values as a flat
/// row-major T x F_mel matrix.
pub fn forward<T: Real>(
    cfg: &ModelConfig,
    params: &Parameters<T>,
    framed: &FramedInput<T>,
) -> Result<Vec<T>> {
    check_shapes(cfg, framed)?;
    let t_len = framed.frames;
    let f_len = framed.f_mel;
    let d = cfg.hidden_d;
    let n_time = cfg.context.n_time();
    let n_freq = cfg.context.n_freq();
    let bins = t_len * f_len;

    // Embeddings: E_f time-major for the full-band passes, E_t
    // frequency-major for the sub-band passes.
    let mut e_f = vec![T::ZERO; bins * d];
    embed(
        &framed.along_freq,
        n_time,
        &params.embed_freq_w.data,
        &params.embed_freq_b.data,
        d,
        &mut e_f,
        |bin| bin * d,
    );
    let mut e_t = vec![T::ZERO; bins * d];
    embed(
        &framed.along_time,
        n_freq,
        &params.embed_time_w.data,
        &params.embed_time_b.data,
        d,
        &mut e_t,
        |bin| {
            let (t, f) = (bin / f_len, bin % f_len);
            (f * t_len + t) * d
        },
    );

    let mut z = vec![T::ZERO; bins * d]; // TFD
    let mut h = vec![T::ZERO; bins * d]; // TFD
    let mut g_ftd = vec![T::ZERO; bins * d]; // FTD
    let mut w_sb = vec![T::ZERO; bins * d]; // FTD
    let mut s_ftd = vec![T::ZERO; bins * d]; // FTD
    let mut s_tfd = vec![T::ZERO; bins * d]; // TFD

    for block in 0..cfg.n_blocks {
        // Full-band input: embeddings plus the previous block's output.
        z.copy_from_slice(&e_f);
        if block > 0 {
            for (zv, sv) in z.iter_mut().zip(s_tfd.iter()) {
                *zv += *sv;
            }
        }
        fullband_pass(&z, f_len, params, block, &mut h);

        // Gate, then reshape to frequency-major for the sub-band pass.
        let bp = &params.blocks[block];
        gate_apply(&h, d, &bp.gate_w.data, &bp.gate_b.data, &mut z);
        transpose_tfd_to_ftd(&z, t_len, f_len, d, &mut g_ftd);

        for ((w, ev), gv) in w_sb.iter_mut().zip(e_t.iter()).zip(g_ftd.iter()) {
            *w = *ev + *gv;
        }
        subband_pass(&w_sb, t_len, cfg, params, block, &mut s_ftd);
        transpose_ftd_to_tfd(&s_ftd, t_len, f_len, d, &mut s_tfd);
    }

    // D -> 1 output head.
    let mut out = vec![T::ZERO; bins];
    let hw = &params.head_w.data;
    let hb = params.head_b.data[0];
    for (bin, o) in out.iter_mut().enumerate() {
        let sb = &s_tfd[bin * d..(bin + 1) * d];
        let mut acc = hb;
        for (w, s) in hw.iter().zip(sb.iter()) {
            acc += *w * *s;
        }
        *o = acc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::frame_context_values;
    use crate::model::config::Mode;
    use crate::model::params::init_parameters;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(t: usize, f: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t * f).map(|_| rng.random_range(-4.0..1.0)).collect()
    }

    #[test]
    fn output_shape_matches_input_shape() {
        for mode in [Mode::Online, Mode::Offline] {
            let cfg = ModelConfig::tiny(mode);
            let params = init_parameters(&cfg, 1).unwrap();
            for t in [1usize, 2, 7] {
                let values = random_input(t, cfg.f_mel, t as u64);
                let framed = frame_context_values(&values, t, cfg.f_mel, &cfg.context);
                let out = forward(&cfg, &params, &framed).unwrap();
                assert_eq!(out.len(), t * cfg.f_mel);
                assert!(out.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn online_output_is_causal() {
        let cfg = ModelConfig::tiny(Mode::Online);
        let params = init_parameters(&cfg, 3).unwrap();
        let t = 12;
        let values = random_input(t, cfg.f_mel, 10);
        let framed = frame_context_values(&values, t, cfg.f_mel, &cfg.context);
        let base = forward(&cfg, &params, &framed).unwrap();

        // Append one extra frame; every earlier output must be bit-identical.
        let mut extended = values.clone();
        extended.extend(random_input(1, cfg.f_mel, 999));
        let framed2 = frame_context_values(&extended, t + 1, cfg.f_mel, &cfg.context);
        let longer = forward(&cfg, &params, &framed2).unwrap();
        assert_eq!(&longer[..t * cfg.f_mel], &base[..]);
    }

    #[test]
    fn offline_output_uses_future_context() {
        let cfg = ModelConfig::tiny(Mode::Offline);
        let params = init_parameters(&cfg, 3).unwrap();
        let t = 12;
        let values = random_input(t, cfg.f_mel, 10);
        let framed = frame_context_values(&values, t, cfg.f_mel, &cfg.context);
        let base = forward(&cfg, &params, &framed).unwrap();

        let mut perturbed = values.clone();
        for v in perturbed[(t - 1) * cfg.f_mel..].iter_mut() {
            *v += 1.0;
        }
        let framed2 = frame_context_values(&perturbed, t, cfg.f_mel, &cfg.context);
        let changed = forward(&cfg, &params, &framed2).unwrap();
        let diff: f64 = changed[..(t - 2) * cfg.f_mel]
            .iter()
            .zip(base[..(t - 2) * cfg.f_mel].iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 0.0, "offline model ignored future frames");
    }

    #[test]
    fn full_band_rows_depend_only_on_their_frame() {
        let cfg = ModelConfig::tiny(Mode::Online);
        let params = init_parameters(&cfg, 7).unwrap();
        let t_len = 6;
        let f_len = cfg.f_mel;
        let d = cfg.hidden_d;
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let z: Vec<f64> = (0..t_len * f_len * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut h = vec![0.0; z.len()];
        fullband_pass(&z, f_len, &params, 0, &mut h);

        // Zero every other frame; row 3 must not move.
        let mut z2 = vec![0.0; z.len()];
        let row = 3 * f_len * d..4 * f_len * d;
        z2[row.clone()].copy_from_slice(&z[row.clone()]);
        let mut h2 = vec![0.0; z.len()];
        fullband_pass(&z2, f_len, &params, 0, &mut h2);
        assert_eq!(&h[row.clone()], &h2[row]);
    }

    #[test]
    fn gate_halves_when_weights_are_zero() {
        let d = 6;
        let h: Vec<f64> = (0..3 * d).map(|i| i as f64 * 0.1 - 0.8).collect();
        let gw = vec![0.0; d * d];
        let gb = vec![0.0; d];
        let mut out = vec![0.0; h.len()];
        gate_apply(&h, d, &gw, &gb, &mut out);
        for (o, v) in out.iter().zip(h.iter()) {
            assert!((o - 0.5 * v).abs() < 1e-15);
        }
    }

    #[test]
    fn gate_saturates_to_identity_with_large_bias() {
        let d = 4;
        let h: Vec<f64> = vec![0.3, -0.7, 1.2, 0.05, -2.0, 0.9, 0.0, 0.4];
        let gw = vec![0.0; d * d];
        let gb = vec![50.0; d];
        let mut out = vec![0.0; h.len()];
        gate_apply(&h, d, &gw, &gb, &mut out);
        for (o, v) in out.iter().zip(h.iter()) {
            assert!((o - v).abs() < 1e-10);
        }
    }

    /// Independent sigmoid-affine-multiply oracle for the gate.
    #[test]
    fn gate_matches_brute_force_oracle() {
        let d = 5;
        let bins = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let h: Vec<f64> = (0..bins * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gw: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gb: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; h.len()];
        gate_apply(&h, d, &gw, &gb, &mut out);
        for bin in 0..bins {
            for j in 0..d {
                let mut pre = gb[j];
                for k in 0..d {
                    pre += gw[j * d + k] * h[bin * d + k];
                }
                let expected = (1.0 / (1.0 + (-pre).exp())) * h[bin * d + j];
                assert!((out[bin * d + j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let cfg = ModelConfig::tiny(Mode::Online);
        let params = init_parameters(&cfg, 1).unwrap();
        let values = random_input(3, cfg.f_mel + 1, 1);
        let framed = frame_context_values(&values, 3, cfg.f_mel + 1, &cfg.context);
        assert!(forward(&cfg, &params, &framed).is_err());
    }

    #[test]
    fn transposes_are_inverse() {
        let (t, f, d) = (3, 4, 2);
        let src: Vec<f64> = (0..t * f * d).map(|i| i as f64).collect();
        let mut ftd = vec![0.0; src.len()];
        let mut back = vec![0.0; src.len()];
        transpose_tfd_to_ftd(&src, t, f, d, &mut ftd);
        transpose_ftd_to_tfd(&ftd, t, f, d, &mut back);
        assert_eq!(src, back);
    }
}
