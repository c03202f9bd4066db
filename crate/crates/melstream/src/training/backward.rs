//! Cached forward pass and hand-written reverse-mode differentiation of the
//! whole network, double precision. Gradients are verified against central
//! finite differences in `gradcheck`.

use crate::error::{Error, Result};
use crate::features::FramedInput;
use crate::model::config::ModelConfig;
use crate::model::forward::{transpose_ftd_to_tfd, transpose_tfd_to_ftd};
use crate::model::lstm::{affine, lstm_sequence_cached, lstm_sequence_grad, Direction, LstmSeqCache};
use crate::model::params::{GradientSet, Parameters};
use crate::training::loss::mse_flat;

/// Every intermediate needed to run the backward pass.
pub struct ForwardCache {
    t_len: usize,
    f_len: usize,
    blocks: Vec<BlockCache>,
    /// Final block output in TFD, the head input.
    s_tfd: Vec<f64>,
    pub output: Vec<f64>,
}

struct BlockCache {
    z: Vec<f64>,          // TFD full-band input
    fb_fwd_out: Vec<f64>, // t-blocks of F x Hf
    fb_bwd_out: Vec<f64>,
    fb_fwd_cache: Vec<LstmSeqCache>,
    fb_bwd_cache: Vec<LstmSeqCache>,
    h: Vec<f64>,        // TFD concatenated full-band output
    gate_sig: Vec<f64>, // TFD sigmoid(affine(h))
    w_sb: Vec<f64>,     // FTD sub-band input
    sb_fwd_out: Vec<f64>, // f-blocks of T x Hs
    sb_bwd_out: Option<Vec<f64>>,
    sb_fwd_cache: Vec<LstmSeqCache>,
    sb_bwd_cache: Option<Vec<LstmSeqCache>>,
}

fn ensure_finite(values: &[f64], layer: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(layer.to_string()));
    }
    Ok(())
}

/// Forward pass recording all activations. Matches `model::forward::forward`
/// bit for bit on the same inputs; a test pins that equivalence.
pub fn forward_with_cache(
    cfg: &ModelConfig,
    params: &Parameters<f64>,
    framed: &FramedInput<f64>,
) -> Result<ForwardCache> {
    cfg.validate()?;
    if framed.f_mel != cfg.f_mel || framed.context != cfg.context {
        return Err(Error::shape("forward_with_cache", cfg.f_mel, framed.f_mel));
    }
    let t_len = framed.frames;
    let f_len = framed.f_mel;
    let d = cfg.hidden_d;
    let hf = cfg.fullband_hidden_per_dir;
    let hs = cfg.subband_hidden;
    let n_time = cfg.context.n_time();
    let n_freq = cfg.context.n_freq();
    let bins = t_len * f_len;

    let mut e_f = vec![0.0; bins * d];
    for bin in 0..bins {
        affine(
            &params.embed_freq_w.data,
            &params.embed_freq_b.data,
            d,
            n_time,
            &framed.along_freq[bin * n_time..(bin + 1) * n_time],
            &mut e_f[bin * d..(bin + 1) * d],
        );
    }
    let mut e_t = vec![0.0; bins * d];
    for bin in 0..bins {
        let (t, f) = (bin / f_len, bin % f_len);
        let dst = (f * t_len + t) * d;
        affine(
            &params.embed_time_w.data,
            &params.embed_time_b.data,
            d,
            n_freq,
            &framed.along_time[bin * n_freq..(bin + 1) * n_freq],
            &mut e_t[dst..dst + d],
        );
    }
    ensure_finite(&e_f, "embed_freq")?;
    ensure_finite(&e_t, "embed_time")?;

    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    let mut s_tfd = vec![0.0; bins * d];
    let mut g_tfd = vec![0.0; bins * d];
    let mut g_ftd = vec![0.0; bins * d];

    for block in 0..cfg.n_blocks {
        let bp = &params.blocks[block];
        let mut z = e_f.clone();
        if block > 0 {
            for (zv, sv) in z.iter_mut().zip(s_tfd.iter()) {
                *zv += *sv;
            }
        }

        let mut fb_fwd_out = vec![0.0; bins * hf];
        let mut fb_bwd_out = vec![0.0; bins * hf];
        let mut fb_fwd_cache = Vec::with_capacity(t_len);
        let mut fb_bwd_cache = Vec::with_capacity(t_len);
        let mut h = vec![0.0; bins * d];
        for t in 0..t_len {
            let zt = &z[t * f_len * d..(t + 1) * f_len * d];
            let mut cache_f = LstmSeqCache::new(f_len, hf);
            lstm_sequence_cached(
                zt,
                f_len,
                &bp.fullband_fwd,
                Direction::Forward,
                &mut fb_fwd_out[t * f_len * hf..(t + 1) * f_len * hf],
                &mut cache_f,
            );
            let mut cache_b = LstmSeqCache::new(f_len, hf);
            lstm_sequence_cached(
                zt,
                f_len,
                &bp.fullband_bwd,
                Direction::Backward,
                &mut fb_bwd_out[t * f_len * hf..(t + 1) * f_len * hf],
                &mut cache_b,
            );
            fb_fwd_cache.push(cache_f);
            fb_bwd_cache.push(cache_b);
            for f in 0..f_len {
                let bin = t * f_len + f;
                h[bin * d..bin * d + hf]
                    .copy_from_slice(&fb_fwd_out[(t * f_len + f) * hf..(t * f_len + f + 1) * hf]);
                h[bin * d + hf..(bin + 1) * d]
                    .copy_from_slice(&fb_bwd_out[(t * f_len + f) * hf..(t * f_len + f + 1) * hf]);
            }
        }
        ensure_finite(&h, &format!("block{block}.fullband"))?;

        // Gate: record the sigmoid activations.
        let mut gate_sig = vec![0.0; bins * d];
        let mut pre = vec![0.0; d];
        for bin in 0..bins {
            let hb = &h[bin * d..(bin + 1) * d];
            affine(&bp.gate_w.data, &bp.gate_b.data, d, d, hb, &mut pre);
            for j in 0..d {
                let s = 1.0 / (1.0 + (-pre[j]).exp());
                gate_sig[bin * d + j] = s;
                g_tfd[bin * d + j] = s * hb[j];
            }
        }
        transpose_tfd_to_ftd(&g_tfd, t_len, f_len, d, &mut g_ftd);

        let mut w_sb = vec![0.0; bins * d];
        for ((w, ev), gv) in w_sb.iter_mut().zip(e_t.iter()).zip(g_ftd.iter()) {
            *w = *ev + *gv;
        }
        ensure_finite(&w_sb, &format!("block{block}.gate"))?;

        let mut sb_fwd_out = vec![0.0; bins * hs];
        let mut sb_fwd_cache = Vec::with_capacity(f_len);
        let mut s_ftd = vec![0.0; bins * d];
        let (sb_bwd_out, sb_bwd_cache) = if !cfg.subband_bidirectional() {
            for f in 0..f_len {
                let wf = &w_sb[f * t_len * d..(f + 1) * t_len * d];
                let mut cache = LstmSeqCache::new(t_len, hs);
                lstm_sequence_cached(
                    wf,
                    t_len,
                    &bp.subband_fwd,
                    Direction::Forward,
                    &mut sb_fwd_out[f * t_len * hs..(f + 1) * t_len * hs],
                    &mut cache,
                );
                sb_fwd_cache.push(cache);
            }
            s_ftd.copy_from_slice(&sb_fwd_out);
            (None, None)
        } else {
            let bwd_w = bp.subband_bwd.as_ref().expect("offline backward pass");
            let proj_w = bp.subband_proj_w.as_ref().expect("offline projection");
            let proj_b = bp.subband_proj_b.as_ref().expect("offline projection");
            let mut sb_bwd_out = vec![0.0; bins * hs];
            let mut sb_bwd_cache = Vec::with_capacity(f_len);
            let mut cat = vec![0.0; 2 * hs];
            for f in 0..f_len {
                let wf = &w_sb[f * t_len * d..(f + 1) * t_len * d];
                let mut cache_f = LstmSeqCache::new(t_len, hs);
                lstm_sequence_cached(
                    wf,
                    t_len,
                    &bp.subband_fwd,
                    Direction::Forward,
                    &mut sb_fwd_out[f * t_len * hs..(f + 1) * t_len * hs],
                    &mut cache_f,
                );
                sb_fwd_cache.push(cache_f);
                let mut cache_b = LstmSeqCache::new(t_len, hs);
                lstm_sequence_cached(
                    wf,
                    t_len,
                    bwd_w,
                    Direction::Backward,
                    &mut sb_bwd_out[f * t_len * hs..(f + 1) * t_len * hs],
                    &mut cache_b,
                );
                sb_bwd_cache.push(cache_b);
                for t in 0..t_len {
                    let base = (f * t_len + t) * hs;
                    cat[..hs].copy_from_slice(&sb_fwd_out[base..base + hs]);
                    cat[hs..].copy_from_slice(&sb_bwd_out[base..base + hs]);
                    affine(
                        &proj_w.data,
                        &proj_b.data,
                        d,
                        2 * hs,
                        &cat,
                        &mut s_ftd[(f * t_len + t) * d..(f * t_len + t + 1) * d],
                    );
                }
            }
            (Some(sb_bwd_out), Some(sb_bwd_cache))
        };
        ensure_finite(&s_ftd, &format!("block{block}.subband"))?;

        transpose_ftd_to_tfd(&s_ftd, t_len, f_len, d, &mut s_tfd);

        blocks.push(BlockCache {
            z,
            fb_fwd_out,
            fb_bwd_out,
            fb_fwd_cache,
            fb_bwd_cache,
            h,
            gate_sig,
            w_sb,
            sb_fwd_out,
            sb_bwd_out,
            sb_fwd_cache,
            sb_bwd_cache,
        });
    }

    // Output head.
    let mut output = vec![0.0; bins];
    let hw = &params.head_w.data;
    let hb = params.head_b.data[0];
    for (bin, o) in output.iter_mut().enumerate() {
        let sb = &s_tfd[bin * d..(bin + 1) * d];
        let mut acc = hb;
        for (w, s) in hw.iter().zip(sb.iter()) {
            acc += *w * *s;
        }
        *o = acc;
    }
    ensure_finite(&output, "head")?;

    Ok(ForwardCache {
        t_len,
        f_len,
        blocks,
        s_tfd,
        output,
    })
}

/// Loss and exact gradients of mse(forward(params, framed), target) with
/// respect to every parameter array.
pub fn backward(
    cfg: &ModelConfig,
    params: &Parameters<f64>,
    framed: &FramedInput<f64>,
    target: &[f64],
) -> Result<(f64, GradientSet)> {
    let cache = forward_with_cache(cfg, params, framed)?;
    let loss = mse_flat(&cache.output, target);
    let grads = backward_from_cache(cfg, params, framed, target, &cache)?;
    Ok((loss, grads))
}

/// Backward pass reusing an existing forward cache.
pub fn backward_from_cache(
    cfg: &ModelConfig,
    params: &Parameters<f64>,
    framed: &FramedInput<f64>,
    target: &[f64],
    cache: &ForwardCache,
) -> Result<GradientSet> {
    let t_len = cache.t_len;
    let f_len = cache.f_len;
    let d = cfg.hidden_d;
    let hf = cfg.fullband_hidden_per_dir;
    let hs = cfg.subband_hidden;
    let bins = t_len * f_len;
    if target.len() != bins {
        return Err(Error::shape("backward", bins, target.len()));
    }

    let mut grads = Parameters::<f64>::zeros(cfg)?;

    // dL/d(output) for the mean-squared error.
    let inv = 2.0 / bins as f64;
    let d_out: Vec<f64> = cache
        .output
        .iter()
        .zip(target.iter())
        .map(|(o, t)| inv * (o - t))
        .collect();

    // Head backward.
    let mut d_s_tfd = vec![0.0; bins * d];
    {
        let hw = &params.head_w.data;
        for bin in 0..bins {
            let g = d_out[bin];
            let sb = &cache.s_tfd[bin * d..(bin + 1) * d];
            for j in 0..d {
                d_s_tfd[bin * d + j] = g * hw[j];
                grads.head_w.data[j] += g * sb[j];
            }
            grads.head_b.data[0] += g;
        }
    }

    let mut d_e_f = vec![0.0; bins * d];
    let mut d_e_t = vec![0.0; bins * d];
    let mut d_s_ftd = vec![0.0; bins * d];
    let mut d_h = vec![0.0; bins * d];
    let mut d_g_tfd = vec![0.0; bins * d];
    let mut d_g_ftd = vec![0.0; bins * d];

    for block in (0..cfg.n_blocks).rev() {
        let bp = &params.blocks[block];
        let bc = &cache.blocks[block];
        let gb = &mut grads.blocks[block];

        // Sub-band backward: d_s_ftd -> d_w_sb (and LSTM/projection grads).
        transpose_tfd_to_ftd(&d_s_tfd, t_len, f_len, d, &mut d_s_ftd);
        let mut d_w_sb = vec![0.0; bins * d];
        if !cfg.subband_bidirectional() {
            for f in 0..f_len {
                let range = f * t_len * d..(f + 1) * t_len * d;
                lstm_sequence_grad(
                    &bc.w_sb[range.clone()],
                    &bc.sb_fwd_out[f * t_len * hs..(f + 1) * t_len * hs],
                    &bc.sb_fwd_cache[f],
                    &bp.subband_fwd,
                    Direction::Forward,
                    &d_s_ftd[range.clone()],
                    &mut d_w_sb[range],
                    &mut gb.subband_fwd,
                );
            }
        } else {
            let bwd_w = bp.subband_bwd.as_ref().expect("offline backward pass");
            let proj_w = bp.subband_proj_w.as_ref().expect("offline projection");
            let sb_bwd_out = bc.sb_bwd_out.as_ref().expect("offline cache");
            let sb_bwd_cache = bc.sb_bwd_cache.as_ref().expect("offline cache");
            let g_bwd = gb.subband_bwd.as_mut().expect("offline grads");
            let g_proj_w = gb.subband_proj_w.as_mut().expect("offline grads");
            let g_proj_b = gb.subband_proj_b.as_mut().expect("offline grads");

            let mut d_fwd = vec![0.0; t_len * hs];
            let mut d_bwd = vec![0.0; t_len * hs];
            for f in 0..f_len {
                d_fwd.iter_mut().for_each(|v| *v = 0.0);
                d_bwd.iter_mut().for_each(|v| *v = 0.0);
                // Projection backward per frame.
                for t in 0..t_len {
                    let ds = &d_s_ftd[(f * t_len + t) * d..(f * t_len + t + 1) * d];
                    let base = (f * t_len + t) * hs;
                    for j in 0..d {
                        let g = ds[j];
                        if g == 0.0 {
                            continue;
                        }
                        g_proj_b.data[j] += g;
                        let row = &proj_w.data[j * 2 * hs..(j + 1) * 2 * hs];
                        let grow = &mut g_proj_w.data[j * 2 * hs..(j + 1) * 2 * hs];
                        for k in 0..hs {
                            grow[k] += g * bc.sb_fwd_out[base + k];
                            grow[hs + k] += g * sb_bwd_out[base + k];
                            d_fwd[t * hs + k] += g * row[k];
                            d_bwd[t * hs + k] += g * row[hs + k];
                        }
                    }
                }
                let range = f * t_len * d..(f + 1) * t_len * d;
                lstm_sequence_grad(
                    &bc.w_sb[range.clone()],
                    &bc.sb_fwd_out[f * t_len * hs..(f + 1) * t_len * hs],
                    &bc.sb_fwd_cache[f],
                    &bp.subband_fwd,
                    Direction::Forward,
                    &d_fwd,
                    &mut d_w_sb[range.clone()],
                    &mut gb.subband_fwd,
                );
                lstm_sequence_grad(
                    &bc.w_sb[range.clone()],
                    &sb_bwd_out[f * t_len * hs..(f + 1) * t_len * hs],
                    &sb_bwd_cache[f],
                    bwd_w,
                    Direction::Backward,
                    &d_bwd,
                    &mut d_w_sb[range],
                    g_bwd,
                );
            }
        }

        // w_sb = e_t + gated: both receive d_w_sb.
        for (dst, src) in d_e_t.iter_mut().zip(d_w_sb.iter()) {
            *dst += *src;
        }
        d_g_ftd.copy_from_slice(&d_w_sb);
        transpose_ftd_to_tfd(&d_g_ftd, t_len, f_len, d, &mut d_g_tfd);

        // Gate backward: g = sig (.) h with sig = sigmoid(Gw h + Gb).
        for bin in 0..bins {
            let h = &bc.h[bin * d..(bin + 1) * d];
            let sig = &bc.gate_sig[bin * d..(bin + 1) * d];
            let dg = &d_g_tfd[bin * d..(bin + 1) * d];
            let dh = &mut d_h[bin * d..(bin + 1) * d];
            for j in 0..d {
                dh[j] = dg[j] * sig[j];
            }
            for j in 0..d {
                let dpre = dg[j] * h[j] * sig[j] * (1.0 - sig[j]);
                if dpre == 0.0 {
                    continue;
                }
                gb.gate_b.data[j] += dpre;
                let row = &bp.gate_w.data[j * d..(j + 1) * d];
                let grow = &mut gb.gate_w.data[j * d..(j + 1) * d];
                for k in 0..d {
                    grow[k] += dpre * h[k];
                    dh[k] += dpre * row[k];
                }
            }
        }

        // Full-band backward: split the concatenated gradient.
        let mut d_z = vec![0.0; bins * d];
        let mut d_fwd = vec![0.0; f_len * hf];
        let mut d_bwd = vec![0.0; f_len * hf];
        for t in 0..t_len {
            for f in 0..f_len {
                let bin = t * f_len + f;
                d_fwd[f * hf..(f + 1) * hf].copy_from_slice(&d_h[bin * d..bin * d + hf]);
                d_bwd[f * hf..(f + 1) * hf].copy_from_slice(&d_h[bin * d + hf..(bin + 1) * d]);
            }
            let range = t * f_len * d..(t + 1) * f_len * d;
            lstm_sequence_grad(
                &bc.z[range.clone()],
                &bc.fb_fwd_out[t * f_len * hf..(t + 1) * f_len * hf],
                &bc.fb_fwd_cache[t],
                &bp.fullband_fwd,
                Direction::Forward,
                &d_fwd,
                &mut d_z[range.clone()],
                &mut gb.fullband_fwd,
            );
            lstm_sequence_grad(
                &bc.z[range.clone()],
                &bc.fb_bwd_out[t * f_len * hf..(t + 1) * f_len * hf],
                &bc.fb_bwd_cache[t],
                &bp.fullband_bwd,
                Direction::Backward,
                &d_bwd,
                &mut d_z[range],
                &mut gb.fullband_bwd,
            );
        }

        // z = e_f (+ s_{k-1}): e_f always receives d_z; the previous block's
        // output receives it as the next d_s_tfd.
        for (dst, src) in d_e_f.iter_mut().zip(d_z.iter()) {
            *dst += *src;
        }
        if block > 0 {
            d_s_tfd.copy_from_slice(&d_z);
        }
    }

    // Embedding backward.
    let n_time = cfg.context.n_time();
    let n_freq = cfg.context.n_freq();
    for bin in 0..bins {
        let de = &d_e_f[bin * d..(bin + 1) * d];
        let x = &framed.along_freq[bin * n_time..(bin + 1) * n_time];
        for j in 0..d {
            let g = de[j];
            if g == 0.0 {
                continue;
            }
            grads.embed_freq_b.data[j] += g;
            let row = &mut grads.embed_freq_w.data[j * n_time..(j + 1) * n_time];
            for (slot, xv) in row.iter_mut().zip(x.iter()) {
                *slot += g * xv;
            }
        }
    }
    for bin in 0..bins {
        // d_e_t is FTD; along_time is stored in TFD bin order.
        let (t, f) = (bin / f_len, bin % f_len);
        let de = &d_e_t[(f * t_len + t) * d..(f * t_len + t + 1) * d];
        let x = &framed.along_time[bin * n_freq..(bin + 1) * n_freq];
        for j in 0..d {
            let g = de[j];
            if g == 0.0 {
                continue;
            }
            grads.embed_time_b.data[j] += g;
            let row = &mut grads.embed_time_w.data[j * n_freq..(j + 1) * n_freq];
            for (slot, xv) in row.iter_mut().zip(x.iter()) {
                *slot += g * xv;
            }
        }
    }

    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::frame_context_values;
    use crate::model::config::Mode;
    use crate::model::forward::forward;
    use crate::model::params::init_parameters;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cached_forward_matches_plain_forward_bit_exactly() {
        for mode in [Mode::Online, Mode::Offline] {
            let cfg = ModelConfig::tiny(mode);
            let params = init_parameters(&cfg, 9).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(19);
            let t = 5;
            let values: Vec<f64> = (0..t * cfg.f_mel).map(|_| rng.random_range(-3.0..1.0)).collect();
            let framed = frame_context_values(&values, t, cfg.f_mel, &cfg.context);
            let plain = forward(&cfg, &params, &framed).unwrap();
            let cached = forward_with_cache(&cfg, &params, &framed).unwrap();
            assert_eq!(plain, cached.output);
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradients() {
        let cfg = ModelConfig::tiny(Mode::Online);
        let params = init_parameters(&cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let t = 4;
        let values: Vec<f64> = (0..t * cfg.f_mel).map(|_| rng.random_range(-3.0..1.0)).collect();
        let framed = frame_context_values(&values, t, cfg.f_mel, &cfg.context);
        let out = forward(&cfg, &params, &framed).unwrap();
        let (loss, grads) = backward(&cfg, &params, &framed, &out).unwrap();
        assert_eq!(loss, 0.0);
        for (name, g) in grads.arrays() {
            assert!(g.data.iter().all(|&v| v == 0.0), "{name} not zero");
        }
    }

    /// The head bias gradient has a closed form: twice the mean residual.
    #[test]
    fn head_bias_gradient_is_twice_mean_residual() {
        let cfg = ModelConfig::tiny(Mode::Online);
        let params = init_parameters(&cfg, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let t = 3;
        let values: Vec<f64> = (0..t * cfg.f_mel).map(|_| rng.random_range(-3.0..1.0)).collect();
        let target: Vec<f64> = (0..t * cfg.f_mel).map(|_| rng.random_range(-3.0..1.0)).collect();
        let framed = frame_context_values(&values, t, cfg.f_mel, &cfg.context);
        let out = forward(&cfg, &params, &framed).unwrap();
        let (_, grads) = backward(&cfg, &params, &framed, &target).unwrap();
        let mean_residual: f64 =
            out.iter().zip(target.iter()).map(|(o, t)| o - t).sum::<f64>() / out.len() as f64;
        assert!(
            (grads.head_b.data[0] - 2.0 * mean_residual).abs() < 1e-10,
            "{} vs {}",
            grads.head_b.data[0],
            2.0 * mean_residual
        );
    }

    #[test]
    fn non_finite_input_names_the_layer() {
        let cfg = ModelConfig::tiny(Mode::Online);
        let mut params = init_parameters(&cfg, 4).unwrap();
        params.embed_freq_w.data[0] = f64::NAN;
        let values = vec![1.0; 3 * cfg.f_mel];
        let framed = frame_context_values(&values, 3, cfg.f_mel, &cfg.context);
        match forward_with_cache(&cfg, &params, &framed) {
            Err(Error::NonFinite(layer)) => assert!(layer.contains("embed_freq")),
            Err(other) => panic!("expected NonFinite, got {other:?}"),
            Ok(_) => panic!("expected NonFinite, got Ok"),
        }
    }
}
