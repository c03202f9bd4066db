use super::config::{Mode, ModelConfig};
use super::forward::{fullband_pass, gate_apply};
use super::lstm::{affine, lstm_step};
use super::params::Parameters;
use crate::error::{Error, Result};
use crate::real::Real;

/// Streaming state: persistent sub-band recurrent vectors per block and mel
/// frequency, the ring of past input frames feeding the temporal context,
/// and preallocated scratch so the per-frame path does not allocate.
#[derive(Debug, Clone)]
pub struct RecurrentState<T> {
    f_mel: usize,
    d: usize,
    past: usize,
    n_time: usize,
    n_freq: usize,
    /// past x F_mel, row r holds the frame at t - past + r; rows for
    /// negative times are zero.
    history: Vec<T>,
    /// n_blocks x F_mel x subband_hidden.
    sb_h: Vec<T>,
    sb_c: Vec<T>,
    // Scratch, all F_mel-major.
    along_freq: Vec<T>,
    along_time: Vec<T>,
    e_f: Vec<T>,
    e_t: Vec<T>,
    z: Vec<T>,
    h_fb: Vec<T>,
    gated: Vec<T>,
    s: Vec<T>,
    pre: Vec<T>,
    pub frames_processed: usize,
}

impl<T: Real> RecurrentState<T> {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode != Mode::Online {
            return Err(Error::ModeMismatch(
                "streaming state requires an online configuration".into(),
            ));
        }
        let f = cfg.f_mel;
        let d = cfg.hidden_d;
        let hs = cfg.subband_hidden;
        let past = cfg.context.past_frames;
        Ok(Self {
            f_mel: f,
            d,
            past,
            n_time: cfg.context.n_time(),
            n_freq: cfg.context.n_freq(),
            history: vec![T::ZERO; past * f],
            sb_h: vec![T::ZERO; cfg.n_blocks * f * hs],
            sb_c: vec![T::ZERO; cfg.n_blocks * f * hs],
            along_freq: vec![T::ZERO; f * cfg.context.n_time()],
            along_time: vec![T::ZERO; f * cfg.context.n_freq()],
            e_f: vec![T::ZERO; f * d],
            e_t: vec![T::ZERO; f * d],
            z: vec![T::ZERO; f * d],
            h_fb: vec![T::ZERO; f * d],
            gated: vec![T::ZERO; f * d],
            s: vec![T::ZERO; f * d],
            pre: vec![T::ZERO; 4 * hs],
            frames_processed: 0,
        })
    }

    /// Reset to the stream-start state without releasing buffers.
    pub fn reset(&mut self) {
        for v in self
            .history
            .iter_mut()
            .chain(self.sb_h.iter_mut())
            .chain(self.sb_c.iter_mut())
        {
            *v = T::ZERO;
        }
        self.frames_processed = 0;
    }
}

/// Process one normalized log-mel frame and emit one enhanced frame.
///
/// Feeding an utterance frame by frame is bit-identical to the batch
/// [`super::forward::forward`] of the same online model.
pub fn forward_streaming<T: Real>(
    cfg: &ModelConfig,
    params: &Parameters<T>,
    frame: &[T],
    state: &mut RecurrentState<T>,
) -> Result<Vec<T>> {
    if cfg.mode != Mode::Online {
        return Err(Error::ModeMismatch(
            "forward_streaming requires mode=online; run the batch forward instead".into(),
        ));
    }
    if frame.len() != cfg.f_mel || state.f_mel != cfg.f_mel || state.d != cfg.hidden_d {
        return Err(Error::shape("forward_streaming", cfg.f_mel, frame.len()));
    }
    let f_len = state.f_mel;
    let d = state.d;
    let hs = cfg.subband_hidden;
    let past = state.past;

    // Context rows. The temporal window is [history rows.., current frame],
    // matching the zero-padded batch framing at stream start.
    for f in 0..f_len {
        let base = f * state.n_time;
        for j in 0..past {
            state.along_freq[base + j] = state.history[j * f_len + f];
        }
        state.along_freq[base + past] = frame[f];

        let base_t = f * state.n_freq;
        for j in 0..state.n_freq {
            let src = f as isize - cfg.context.lower_freqs as isize + j as isize;
            state.along_time[base_t + j] = if src >= 0 && (src as usize) < f_len {
                frame[src as usize]
            } else {
                T::ZERO
            };
        }
    }

    // Embeddings for this frame.
    for f in 0..f_len {
        affine(
            &params.embed_freq_w.data,
            &params.embed_freq_b.data,
            d,
            state.n_time,
            &state.along_freq[f * state.n_time..(f + 1) * state.n_time],
            &mut state.e_f[f * d..(f + 1) * d],
        );
        affine(
            &params.embed_time_w.data,
            &params.embed_time_b.data,
            d,
            state.n_freq,
            &state.along_time[f * state.n_freq..(f + 1) * state.n_freq],
            &mut state.e_t[f * d..(f + 1) * d],
        );
    }

    for block in 0..cfg.n_blocks {
        // z = E_f (+ previous block output), a single frame of the batch Z.
        state.z.copy_from_slice(&state.e_f);
        if block > 0 {
            for (zv, sv) in state.z.iter_mut().zip(state.s.iter()) {
                *zv += *sv;
            }
        }
        fullband_pass(&state.z, f_len, params, block, &mut state.h_fb);
        let bp = &params.blocks[block];
        gate_apply(
            &state.h_fb,
            d,
            &bp.gate_w.data,
            &bp.gate_b.data,
            &mut state.gated,
        );

        // Sub-band step per frequency with persistent state.
        let sb_base = block * f_len * hs;
        for f in 0..f_len {
            let x_start = f * d;
            for j in 0..d {
                state.z[x_start + j] = state.e_t[x_start + j] + state.gated[x_start + j];
            }
            let h = &mut state.sb_h[sb_base + f * hs..sb_base + (f + 1) * hs];
            let c = &mut state.sb_c[sb_base + f * hs..sb_base + (f + 1) * hs];
            lstm_step(
                &bp.subband_fwd,
                &state.z[x_start..x_start + d],
                h,
                c,
                &mut state.pre,
            );
            state.s[f * d..(f + 1) * d].copy_from_slice(h);
        }
    }

    // Output head.
    let hw = &params.head_w.data;
    let hb = params.head_b.data[0];
    let mut out = vec![T::ZERO; f_len];
    for f in 0..f_len {
        let sb = &state.s[f * d..(f + 1) * d];
        let mut acc = hb;
        for (w, s) in hw.iter().zip(sb.iter()) {
            acc += *w * *s;
        }
        out[f] = acc;
    }

    // Slide the history window.
    if past > 0 {
        state.history.copy_within(f_len.., 0);
        state.history[(past - 1) * f_len..].copy_from_slice(frame);
    }
    state.frames_processed += 1;
    Ok(out)
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
    fn stream_equals_batch_bit_exactly() {
        for seed in 0..10u64 {
            let cfg = ModelConfig::tiny(Mode::Online);
            let params = init_parameters(&cfg, seed).unwrap();
            let t = 100;
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let values: Vec<f64> = (0..t * cfg.f_mel).map(|_| rng.random_range(-4.0..1.0)).collect();

            let framed = frame_context_values(&values, t, cfg.f_mel, &cfg.context);
            let batch = forward(&cfg, &params, &framed).unwrap();

            let mut state = RecurrentState::new(&cfg).unwrap();
            let mut streamed = Vec::with_capacity(t * cfg.f_mel);
            for ti in 0..t {
                let frame = &values[ti * cfg.f_mel..(ti + 1) * cfg.f_mel];
                streamed.extend(forward_streaming(&cfg, &params, frame, &mut state).unwrap());
            }
            assert_eq!(batch, streamed, "seed {seed}");
        }
    }

    #[test]
    fn first_frame_equals_single_frame_batch() {
        let cfg = ModelConfig::tiny(Mode::Online);
        let params = init_parameters(&cfg, 77).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frame: Vec<f64> = (0..cfg.f_mel).map(|_| rng.random_range(-4.0..1.0)).collect();

        let framed = frame_context_values(&frame, 1, cfg.f_mel, &cfg.context);
        let batch = forward(&cfg, &params, &framed).unwrap();

        let mut state = RecurrentState::new(&cfg).unwrap();
        let streamed = forward_streaming(&cfg, &params, &frame, &mut state).unwrap();
        assert_eq!(batch, streamed);
    }

    #[test]
    fn offline_config_is_refused() {
        let cfg = ModelConfig::tiny(Mode::Offline);
        assert!(RecurrentState::<f64>::new(&cfg).is_err());
        let online = ModelConfig::tiny(Mode::Online);
        let params = init_parameters(&online, 1).unwrap();
        let mut state = RecurrentState::new(&online).unwrap();
        let frame = vec![0.0; online.f_mel];
        assert!(matches!(
            forward_streaming(&cfg, &params.cast::<f64>(), &frame, &mut state),
            Err(Error::ModeMismatch(_))
        ));
    }

    #[test]
    fn f32_stream_matches_f32_batch() {
        let cfg = ModelConfig::tiny(Mode::Online);
        let params64 = init_parameters(&cfg, 5).unwrap();
        let params32 = params64.cast::<f32>();
        let t = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let values: Vec<f32> = (0..t * cfg.f_mel)
            .map(|_| rng.random_range(-4.0f32..1.0))
            .collect();
        let framed = frame_context_values(&values, t, cfg.f_mel, &cfg.context);
        let batch = forward(&cfg, &params32, &framed).unwrap();
        let mut state = RecurrentState::new(&cfg).unwrap();
        let mut streamed = Vec::new();
        for ti in 0..t {
            streamed.extend(
                forward_streaming(
                    &cfg,
                    &params32,
                    &values[ti * cfg.f_mel..(ti + 1) * cfg.f_mel],
                    &mut state,
                )
                .unwrap(),
            );
        }
        assert_eq!(batch, streamed);
    }
}
