//! Quantitative checks runnable without external toolchains: log-mel MSE
//! against the clean target, waveform SNR, causality probing and
//! real-time-factor measurement.

use std::io::Write;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{read_wav, AudioBuffer};
use crate::error::Result;
use crate::features::frame_context_values;
use crate::model::config::{Mode, ModelConfig};
use crate::model::forward::forward;
use crate::model::params::Parameters;
use crate::par;
use crate::pipeline::{normalize_pair, PipelineConfig, StreamSession};
use crate::real::Real;
use crate::synthdata::{derive_seed, CorpusManifest, Split};
use crate::training::loss::mse_flat;

/// Per-utterance evaluation numbers.
#[derive(Debug, Clone)]
pub struct UtteranceEval {
    pub index: usize,
    pub logmel_mse_enhanced: f64,
    pub logmel_mse_unprocessed: f64,
    /// Present when a waveform was resynthesized for comparison.
    pub waveform_snr_db: Option<f64>,
}

/// Aggregated evaluation report.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_utterance: Vec<UtteranceEval>,
    pub mean_mse_enhanced: f64,
    pub mean_mse_unprocessed: f64,
    pub waveform_snr_db: Option<f64>,
    pub rtf: Option<f64>,
}

impl EvalReport {
    /// Line-oriented text plus a machine-readable key-value block.
    pub fn write_text(&self, w: &mut impl Write) -> std::io::Result<()> {
        for u in &self.per_utterance {
            write!(
                w,
                "utterance {}\tenhanced_mse {}\tunprocessed_mse {}",
                u.index, u.logmel_mse_enhanced, u.logmel_mse_unprocessed
            )?;
            if let Some(snr) = u.waveform_snr_db {
                write!(w, "\twaveform_snr_db {snr}")?;
            }
            writeln!(w)?;
        }
        writeln!(w, "---")?;
        writeln!(w, "logmel_mse_enhanced={}", self.mean_mse_enhanced)?;
        writeln!(w, "logmel_mse_unprocessed={}", self.mean_mse_unprocessed)?;
        if let Some(snr) = self.waveform_snr_db {
            writeln!(w, "waveform_snr_db={snr}")?;
        }
        if let Some(rtf) = self.rtf {
            writeln!(w, "rtf={rtf}")?;
        }
        Ok(())
    }
}

/// Enhanced-vs-target and unprocessed-vs-target log-mel MSE over a split,
/// under the checkpoint's normalization mode.
pub fn logmel_mse_report(
    pipeline: &PipelineConfig,
    params: &Parameters<f32>,
    manifest: &CorpusManifest,
    split: Split,
    gain_seed: u64,
) -> Result<EvalReport> {
    logmel_mse_report_with_waveforms(pipeline, params, manifest, split, gain_seed, None)
}

/// Like [`logmel_mse_report`]; when `gl_iterations` is set, each utterance
/// is also resynthesized to a waveform and compared against the level-
/// matched target.
pub fn logmel_mse_report_with_waveforms(
    pipeline: &PipelineConfig,
    params: &Parameters<f32>,
    manifest: &CorpusManifest,
    split: Split,
    gain_seed: u64,
    gl_iterations: Option<usize>,
) -> Result<EvalReport> {
    let fb = pipeline.frontend.filterbank(pipeline.model.f_mel)?;
    let entries: Vec<_> = manifest.entries_of(split).collect();
    if entries.is_empty() {
        return Err(crate::error::Error::EmptyCorpus);
    }
    let evals: Vec<Result<UtteranceEval>> = par::map_indexed(entries.len(), |i| {
        let e = entries[i];
        let noisy = read_wav(&e.noisy)?;
        let target = read_wav(&e.direct)?;
        let seed = derive_seed(gain_seed, e.index as u64);
        let pair = normalize_pair(pipeline, &noisy, &target, &fb, seed)?;
        let t = pair.input.frames();
        let f = pair.input.n_mels();
        let input32: Vec<f32> = pair.input.values.iter().map(|&v| v as f32).collect();
        let framed = frame_context_values(&input32, t, f, &pipeline.model.context);
        let out = forward(&pipeline.model, params, &framed)?;
        let out64: Vec<f64> = out.iter().map(|&v| v as f64).collect();
        let input64: Vec<f64> = pair.input.values.iter().copied().collect();
        let target64: Vec<f64> = pair.target.values.iter().copied().collect();

        // ASR-normalized outputs have no level to invert back to, so
        // waveforms are not comparable in that mode.
        let comparable =
            pipeline.model.norm_mode != crate::model::config::NormMode::AsrUtteranceFrequency;
        let waveform_snr = match gl_iterations.filter(|_| comparable) {
            Some(iters) => {
                let enhanced = crate::dsp::LogMelSpectrogram::from_flat(
                    t,
                    f,
                    out64.clone(),
                    pipeline.frontend.floor,
                );
                let output = crate::pipeline::EnhanceOutput {
                    enhanced,
                    input: pair.input.clone(),
                    mu_trace: pair.mu_trace.clone(),
                    gain: pair.gain,
                };
                let estimate =
                    crate::pipeline::enhanced_to_waveform(pipeline, &output, iters, seed)?;
                Some(waveform_snr_db(&target, &estimate))
            }
            None => None,
        };

        Ok(UtteranceEval {
            index: e.index,
            logmel_mse_enhanced: mse_flat(&out64, &target64),
            logmel_mse_unprocessed: mse_flat(&input64, &target64),
            waveform_snr_db: waveform_snr,
        })
    });
    let mut per_utterance = Vec::with_capacity(entries.len());
    for e in evals {
        per_utterance.push(e?);
    }
    let n = per_utterance.len() as f64;
    let mean_mse_enhanced = per_utterance.iter().map(|u| u.logmel_mse_enhanced).sum::<f64>() / n;
    let mean_mse_unprocessed = per_utterance
        .iter()
        .map(|u| u.logmel_mse_unprocessed)
        .sum::<f64>()
        / n;
    let waveform_snr_db = if per_utterance.iter().all(|u| u.waveform_snr_db.is_some()) {
        Some(
            per_utterance
                .iter()
                .map(|u| u.waveform_snr_db.unwrap())
                .sum::<f64>()
                / n,
        )
    } else {
        None
    };
    Ok(EvalReport {
        per_utterance,
        mean_mse_enhanced,
        mean_mse_unprocessed,
        waveform_snr_db,
        rtf: None,
    })
}

/// Signal-to-distortion ratio of an estimate against a reference, in dB.
pub fn waveform_snr_db(reference: &AudioBuffer, estimate: &AudioBuffer) -> f64 {
    let len = reference.len().min(estimate.len());
    let mut p_ref = 0.0;
    let mut p_err = 0.0;
    for i in 0..len {
        let r = reference.samples[i];
        let e = estimate.samples[i];
        p_ref += r * r;
        p_err += (r - e) * (r - e);
    }
    if p_err == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (p_ref / p_err).log10()
}

/// Randomize all frames after `t_cut` over `trials` random inputs and
/// measure the largest absolute change in any output frame at or before
/// `t_cut`. Exactly zero for online configurations.
pub fn causality_probe<T: Real>(
    cfg: &ModelConfig,
    params: &Parameters<T>,
    frames: usize,
    t_cut: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    assert!(t_cut < frames);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_influence = 0.0f64;
    for _ in 0..trials {
        let base: Vec<T> = (0..frames * cfg.f_mel)
            .map(|_| T::from_f64(rng.random_range(-4.0..1.0)))
            .collect();
        let mut perturbed = base.clone();
        for v in perturbed[(t_cut + 1) * cfg.f_mel..].iter_mut() {
            *v = T::from_f64(rng.random_range(-4.0..1.0));
        }
        let out_a = forward(
            cfg,
            params,
            &frame_context_values(&base, frames, cfg.f_mel, &cfg.context),
        )?;
        let out_b = forward(
            cfg,
            params,
            &frame_context_values(&perturbed, frames, cfg.f_mel, &cfg.context),
        )?;
        for i in 0..(t_cut + 1) * cfg.f_mel {
            let d = (out_a[i] - out_b[i]).abs().to_f64();
            if d > max_influence {
                max_influence = d;
            }
        }
    }
    Ok(max_influence)
}

/// Real-time-factor measurement.
#[derive(Debug, Clone, Copy)]
pub struct RtfReport {
    /// Processing time divided by audio duration; median over repetitions.
    pub rtf: f64,
    /// Mean per-frame processing latency in seconds (streaming path only).
    pub mean_frame_latency_s: Option<f64>,
    pub mode: Mode,
}

/// Measure throughput on synthetic noise. Online configurations run the
/// frame-by-frame streaming path; offline configurations run the batch path.
///
/// Streaming memory stays bounded: the session holds a fixed context ring
/// buffer, preallocated network scratch, and a sample buffer capped at one
/// analysis window plus the incoming chunk. Per-frame work reuses those
/// buffers; only the emitted frame vector is freshly allocated.
pub fn measure_rtf(
    pipeline: &PipelineConfig,
    params: &Parameters<f32>,
    audio_seconds: f64,
    repetitions: usize,
) -> Result<RtfReport> {
    let len = (audio_seconds * pipeline.frontend.sample_rate as f64) as usize;
    let audio = crate::synthdata::gen_noise(7, len)?;
    let mut rtfs = Vec::with_capacity(repetitions.max(1));
    let mut latency = None;

    for _ in 0..repetitions.max(1) {
        match pipeline.model.mode {
            Mode::Online => {
                let mut session = StreamSession::new(pipeline, params.clone(), 1.0)?;
                let hop = pipeline.frontend.stft.hop;
                let start = Instant::now();
                let mut frames = 0usize;
                for chunk in audio.samples.chunks(hop) {
                    frames += session.push_samples(chunk)?.len();
                }
                let elapsed = start.elapsed().as_secs_f64();
                rtfs.push(elapsed / audio.duration_seconds());
                if frames > 0 {
                    latency = Some(elapsed / frames as f64);
                }
            }
            Mode::Offline => {
                let start = Instant::now();
                let _ = crate::pipeline::enhance(pipeline, params, &audio, 1)?;
                let elapsed = start.elapsed().as_secs_f64();
                rtfs.push(elapsed / audio.duration_seconds());
            }
        }
    }
    rtfs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rtf = rtfs[rtfs.len() / 2];
    Ok(RtfReport {
        rtf,
        mean_frame_latency_s: latency,
        mode: pipeline.model.mode,
    })
}
