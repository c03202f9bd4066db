use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{log_mel, peak_normalize, read_wav, stft, AudioBuffer};
use crate::error::{Error, Result};
use crate::features::{compute_global_mean, frame_context_values};
use crate::model::config::NormMode;
use crate::model::forward::forward;
use crate::model::params::{init_parameters, Parameters};
use crate::par;
use crate::pipeline::{normalize_pair, save_checkpoint, PipelineConfig};
use crate::synthdata::{derive_seed, CorpusManifest, Split};
use crate::training::adam::{adam_step, clip_global_norm, OptimizerState};
use crate::training::backward::backward;
use crate::training::loss::mse_flat;
use crate::training::schedule::{lr_at, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub stats: Vec<EpochStats>,
    pub loss_log: PathBuf,
    pub final_checkpoint: PathBuf,
    pub averaged_checkpoint: Option<PathBuf>,
    /// Pipeline configuration including the learned global mean.
    pub pipeline: PipelineConfig,
    /// Mean log-mel MSE between unprocessed noisy input and the target over
    /// the validation split, under the run's normalization.
    pub val_unprocessed_mse: f64,
}

struct LoadedUtterance {
    noisy: AudioBuffer,
    target: AudioBuffer,
}

fn load_split(manifest: &CorpusManifest, split: Split) -> Result<Vec<LoadedUtterance>> {
    let mut out = Vec::new();
    for e in manifest.entries_of(split) {
        // Direct-path speech is the training target.
        out.push(LoadedUtterance {
            noisy: read_wav(&e.noisy)?,
            target: read_wav(&e.direct)?,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

fn crop_pair(
    utt: &LoadedUtterance,
    segment_len: usize,
    rng: &mut ChaCha8Rng,
) -> (AudioBuffer, AudioBuffer) {
    let len = utt.noisy.len();
    let (start, take) = if len > segment_len {
        (rng.random_range(0..=len - segment_len), segment_len)
    } else {
        (0, len)
    };
    let mut noisy = vec![0.0; segment_len];
    let mut target = vec![0.0; segment_len];
    noisy[..take].copy_from_slice(&utt.noisy.samples[start..start + take]);
    target[..take].copy_from_slice(&utt.target.samples[start..start + take]);
    (
        AudioBuffer {
            samples: noisy,
            sample_rate: utt.noisy.sample_rate,
        },
        AudioBuffer {
            samples: target,
            sample_rate: utt.target.sample_rate,
        },
    )
}

/// Mean log-mel MSE of one normalized pair under the current parameters, and
/// of the raw (unprocessed) input against the target.
fn eval_pair(
    pipeline: &PipelineConfig,
    params: &Parameters<f64>,
    fb: &crate::dsp::MelFilterbank,
    utt: &LoadedUtterance,
    gain_seed: u64,
) -> Result<(f64, f64)> {
    let pair = normalize_pair(pipeline, &utt.noisy, &utt.target, fb, gain_seed)?;
    let t = pair.input.frames();
    let f = pair.input.n_mels();
    let input_flat: Vec<f64> = pair.input.values.iter().copied().collect();
    let target_flat: Vec<f64> = pair.target.values.iter().copied().collect();
    let framed = frame_context_values(&input_flat, t, f, &pipeline.model.context);
    let out = forward(&pipeline.model, params, &framed)?;
    Ok((
        mse_flat(&out, &target_flat),
        mse_flat(&input_flat, &target_flat),
    ))
}

/// Desk-scale training: seeded 3 s crops, the configured normalization,
/// Adam with warmup+cosine schedule, per-epoch checkpoints and loss log,
/// optional last-k averaging. Deterministic for a fixed seed, independent of
/// the worker-thread count (per-utterance gradients are reduced in index
/// order).
pub fn train(
    tc: &TrainConfig,
    pipeline_in: &PipelineConfig,
    manifest: &CorpusManifest,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    tc.validate()?;
    let mut pipeline = pipeline_in.clone();
    pipeline.model.validate()?;
    fs::create_dir_all(out_dir)?;

    let train_set = load_split(manifest, Split::Train)?;
    let val_set = load_split(manifest, Split::Val)?;
    let fb = pipeline.frontend.filterbank(pipeline.model.f_mel)?;
    let segment_len =
        (tc.segment_seconds * pipeline.frontend.sample_rate as f64).round() as usize;

    // Dataset-level global mean of the noisy log-mel under gain
    // normalization, used by the online-recursive mode.
    if pipeline.model.norm_mode == NormMode::OnlineRecursive {
        let logmels = train_set
            .iter()
            .enumerate()
            .map(|(i, utt)| {
                let gain_seed = derive_seed(tc.seed ^ 0xa5a5_a5a5, i as u64);
                let (normalized, _) = peak_normalize(&utt.noisy, gain_seed)?;
                log_mel(
                    &stft(&normalized, &pipeline.frontend.stft)?,
                    &fb,
                    pipeline.frontend.floor,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        pipeline.norm.global_mean = compute_global_mean(&logmels)?;
    }

    let mut params = init_parameters(&pipeline.model, tc.seed)?;
    let mut opt = OptimizerState::new(&pipeline.model, tc.beta1, tc.beta2, tc.eps)?;

    let loss_log_path = out_dir.join("loss_log.txt");
    let mut loss_log = fs::File::create(&loss_log_path)?;
    let mut stats = Vec::with_capacity(tc.epochs);
    let mut val_unprocessed_mse = 0.0;

    let n_train = train_set.len();
    for epoch in 0..tc.epochs {
        let lr = lr_at(epoch, tc);
        let epoch_seed = derive_seed(tc.seed, epoch as u64);

        // Seeded shuffle of the utterance order.
        let mut order: Vec<usize> = (0..n_train).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss_sum = 0.0;
        let mut epoch_loss_count = 0usize;

        for batch in order.chunks(tc.batch_size) {
            // Per-utterance losses and gradients, reduced in batch order.
            let results: Vec<Result<(f64, Parameters<f64>)>> =
                par::map_indexed(batch.len(), |bi| {
                    let utt_idx = batch[bi];
                    let crop_seed = derive_seed(epoch_seed, utt_idx as u64);
                    let mut crop_rng = ChaCha8Rng::seed_from_u64(crop_seed);
                    let (noisy, target) =
                        crop_pair(&train_set[utt_idx], segment_len, &mut crop_rng);
                    let pair = normalize_pair(
                        &pipeline,
                        &noisy,
                        &target,
                        &fb,
                        derive_seed(crop_seed, 1),
                    )?;
                    let t = pair.input.frames();
                    let f = pair.input.n_mels();
                    let input_flat: Vec<f64> = pair.input.values.iter().copied().collect();
                    let target_flat: Vec<f64> = pair.target.values.iter().copied().collect();
                    let framed =
                        frame_context_values(&input_flat, t, f, &pipeline.model.context);
                    backward(&pipeline.model, &params, &framed, &target_flat)
                });

            let mut grad_sum = Parameters::<f64>::zeros(&pipeline.model)?;
            let mut batch_loss = 0.0;
            let inv = 1.0 / batch.len() as f64;
            for r in results {
                let (loss, grads) = r?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss at epoch {epoch}"
                    )));
                }
                batch_loss += loss * inv;
                let mut acc = grad_sum.arrays_mut();
                let g = grads.arrays();
                for i in 0..acc.len() {
                    for (slot, gv) in acc[i].1.data.iter_mut().zip(g[i].1.data.iter()) {
                        *slot += gv * inv;
                    }
                }
            }
            clip_global_norm(&mut grad_sum, tc.grad_clip);
            adam_step(&mut params, &grad_sum, &mut opt, lr)?;
            epoch_loss_sum += batch_loss;
            epoch_loss_count += 1;
        }

        // Validation: full utterances, fixed per-utterance gain seeds.
        let val_results: Vec<Result<(f64, f64)>> = par::map_indexed(val_set.len(), |i| {
            eval_pair(
                &pipeline,
                &params,
                &fb,
                &val_set[i],
                derive_seed(tc.seed ^ 0x5a5a_5a5a, i as u64),
            )
        });
        let mut val_sum = 0.0;
        let mut unproc_sum = 0.0;
        for r in val_results {
            let (enh, unproc) = r?;
            val_sum += enh;
            unproc_sum += unproc;
        }
        let val_mse = val_sum / val_set.len() as f64;
        val_unprocessed_mse = unproc_sum / val_set.len() as f64;
        let train_mse = epoch_loss_sum / epoch_loss_count as f64;

        writeln!(loss_log, "{epoch}\t{lr}\t{train_mse}\t{val_mse}")?;
        stats.push(EpochStats {
            epoch,
            lr,
            train_mse,
            val_mse,
        });

        let ckpt_path = out_dir.join(format!("checkpoint_epoch{epoch:04}.mfsn"));
        save_checkpoint(
            &ckpt_path,
            &pipeline,
            &params.cast::<f32>(),
            Some((&opt.m, &opt.v, opt.step)),
        )?;
    }
    loss_log.flush()?;

    let final_path = out_dir.join("checkpoint_final.mfsn");
    save_checkpoint(&final_path, &pipeline, &params.cast::<f32>(), None)?;

    let averaged_checkpoint = if tc.average_last_k > 1 {
        let k = tc.average_last_k.min(tc.epochs);
        let paths: Vec<PathBuf> = (tc.epochs - k..tc.epochs)
            .map(|e| out_dir.join(format!("checkpoint_epoch{e:04}.mfsn")))
            .collect();
        let avg = crate::pipeline::average_checkpoints(&paths)?;
        let avg_path = out_dir.join("checkpoint_averaged.mfsn");
        save_checkpoint(&avg_path, &avg.config, &avg.params, None)?;
        Some(avg_path)
    } else {
        None
    };

    Ok(TrainOutcome {
        stats,
        loss_log: loss_log_path,
        final_checkpoint: final_path,
        averaged_checkpoint,
        pipeline,
        val_unprocessed_mse,
    })
}

/// The identity sanity task: learn target := input on one fixed random
/// log-mel. Returns (initial loss, final loss) after `steps` Adam updates.
pub fn identity_task_losses(
    model_cfg: &crate::model::config::ModelConfig,
    frames: usize,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..frames * model_cfg.f_mel)
        .map(|_| rng.random_range(-3.0..1.0))
        .collect();
    let framed = frame_context_values(&values, frames, model_cfg.f_mel, &model_cfg.context);
    let mut params = init_parameters(model_cfg, seed)?;
    let mut opt = OptimizerState::new(model_cfg, 0.9, 0.999, 1e-8)?;
    let mut initial = None;
    let mut last = 0.0;
    for _ in 0..steps {
        let (loss, mut grads) = backward(model_cfg, &params, &framed, &values)?;
        if initial.is_none() {
            initial = Some(loss);
        }
        last = loss;
        clip_global_norm(&mut grads, 5.0);
        adam_step(&mut params, &grads, &mut opt, lr)?;
    }
    Ok((initial.unwrap_or(0.0), last))
}
