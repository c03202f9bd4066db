//! Evaluation-report behavior on a small seeded corpus.

use melstream::eval::{logmel_mse_report, measure_rtf};
use melstream::features::ContextConfig;
use melstream::model::{init_parameters, Mode, ModelConfig, NormMode};
use melstream::pipeline::{FrontendConfig, NormSettings, PipelineConfig};
use melstream::synthdata::{build_corpus, Split};

fn desk_pipeline(mode: Mode) -> PipelineConfig {
    let model = ModelConfig {
        f_mel: 16,
        hidden_d: 12,
        n_blocks: 1,
        context: ContextConfig {
            past_frames: 3,
            future_frames: if mode == Mode::Online { 0 } else { 3 },
            lower_freqs: 2,
            upper_freqs: 2,
        },
        mode,
        fullband_hidden_per_dir: 6,
        subband_hidden: 12,
        norm_mode: match mode {
            Mode::Online => NormMode::OnlineRecursive,
            Mode::Offline => NormMode::OfflineGain,
        },
    };
    PipelineConfig::new(
        model,
        FrontendConfig::speech_enhancement(),
        NormSettings {
            l_frames: 200,
            global_mean: -6.0,
        },
    )
    .unwrap()
}

#[test]
fn untrained_model_report_is_sane_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_corpus(2, 2, 2, 31, 1.0, dir.path()).unwrap();
    let pipeline = desk_pipeline(Mode::Online);
    let params = init_parameters(&pipeline.model, 5).unwrap().cast::<f32>();

    let report = logmel_mse_report(&pipeline, &params, &manifest, Split::Val, 3).unwrap();
    assert_eq!(report.per_utterance.len(), 2);
    assert!(report.mean_mse_enhanced.is_finite());
    assert!(report.mean_mse_unprocessed > 0.0);
    // An untrained network is bad, but not pathological: its error stays
    // within an order of magnitude of doing nothing at all.
    assert!(
        report.mean_mse_enhanced < 10.0 * report.mean_mse_unprocessed,
        "enhanced {} vs unprocessed {}",
        report.mean_mse_enhanced,
        report.mean_mse_unprocessed
    );

    let again = logmel_mse_report(&pipeline, &params, &manifest, Split::Val, 3).unwrap();
    assert_eq!(report.mean_mse_enhanced, again.mean_mse_enhanced);
    assert_eq!(report.mean_mse_unprocessed, again.mean_mse_unprocessed);

    let mut text = Vec::new();
    report.write_text(&mut text).unwrap();
    let text = String::from_utf8(text).unwrap();
    assert!(text.contains("logmel_mse_enhanced="));
    assert!(text.contains("logmel_mse_unprocessed="));
}

#[test]
fn report_can_attach_waveform_snr() {
    use melstream::eval::logmel_mse_report_with_waveforms;
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_corpus(2, 1, 1, 17, 0.8, dir.path()).unwrap();
    let pipeline = desk_pipeline(Mode::Online);
    let params = init_parameters(&pipeline.model, 5).unwrap().cast::<f32>();
    let report = logmel_mse_report_with_waveforms(
        &pipeline,
        &params,
        &manifest,
        Split::Val,
        3,
        Some(4),
    )
    .unwrap();
    let snr = report.waveform_snr_db.expect("waveform snr computed");
    assert!(snr.is_finite());
    for u in &report.per_utterance {
        assert!(u.waveform_snr_db.unwrap().is_finite());
    }
}

/// Evaluation means are invariant (to fp reassociation error) under the
/// order the utterances are visited in.
#[test]
fn report_mean_is_permutation_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = build_corpus(2, 4, 2, 63, 0.8, dir.path()).unwrap();
    let pipeline = desk_pipeline(Mode::Online);
    let params = init_parameters(&pipeline.model, 5).unwrap().cast::<f32>();

    let base = logmel_mse_report(&pipeline, &params, &manifest, Split::Val, 3).unwrap();
    // Reverse the val entries in place and evaluate again.
    let val_range: Vec<usize> = manifest
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.split == Split::Val)
        .map(|(i, _)| i)
        .collect();
    let (lo, hi) = (val_range[0], *val_range.last().unwrap());
    manifest.entries[lo..=hi].reverse();
    let permuted = logmel_mse_report(&pipeline, &params, &manifest, Split::Val, 3).unwrap();
    assert!((base.mean_mse_enhanced - permuted.mean_mse_enhanced).abs() < 1e-12);
    assert!((base.mean_mse_unprocessed - permuted.mean_mse_unprocessed).abs() < 1e-12);
}

#[test]
fn rtf_is_finite_positive_for_both_modes() {
    for mode in [Mode::Online, Mode::Offline] {
        let pipeline = desk_pipeline(mode);
        let params = init_parameters(&pipeline.model, 2).unwrap().cast::<f32>();
        let report = measure_rtf(&pipeline, &params, 1.0, 3).unwrap();
        assert!(report.rtf.is_finite() && report.rtf > 0.0, "{mode:?}");
        if mode == Mode::Online {
            assert!(report.mean_frame_latency_s.unwrap() > 0.0);
        }
    }
}

/// Throughput stability: doubling the audio length moves the RTF by less
/// than 20%. Measurements interleave and keep the least-contended sample so
/// the check stays meaningful when the test host is busy.
#[test]
fn rtf_is_stable_in_audio_length() {
    let pipeline = desk_pipeline(Mode::Online);
    let params = init_parameters(&pipeline.model, 2).unwrap().cast::<f32>();
    let mut short = f64::INFINITY;
    let mut long = f64::INFINITY;
    for _ in 0..4 {
        short = short.min(measure_rtf(&pipeline, &params, 2.0, 3).unwrap().rtf);
        long = long.min(measure_rtf(&pipeline, &params, 4.0, 3).unwrap().rtf);
    }
    let ratio = long / short;
    assert!(
        (0.8..1.25).contains(&ratio),
        "rtf ratio {ratio} ({short} vs {long})"
    );
}
