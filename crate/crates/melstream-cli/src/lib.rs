//! Command-line wiring for the melstream engine: corpus synthesis, training,
//! batch and streaming enhancement, and verification probes.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use melstream::dsp::{read_wav, write_wav, StftConfig};
use melstream::error::Error;
use melstream::features::ContextConfig;
use melstream::model::{Mode, ModelConfig, NormMode};
use melstream::pipeline::{
    enhance, enhanced_to_waveform, load_checkpoint, EnhanceOutput, FrontendConfig, NormSettings,
    PipelineConfig, StreamSession,
};
use melstream::synthdata;
use melstream::training::TrainConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "melstream",
    about = "Streaming Mel-spectrogram speech enhancement",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a deterministic synthetic noisy/clean/direct-path corpus.
    SynthData(SynthDataArgs),
    /// Train a model on a corpus manifest.
    Train(Box<TrainArgs>),
    /// Enhance one wav file with a trained checkpoint (batch path).
    Enhance(EnhanceArgs),
    /// Enhance one wav file frame by frame through the streaming path.
    Stream(StreamArgs),
    /// Run the built-in verification probes.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct SynthDataArgs {
    #[arg(long, default_value_t = 200)]
    n_train: usize,
    #[arg(long, default_value_t = 20)]
    n_val: usize,
    #[arg(long, default_value_t = 20)]
    n_test: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Utterance length in seconds.
    #[arg(long, default_value_t = 3.0)]
    duration_s: f64,
    /// Output directory for wav files and the manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Online,
    Offline,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Online => Mode::Online,
            ModeArg::Offline => Mode::Offline,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NormModeArg {
    OfflineGain,
    OnlineRecursive,
    AsrUtteranceFrequency,
}

impl From<NormModeArg> for NormMode {
    fn from(m: NormModeArg) -> NormMode {
        match m {
            NormModeArg::OfflineGain => NormMode::OfflineGain,
            NormModeArg::OnlineRecursive => NormMode::OnlineRecursive,
            NormModeArg::AsrUtteranceFrequency => NormMode::AsrUtteranceFrequency,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus manifest file (manifest.tsv) or its directory.
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Online)]
    mode: ModeArg,
    /// Normalization mode; defaults to online-recursive for online models
    /// and offline-gain otherwise.
    #[arg(long, value_enum)]
    norm_mode: Option<NormModeArg>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3.0)]
    segment_seconds: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr_init: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr_peak: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr_final: f64,
    #[arg(long, default_value_t = 3)]
    warmup_epochs: usize,
    /// Average the checkpoints of the last K epochs into
    /// checkpoint_averaged.mfsn (use 0 or 1 to disable).
    #[arg(long, default_value_t = 10)]
    average_last: usize,
    // Architecture.
    #[arg(long, default_value_t = 80)]
    f_mel: usize,
    #[arg(long, default_value_t = 192)]
    hidden_d: usize,
    #[arg(long, default_value_t = 3)]
    n_blocks: usize,
    /// Full-band hidden size per direction; defaults to hidden_d / 2.
    #[arg(long)]
    fullband_hidden: Option<usize>,
    /// Sub-band hidden size; defaults to hidden_d.
    #[arg(long)]
    subband_hidden: Option<usize>,
    #[arg(long, default_value_t = 15)]
    past_frames: usize,
    /// Future context frames; must be 0 in online mode.
    #[arg(long)]
    future_frames: Option<usize>,
    #[arg(long, default_value_t = 5)]
    lower_freqs: usize,
    #[arg(long, default_value_t = 5)]
    upper_freqs: usize,
    /// Online-normalization smoothing length L (alpha = (L-1)/(L+1)).
    #[arg(long, default_value_t = 200)]
    norm_l: usize,
    /// Use the ASR frontend: 8 ms hop and per-utterance per-frequency
    /// normalization.
    #[arg(long, default_value_t = false)]
    asr_frontend: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EmitArg {
    /// Enhanced log-mel in the network's normalized domain (.mel.mfsn).
    Mel,
    /// Waveform resynthesis via Griffin-Lim (.enhanced.wav).
    Wav,
    /// ASR-normalized enhanced log-mel (.asr.mfsn).
    AsrMel,
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input wav file (mono 16-bit PCM; resampled to 16 kHz on load).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = EmitArg::Mel)]
    emit: EmitArg,
    /// Seed for the utterance-level gain draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Griffin-Lim iterations for --emit wav.
    #[arg(long, default_value_t = 60)]
    gl_iters: usize,
    /// Require the checkpoint to use the ASR frontend (8 ms hop).
    #[arg(long, default_value_t = false)]
    asr_frontend: bool,
}

#[derive(Args, Debug)]
struct StreamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = EmitArg::Mel)]
    emit: EmitArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    gl_iters: usize,
    /// Samples per push; defaults to one hop.
    #[arg(long)]
    chunk: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProbeArg {
    All,
    Gradcheck,
    Causality,
    Dsp,
    Stream,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = ProbeArg::All)]
    probe: ProbeArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Online)]
    mode: ModeArg,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Test hook: corrupt one analytic gradient so the check must fail.
    #[arg(long, hide = true, default_value_t = false)]
    inject_grad_fault: bool,
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };

    configure_threads();

    let result = match cli.command {
        Command::SynthData(a) => cmd_synth_data(a),
        Command::Train(a) => cmd_train(*a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Stream(a) => cmd_stream(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            classify(&e)
        }
    }
}

/// MELSTREAM_THREADS caps the rayon worker pool.
fn configure_threads() {
    if let Ok(v) = std::env::var("MELSTREAM_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn classify(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_)
        | Error::ShapeMismatch { .. }
        | Error::ModeMismatch(_)
        | Error::Manifest(_)
        | Error::Checkpoint(_)
        | Error::EmptyCorpus => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Error> {
    if !path.is_file() {
        return Err(Error::InvalidConfig(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn cmd_synth_data(a: SynthDataArgs) -> Result<i32, Error> {
    let manifest = synthdata::build_corpus(
        a.n_train, a.n_val, a.n_test, a.seed, a.duration_s, &a.out,
    )?;
    println!(
        "corpus: {} train / {} val / {} test utterances of {:.1} s at {}",
        manifest.n_train,
        manifest.n_val,
        manifest.n_test,
        manifest.duration_s,
        a.out.display()
    );
    println!("manifest: {}", synthdata::CorpusManifest::manifest_path(&a.out).display());
    Ok(EXIT_OK)
}

fn manifest_path_of(corpus: &Path) -> PathBuf {
    if corpus.is_dir() {
        synthdata::CorpusManifest::manifest_path(corpus)
    } else {
        corpus.to_path_buf()
    }
}

fn cmd_train(a: TrainArgs) -> Result<i32, Error> {
    let manifest_path = manifest_path_of(&a.corpus);
    require_file(&manifest_path, "corpus manifest")?;
    let manifest = synthdata::load_manifest(&manifest_path)?;

    let mode: Mode = a.mode.into();
    let norm_mode: NormMode = a
        .norm_mode
        .map(NormMode::from)
        .unwrap_or(if a.asr_frontend {
            NormMode::AsrUtteranceFrequency
        } else {
            match mode {
                Mode::Online => NormMode::OnlineRecursive,
                Mode::Offline => NormMode::OfflineGain,
            }
        });
    let future_default = match mode {
        Mode::Online => 0,
        Mode::Offline => a.past_frames,
    };
    let model = ModelConfig {
        f_mel: a.f_mel,
        hidden_d: a.hidden_d,
        n_blocks: a.n_blocks,
        context: ContextConfig {
            past_frames: a.past_frames,
            future_frames: a.future_frames.unwrap_or(future_default),
            lower_freqs: a.lower_freqs,
            upper_freqs: a.upper_freqs,
        },
        mode,
        fullband_hidden_per_dir: a.fullband_hidden.unwrap_or(a.hidden_d / 2),
        subband_hidden: a.subband_hidden.unwrap_or(a.hidden_d),
        norm_mode,
    };
    let frontend = if a.asr_frontend {
        FrontendConfig::asr()
    } else {
        FrontendConfig::speech_enhancement()
    };
    let pipeline = PipelineConfig::new(
        model,
        frontend,
        NormSettings {
            l_frames: a.norm_l,
            global_mean: 0.0,
        },
    )?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        segment_seconds: a.segment_seconds,
        lr_init: a.lr_init,
        lr_peak: a.lr_peak,
        warmup_epochs: a.warmup_epochs,
        lr_final: a.lr_final,
        seed: a.seed,
        average_last_k: a.average_last,
        ..TrainConfig::reference()
    };
    tc.validate()?;

    let outcome = melstream::training::train(&tc, &pipeline, &manifest, &a.out)?;
    for s in &outcome.stats {
        println!(
            "epoch {}\tlr {:.3e}\ttrain_mse {:.6}\tval_mse {:.6}",
            s.epoch, s.lr, s.train_mse, s.val_mse
        );
    }
    println!("unprocessed val_mse {:.6}", outcome.val_unprocessed_mse);
    println!("loss log: {}", outcome.loss_log.display());
    println!("final checkpoint: {}", outcome.final_checkpoint.display());
    if let Some(avg) = &outcome.averaged_checkpoint {
        println!("averaged checkpoint: {}", avg.display());
    }
    Ok(EXIT_OK)
}

fn check_asr_flag(asr_frontend: bool, cfg: &PipelineConfig) -> Result<(), Error> {
    if asr_frontend && cfg.frontend.stft != StftConfig::asr_16k() {
        return Err(Error::ModeMismatch(
            "--asr-frontend requested but the checkpoint was trained with the \
             speech-enhancement frontend"
                .into(),
        ));
    }
    Ok(())
}

fn write_mel_file(
    path: &Path,
    cfg: &PipelineConfig,
    lm: &melstream::dsp::LogMelSpectrogram,
    content: &str,
) -> Result<(), Error> {
    let tensor = melstream::model::Tensor::<f32> {
        dims: vec![lm.frames(), lm.n_mels()],
        data: lm.values.iter().map(|&v| v as f32).collect(),
    };
    let config_text = format!("{}content={content}\n", cfg.to_text());
    melstream::io::write_named_tensors(path, &config_text, &[("logmel".into(), &tensor)])
}

fn emit_outputs(
    emit: EmitArg,
    cfg: &PipelineConfig,
    output: &EnhanceOutput,
    stem: &str,
    out_dir: &Path,
    gl_iters: usize,
    gl_seed: u64,
) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(out_dir)?;
    match emit {
        EmitArg::Mel => {
            let path = out_dir.join(format!("{stem}.mel.mfsn"));
            write_mel_file(&path, cfg, &output.enhanced, "enhanced-logmel")?;
            Ok(path)
        }
        EmitArg::AsrMel => {
            let path = out_dir.join(format!("{stem}.asr.mfsn"));
            let asr = melstream::features::asr_normalize(&output.enhanced);
            write_mel_file(&path, cfg, &asr, "asr-normalized-enhanced-logmel")?;
            Ok(path)
        }
        EmitArg::Wav => {
            let path = out_dir.join(format!("{stem}.enhanced.wav"));
            let audio = enhanced_to_waveform(cfg, output, gl_iters, gl_seed)?;
            write_wav(&path, &audio)?;
            Ok(path)
        }
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into())
}

fn cmd_enhance(a: EnhanceArgs) -> Result<i32, Error> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.input, "input wav")?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    check_asr_flag(a.asr_frontend, &ckpt.config)?;
    let audio = read_wav(&a.input)?;
    let output = enhance(&ckpt.config, &ckpt.params, &audio, a.seed)?;
    let path = emit_outputs(
        a.emit,
        &ckpt.config,
        &output,
        &stem_of(&a.input),
        &a.out,
        a.gl_iters,
        a.seed,
    )?;
    println!(
        "enhanced {} frames x {} mels -> {}",
        output.enhanced.frames(),
        output.enhanced.n_mels(),
        path.display()
    );
    Ok(EXIT_OK)
}

fn cmd_stream(a: StreamArgs) -> Result<i32, Error> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.input, "input wav")?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let audio = read_wav(&a.input)?;

    // File-fed streaming simulates real time; the utterance-level gain is
    // drawn exactly as in the batch path so outputs are comparable bit for
    // bit.
    let (_, gain) = melstream::dsp::peak_normalize(&audio, a.seed)?;
    let mut session = StreamSession::new(&ckpt.config, ckpt.params.clone(), gain)?;

    let hop = ckpt.config.frontend.stft.hop;
    let chunk = a.chunk.unwrap_or(hop).max(1);
    let start = std::time::Instant::now();
    let mut frames: Vec<Vec<f32>> = Vec::new();
    for block in audio.samples.chunks(chunk) {
        frames.extend(session.push_samples(block)?);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let n_frames = frames.len();

    let f_mel = ckpt.config.model.f_mel;
    let mut data = Vec::with_capacity(n_frames * f_mel);
    for fr in &frames {
        data.extend(fr.iter().map(|&v| v as f64));
    }
    let floor = ckpt.config.frontend.floor;
    let enhanced = melstream::dsp::LogMelSpectrogram::from_flat(n_frames, f_mel, data, floor);
    let output = EnhanceOutput {
        enhanced,
        input: melstream::dsp::LogMelSpectrogram::from_flat(0, f_mel, Vec::new(), floor),
        mu_trace: Some(session.mu_trace.clone()),
        gain: Some(gain),
    };
    let stem = format!("{}.stream", stem_of(&a.input));
    let path = emit_outputs(
        a.emit,
        &ckpt.config,
        &output,
        &stem,
        &a.out,
        a.gl_iters,
        a.seed,
    )?;

    let audio_s = audio.duration_seconds();
    println!("streamed {n_frames} frames -> {}", path.display());
    if n_frames > 0 {
        println!(
            "per-frame latency: {:.3} ms (mean)",
            1e3 * elapsed / n_frames as f64
        );
    }
    println!("rtf: {:.4}", elapsed / audio_s);
    Ok(EXIT_OK)
}

fn cmd_verify(a: VerifyArgs) -> Result<i32, Error> {
    let mut all_ok = true;
    let probe_all = matches!(a.probe, ProbeArg::All);

    if probe_all || matches!(a.probe, ProbeArg::Dsp) {
        all_ok &= verify_dsp(a.seed)?;
    }
    if probe_all || matches!(a.probe, ProbeArg::Gradcheck) {
        all_ok &= verify_gradcheck(a.seed, a.inject_grad_fault)?;
    }
    if probe_all || matches!(a.probe, ProbeArg::Causality) {
        all_ok &= verify_causality(a.mode.into(), a.seed)?;
    }
    if probe_all || matches!(a.probe, ProbeArg::Stream) {
        all_ok &= verify_stream_equivalence(a.seed)?;
    }

    if all_ok {
        println!("verify: all checks passed");
        Ok(EXIT_OK)
    } else {
        println!("verify: FAILED");
        Ok(EXIT_VALIDATION)
    }
}

fn report(name: &str, ok: bool, detail: String) -> bool {
    println!("{}: {} ({detail})", name, if ok { "PASS" } else { "FAIL" });
    ok
}

fn verify_dsp(seed: u64) -> Result<bool, Error> {
    use melstream::dsp::{istft, log_mel, mel_filterbank, stft, AudioBuffer};
    use rand_like::Lcg;

    let mut ok = true;
    // Round trip at 50% and 75% overlap.
    for (name, cfg) in [
        ("dsp.roundtrip.hop50", StftConfig::speech_enhancement_16k()),
        ("dsp.roundtrip.hop25", StftConfig::asr_16k()),
    ] {
        let mut lcg = Lcg::new(seed);
        let samples: Vec<f64> = (0..8192).map(|_| lcg.next_unit() * 0.8).collect();
        let audio = AudioBuffer::new(samples, 16000)?;
        let spec = stft(&audio, &cfg)?;
        let rec = istft(&spec)?;
        let lo = cfg.frame_len;
        let hi = rec.len() - cfg.frame_len;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in lo..hi {
            let d = rec.samples[i] - audio.samples[i];
            num += d * d;
            den += audio.samples[i] * audio.samples[i];
        }
        let rel = (num / den).sqrt();
        ok &= report(name, rel < 1e-6, format!("interior rel err {rel:.3e}"));
    }

    // Filterbank triangularity and non-negativity.
    let fb = mel_filterbank(80, 512, 16000, 0.0, 8000.0)?;
    let mut tri_ok = true;
    for m in 0..fb.n_mels {
        let row: Vec<f64> = fb.weights.row(m).iter().copied().collect();
        if row.iter().any(|&w| w < 0.0) {
            tri_ok = false;
        }
        let peak = row
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        for k in 1..=peak {
            if row[k] < row[k - 1] {
                tri_ok = false;
            }
        }
        for k in peak + 1..row.len() {
            if row[k] > row[k - 1] {
                tri_ok = false;
            }
        }
        if !row.iter().any(|&w| w > 0.0) {
            tri_ok = false;
        }
    }
    ok &= report(
        "dsp.filterbank.triangular",
        tri_ok,
        "80 filters, 257 bins".into(),
    );

    // log_mel against a brute-force oracle.
    let mut lcg = Lcg::new(seed ^ 0x51);
    let samples: Vec<f64> = (0..2048).map(|_| lcg.next_unit() * 0.5).collect();
    let audio = AudioBuffer::new(samples, 16000)?;
    let cfg = StftConfig::speech_enhancement_16k();
    let spec = stft(&audio, &cfg)?;
    let lm = log_mel(&spec, &fb, 1e-5)?;
    let mut max_err = 0.0f64;
    for t in 0..spec.frames() {
        for m in 0..fb.n_mels {
            let mut acc = 0.0;
            for k in 0..fb.n_bins() {
                let c = spec.values[(t, k)];
                acc += fb.weights[(m, k)] * (c.re * c.re + c.im * c.im);
            }
            let expected = acc.max(1e-5).ln();
            max_err = max_err.max((lm.values[(t, m)] - expected).abs());
        }
    }
    ok &= report(
        "dsp.logmel.oracle",
        max_err < 1e-10,
        format!("max abs err {max_err:.3e}"),
    );
    Ok(ok)
}

/// Small deterministic generator for the verify probes, independent of the
/// library's seeded rngs.
mod rand_like {
    pub struct Lcg(u64);
    impl Lcg {
        pub fn new(seed: u64) -> Self {
            Lcg(seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493))
        }
        pub fn next_unit(&mut self) -> f64 {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }
}

fn verify_gradcheck(seed: u64, inject_fault: bool) -> Result<bool, Error> {
    use melstream::training::finite_difference_check_with_fault;
    let mut ok = true;
    for (name, mode) in [
        ("gradcheck.online", Mode::Online),
        ("gradcheck.offline", Mode::Offline),
    ] {
        let cfg = ModelConfig::tiny(mode);
        let fault = if inject_fault { Some(0.5) } else { None };
        let report_data = finite_difference_check_with_fault(&cfg, seed, 3, 1e-5, 1e-4, fault)?;
        ok &= report(
            name,
            report_data.passed(),
            format!(
                "{} params, max rel err {:.3e} at {}",
                report_data.checked, report_data.max_rel_error, report_data.worst_array
            ),
        );
    }
    Ok(ok)
}

fn verify_causality(mode: Mode, seed: u64) -> Result<bool, Error> {
    use melstream::eval::causality_probe;
    use melstream::model::init_parameters;
    let cfg = ModelConfig::tiny(mode);
    let params = init_parameters(&cfg, seed)?;
    let frames = 24;
    let mut max_influence = 0.0f64;
    for t_cut in [0usize, 5, 10, 15, 22] {
        let inf = causality_probe(&cfg, &params, frames, t_cut, 20, seed)?;
        max_influence = max_influence.max(inf);
    }
    let ok = match mode {
        Mode::Online => max_influence == 0.0,
        Mode::Offline => max_influence > 0.0,
    };
    let name = match mode {
        Mode::Online => "causality.online",
        Mode::Offline => "causality.offline",
    };
    Ok(report(
        name,
        ok,
        format!("max future influence {max_influence:?}"),
    ))
}

fn verify_stream_equivalence(seed: u64) -> Result<bool, Error> {
    use melstream::features::frame_context_values;
    use melstream::model::{forward, forward_streaming, init_parameters, RecurrentState};
    use rand_like::Lcg;

    let cfg = ModelConfig::tiny(Mode::Online);
    let mut ok = true;
    for s in 0..10u64 {
        let params = init_parameters(&cfg, seed ^ s)?.cast::<f32>();
        let mut lcg = Lcg::new(seed.wrapping_add(s));
        let t = 100;
        let values: Vec<f32> = (0..t * cfg.f_mel)
            .map(|_| (lcg.next_unit() * 3.0) as f32)
            .collect();
        let framed = frame_context_values(&values, t, cfg.f_mel, &cfg.context);
        let batch = forward(&cfg, &params, &framed)?;
        let mut state = RecurrentState::new(&cfg)?;
        let mut streamed = Vec::with_capacity(t * cfg.f_mel);
        for ti in 0..t {
            streamed.extend(forward_streaming(
                &cfg,
                &params,
                &values[ti * cfg.f_mel..(ti + 1) * cfg.f_mel],
                &mut state,
            )?);
        }
        ok &= batch == streamed;
    }
    Ok(report(
        "stream.batch-equivalence",
        ok,
        "100 frames x 10 seeds, bit-exact".into(),
    ))
}
