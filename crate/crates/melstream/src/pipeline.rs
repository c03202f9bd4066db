//! End-to-end wiring: frontend configuration, normalization-mode dispatch,
//! checkpoint files and the sample-in/frame-out streaming session.

use std::collections::HashMap;
use std::path::Path;

use crate::dsp::{
    log_mel, mel_filterbank, mel_to_waveform, peak_normalize, stft, AudioBuffer,
    LogMelSpectrogram, MelFilterbank, StftConfig, Window,
};
use crate::error::{Error, Result};
use crate::features::{
    asr_normalize, frame_context_values, online_normalize, online_normalize_step, NormState,
};
use crate::io::{read_named_tensors, write_named_tensors, NamedTensorFile, OPTIM_PREFIX};
use crate::model::config::{Mode, ModelConfig, NormMode};
use crate::model::forward::forward;
use crate::model::params::{Parameters, Tensor};
use crate::model::streaming::{forward_streaming, RecurrentState};

/// Waveform-to-log-mel frontend settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub stft: StftConfig,
    pub sample_rate: u32,
    pub f_min: f64,
    pub f_max: f64,
    pub floor: f64,
}

impl FrontendConfig {
    /// 32 ms / 16 ms framing, 0-8 kHz mel range.
    pub fn speech_enhancement() -> Self {
        Self {
            stft: StftConfig::speech_enhancement_16k(),
            sample_rate: 16000,
            f_min: 0.0,
            f_max: 8000.0,
            floor: 1e-5,
        }
    }

    /// 32 ms / 8 ms framing used when feeding an ASR stack.
    pub fn asr() -> Self {
        Self {
            stft: StftConfig::asr_16k(),
            ..Self::speech_enhancement()
        }
    }

    pub fn filterbank(&self, n_mels: usize) -> Result<MelFilterbank> {
        mel_filterbank(
            n_mels,
            self.stft.fft_size,
            self.sample_rate,
            self.f_min,
            self.f_max,
        )
    }
}

/// Online-normalization settings that travel with a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct NormSettings {
    /// Equivalent rectangular smoothing length L; alpha = (L-1)/(L+1).
    pub l_frames: usize,
    /// Dataset-level global mean M of the noisy log-mel-spectrogram.
    pub global_mean: f64,
}

impl Default for NormSettings {
    fn default() -> Self {
        Self {
            l_frames: 200,
            global_mean: 0.0,
        }
    }
}

/// Everything needed to run a trained model end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub frontend: FrontendConfig,
    pub norm: NormSettings,
}

impl PipelineConfig {
    pub fn new(model: ModelConfig, frontend: FrontendConfig, norm: NormSettings) -> Result<Self> {
        model.validate()?;
        frontend.stft.validate()?;
        let cfg = Self {
            model,
            frontend,
            norm,
        };
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let f = &self.frontend;
        format!(
            "format=melstream\n\
             mode={}\nnorm_mode={}\nf_mel={}\nhidden_d={}\nn_blocks={}\n\
             fullband_hidden_per_dir={}\nsubband_hidden={}\n\
             past_frames={}\nfuture_frames={}\nlower_freqs={}\nupper_freqs={}\n\
             frame_len={}\nhop={}\nfft_size={}\nwindow={}\nsample_rate={}\n\
             f_min={}\nf_max={}\nfloor={}\nnorm_l={}\nglobal_mean={}\n",
            m.mode.name(),
            m.norm_mode.name(),
            m.f_mel,
            m.hidden_d,
            m.n_blocks,
            m.fullband_hidden_per_dir,
            m.subband_hidden,
            m.context.past_frames,
            m.context.future_frames,
            m.context.lower_freqs,
            m.context.upper_freqs,
            f.stft.frame_len,
            f.stft.hop,
            f.stft.fft_size,
            f.stft.window.name(),
            f.sample_rate,
            f.f_min,
            f.f_max,
            f.floor,
            self.norm.l_frames,
            self.norm.global_mean,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |key: &str| -> Result<&String> {
            map.get(key)
                .ok_or_else(|| Error::Checkpoint(format!("config block missing key: {key}")))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|e| Error::Checkpoint(format!("bad {key}: {e}")))
        };
        let parse_f64 = |key: &str| -> Result<f64> {
            get(key)?
                .parse()
                .map_err(|e| Error::Checkpoint(format!("bad {key}: {e}")))
        };

        let model = ModelConfig {
            f_mel: parse_usize("f_mel")?,
            hidden_d: parse_usize("hidden_d")?,
            n_blocks: parse_usize("n_blocks")?,
            context: crate::features::ContextConfig {
                past_frames: parse_usize("past_frames")?,
                future_frames: parse_usize("future_frames")?,
                lower_freqs: parse_usize("lower_freqs")?,
                upper_freqs: parse_usize("upper_freqs")?,
            },
            mode: Mode::from_name(get("mode")?)?,
            fullband_hidden_per_dir: parse_usize("fullband_hidden_per_dir")?,
            subband_hidden: parse_usize("subband_hidden")?,
            norm_mode: NormMode::from_name(get("norm_mode")?)?,
        };
        let frontend = FrontendConfig {
            stft: StftConfig::new(
                parse_usize("frame_len")?,
                parse_usize("hop")?,
                parse_usize("fft_size")?,
                Window::from_name(get("window")?)?,
            )?,
            sample_rate: parse_usize("sample_rate")? as u32,
            f_min: parse_f64("f_min")?,
            f_max: parse_f64("f_max")?,
            floor: parse_f64("floor")?,
        };
        let norm = NormSettings {
            l_frames: parse_usize("norm_l")?,
            global_mean: parse_f64("global_mean")?,
        };
        PipelineConfig::new(model, frontend, norm)
    }
}

/// Write a checkpoint: config block, parameter arrays, and optionally the
/// optimizer moments under the reserved prefix.
pub fn save_checkpoint(
    path: &Path,
    cfg: &PipelineConfig,
    params: &Parameters<f32>,
    optimizer: Option<(&Parameters<f64>, &Parameters<f64>, u64)>,
) -> Result<()> {
    let mut owned: Vec<(String, Tensor<f32>)> = Vec::new();
    for (name, t) in params.arrays() {
        owned.push((name, t.clone()));
    }
    if let Some((m, v, step)) = optimizer {
        for (name, t) in m.arrays() {
            owned.push((format!("{OPTIM_PREFIX}m.{name}"), t.cast()));
        }
        for (name, t) in v.arrays() {
            owned.push((format!("{OPTIM_PREFIX}v.{name}"), t.cast()));
        }
        owned.push((
            format!("{OPTIM_PREFIX}step"),
            Tensor {
                dims: vec![1],
                data: vec![step as f32],
            },
        ));
    }
    let refs: Vec<(String, &Tensor<f32>)> =
        owned.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_named_tensors(path, &cfg.to_text(), &refs)
}

/// A loaded checkpoint: pipeline configuration and single-precision weights.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: PipelineConfig,
    pub params: Parameters<f32>,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = read_named_tensors(path)?;
    checkpoint_from_file(&file)
}

pub fn checkpoint_from_file(file: &NamedTensorFile) -> Result<Checkpoint> {
    let config = PipelineConfig::from_text(&file.config_text)?;
    let named: HashMap<String, Tensor<f32>> = file
        .arrays
        .iter()
        .filter(|(n, _)| !n.starts_with(OPTIM_PREFIX))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    let params = Parameters::from_named_arrays(&config.model, named)?;
    Ok(Checkpoint { config, params })
}

/// Arithmetic mean of the parameter arrays of several checkpoints. All
/// checkpoints must carry an identical config block; optimizer arrays are
/// ignored.
pub fn average_checkpoints(paths: &[impl AsRef<Path>]) -> Result<Checkpoint> {
    if paths.is_empty() {
        return Err(Error::Checkpoint("no checkpoints to average".into()));
    }
    let first = read_named_tensors(paths[0].as_ref())?;
    let config = PipelineConfig::from_text(&first.config_text)?;
    let mut sums: Vec<(String, Vec<usize>, Vec<f64>)> = first
        .arrays
        .iter()
        .filter(|(n, _)| !n.starts_with(OPTIM_PREFIX))
        .map(|(n, t)| {
            (
                n.clone(),
                t.dims.clone(),
                t.data.iter().map(|&v| v as f64).collect(),
            )
        })
        .collect();

    for p in &paths[1..] {
        let file = read_named_tensors(p.as_ref())?;
        if file.config_text != first.config_text {
            return Err(Error::Checkpoint(format!(
                "config mismatch between {} and {}",
                paths[0].as_ref().display(),
                p.as_ref().display()
            )));
        }
        for (name, dims, sum) in sums.iter_mut() {
            let t = file
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
            if &t.dims != dims {
                return Err(Error::Checkpoint(format!("dims mismatch for {name}")));
            }
            for (s, v) in sum.iter_mut().zip(t.data.iter()) {
                *s += *v as f64;
            }
        }
    }

    let k = paths.len() as f64;
    let named: HashMap<String, Tensor<f32>> = sums
        .into_iter()
        .map(|(n, dims, sum)| {
            (
                n,
                Tensor {
                    dims,
                    data: sum.into_iter().map(|v| (v / k) as f32).collect(),
                },
            )
        })
        .collect();
    let params = Parameters::from_named_arrays(&config.model, named)?;
    Ok(Checkpoint { config, params })
}

/// Input and target log-mels after the mode's normalization, ready for the
/// network. The mu trace is present in online-recursive mode.
#[derive(Debug, Clone)]
pub struct NormalizedPair {
    pub input: LogMelSpectrogram,
    pub target: LogMelSpectrogram,
    pub mu_trace: Option<Vec<f64>>,
    pub gain: Option<f64>,
}

/// Apply the configured normalization to a noisy/target waveform pair and
/// compute both log-mels.
pub fn normalize_pair(
    cfg: &PipelineConfig,
    noisy: &AudioBuffer,
    target: &AudioBuffer,
    fb: &MelFilterbank,
    gain_seed: u64,
) -> Result<NormalizedPair> {
    let logmel_of = |audio: &AudioBuffer| -> Result<LogMelSpectrogram> {
        log_mel(&stft(audio, &cfg.frontend.stft)?, fb, cfg.frontend.floor)
    };
    match cfg.model.norm_mode {
        NormMode::OfflineGain => {
            let (noisy_n, gain) = peak_normalize(noisy, gain_seed)?;
            let target_n = target.scaled(gain);
            Ok(NormalizedPair {
                input: logmel_of(&noisy_n)?,
                target: logmel_of(&target_n)?,
                mu_trace: None,
                gain: Some(gain),
            })
        }
        NormMode::OnlineRecursive => {
            let (noisy_n, gain) = peak_normalize(noisy, gain_seed)?;
            let target_n = target.scaled(gain);
            let y = logmel_of(&noisy_n)?;
            let x = logmel_of(&target_n)?;
            let mut state = NormState::new(cfg.norm.l_frames, cfg.norm.global_mean)?;
            let (y_norm, trace) = online_normalize(&y, &mut state)?;
            // The target is re-centered with the mu trace of the noisy input.
            let mut x_values = x.values;
            for (t, mu) in trace.iter().enumerate() {
                for f in 0..x_values.ncols() {
                    x_values[(t, f)] += cfg.norm.global_mean - mu;
                }
            }
            Ok(NormalizedPair {
                input: y_norm,
                target: LogMelSpectrogram {
                    values: x_values,
                    floor: x.floor,
                },
                mu_trace: Some(trace),
                gain: Some(gain),
            })
        }
        NormMode::AsrUtteranceFrequency => Ok(NormalizedPair {
            input: asr_normalize(&logmel_of(noisy)?),
            target: asr_normalize(&logmel_of(target)?),
            mu_trace: None,
            gain: None,
        }),
    }
}

/// Result of enhancing one utterance.
#[derive(Debug, Clone)]
pub struct EnhanceOutput {
    /// Enhanced log-mel in the network's normalized domain.
    pub enhanced: LogMelSpectrogram,
    /// The normalized network input.
    pub input: LogMelSpectrogram,
    pub mu_trace: Option<Vec<f64>>,
    pub gain: Option<f64>,
}

/// Normalize one noisy utterance per the configured mode, without a target.
pub fn normalize_input(
    cfg: &PipelineConfig,
    noisy: &AudioBuffer,
    fb: &MelFilterbank,
    gain_seed: u64,
) -> Result<(LogMelSpectrogram, Option<Vec<f64>>, Option<f64>)> {
    let logmel_of = |audio: &AudioBuffer| -> Result<LogMelSpectrogram> {
        log_mel(&stft(audio, &cfg.frontend.stft)?, fb, cfg.frontend.floor)
    };
    match cfg.model.norm_mode {
        NormMode::OfflineGain => {
            let (noisy_n, gain) = peak_normalize(noisy, gain_seed)?;
            Ok((logmel_of(&noisy_n)?, None, Some(gain)))
        }
        NormMode::OnlineRecursive => {
            let (noisy_n, gain) = peak_normalize(noisy, gain_seed)?;
            let y = logmel_of(&noisy_n)?;
            let mut state = NormState::new(cfg.norm.l_frames, cfg.norm.global_mean)?;
            let (y_norm, trace) = online_normalize(&y, &mut state)?;
            Ok((y_norm, Some(trace), Some(gain)))
        }
        NormMode::AsrUtteranceFrequency => Ok((asr_normalize(&logmel_of(noisy)?), None, None)),
    }
}

/// Run the single-precision network over an already-normalized log-mel.
pub fn run_network_f32(
    cfg: &ModelConfig,
    params: &Parameters<f32>,
    input: &LogMelSpectrogram,
) -> Result<LogMelSpectrogram> {
    let t = input.frames();
    let f = input.n_mels();
    let values32: Vec<f32> = input.values.iter().map(|&v| v as f32).collect();
    let framed = frame_context_values(&values32, t, f, &cfg.context);
    let out = forward(cfg, params, &framed)?;
    let values = ndarray::Array2::from_shape_vec(
        (t, f),
        out.into_iter().map(|v| v as f64).collect(),
    )
    .expect("forward output has t*f entries");
    Ok(LogMelSpectrogram {
        values,
        floor: input.floor,
    })
}

/// Enhance one utterance end to end (batch path).
pub fn enhance(
    cfg: &PipelineConfig,
    params: &Parameters<f32>,
    noisy: &AudioBuffer,
    gain_seed: u64,
) -> Result<EnhanceOutput> {
    let fb = cfg.frontend.filterbank(cfg.model.f_mel)?;
    let (input, mu_trace, gain) = normalize_input(cfg, noisy, &fb, gain_seed)?;
    let enhanced = run_network_f32(&cfg.model, params, &input)?;
    Ok(EnhanceOutput {
        enhanced,
        input,
        mu_trace,
        gain,
    })
}

/// Map an enhanced log-mel back to a waveform. Online-recursive outputs are
/// first shifted back by their mu trace; gain normalization is undone so the
/// result sits at the input's level.
pub fn enhanced_to_waveform(
    cfg: &PipelineConfig,
    output: &EnhanceOutput,
    iterations: usize,
    rng_seed: u64,
) -> Result<AudioBuffer> {
    if cfg.model.norm_mode == NormMode::AsrUtteranceFrequency {
        return Err(Error::ModeMismatch(
            "asr-normalized log-mels are zero-mean per frequency and cannot be \
             mapped back to a waveform"
                .into(),
        ));
    }
    let mut values = output.enhanced.values.clone();
    if let Some(trace) = &output.mu_trace {
        for (t, mu) in trace.iter().enumerate() {
            for f in 0..values.ncols() {
                values[(t, f)] += mu - cfg.norm.global_mean;
            }
        }
    }
    let logmel = LogMelSpectrogram {
        values,
        floor: output.enhanced.floor,
    };
    let fb = cfg.frontend.filterbank(cfg.model.f_mel)?;
    let audio = mel_to_waveform(
        &logmel,
        &fb,
        &cfg.frontend.stft,
        cfg.frontend.sample_rate,
        iterations,
        rng_seed,
    )?;
    match output.gain {
        Some(g) if g != 0.0 => Ok(audio.scaled(1.0 / g)),
        _ => Ok(audio),
    }
}

/// Reusable one-frame analysis: window, FFT, mel pooling and log. Produces
/// the same bits as `stft` + `log_mel` on the same samples.
struct FrameAnalyzer {
    fft: std::sync::Arc<dyn realfft::RealToComplex<f64>>,
    window: Vec<f64>,
    frame_buf: Vec<f64>,
    spectrum: Vec<realfft::num_complex::Complex64>,
    scratch: Vec<realfft::num_complex::Complex64>,
    fb: MelFilterbank,
    floor: f64,
    mel_row: Vec<f64>,
}

impl FrameAnalyzer {
    fn new(cfg: &FrontendConfig, fb: MelFilterbank) -> Self {
        let mut planner = realfft::RealFftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(cfg.stft.fft_size);
        let scratch_len = fft.get_scratch_len();
        Self {
            fft,
            window: cfg.stft.window.samples(cfg.stft.frame_len),
            frame_buf: vec![0.0; cfg.stft.fft_size],
            spectrum: vec![realfft::num_complex::Complex64::new(0.0, 0.0); cfg.stft.bins()],
            scratch: vec![realfft::num_complex::Complex64::new(0.0, 0.0); scratch_len],
            mel_row: vec![0.0; fb.n_mels],
            fb,
            floor: cfg.floor,
        }
    }

    fn analyze(&mut self, samples: &[f64]) -> &[f64] {
        let frame_len = self.window.len();
        for i in 0..frame_len {
            self.frame_buf[i] = samples[i] * self.window[i];
        }
        for v in self.frame_buf[frame_len..].iter_mut() {
            *v = 0.0;
        }
        self.fft
            .process_with_scratch(&mut self.frame_buf, &mut self.spectrum, &mut self.scratch)
            .expect("fft buffer sizes are fixed by construction");
        for m in 0..self.fb.n_mels {
            let mut acc = 0.0;
            for k in 0..self.fb.n_bins() {
                let w = self.fb.weights[(m, k)];
                if w != 0.0 {
                    acc += w * self.spectrum[k].norm_sqr();
                }
            }
            self.mel_row[m] = acc.max(self.floor).ln();
        }
        &self.mel_row
    }
}

/// Sample-in, frame-out streaming enhancement session for online models.
/// Keeps a bounded sample buffer, the recursive normalization state and the
/// recurrent network state; buffers are preallocated so the steady-state
/// per-frame path stays allocation-light.
pub struct StreamSession {
    cfg: PipelineConfig,
    params: Parameters<f32>,
    analyzer: FrameAnalyzer,
    gain: f64,
    norm_state: NormState,
    net_state: RecurrentState<f32>,
    sample_buf: Vec<f64>,
    frame32: Vec<f32>,
    pub frames_emitted: usize,
    pub mu_trace: Vec<f64>,
}

impl StreamSession {
    /// `gain` is the utterance-level gain to apply to incoming samples;
    /// use 1.0 for a pure stream. Online-recursive checkpoints expect the
    /// two-step normalization, so callers that know the peak ahead of time
    /// can pass the drawn gain.
    pub fn new(cfg: &PipelineConfig, params: Parameters<f32>, gain: f64) -> Result<Self> {
        if cfg.model.mode != Mode::Online {
            return Err(Error::ModeMismatch(
                "streaming requires an online checkpoint".into(),
            ));
        }
        if cfg.model.norm_mode != NormMode::OnlineRecursive {
            return Err(Error::ModeMismatch(
                "streaming requires the online-recursive normalization mode".into(),
            ));
        }
        let fb = cfg.frontend.filterbank(cfg.model.f_mel)?;
        Ok(Self {
            cfg: cfg.clone(),
            params,
            analyzer: FrameAnalyzer::new(&cfg.frontend, fb),
            gain,
            norm_state: NormState::new(cfg.norm.l_frames, cfg.norm.global_mean)?,
            net_state: RecurrentState::new(&cfg.model)?,
            sample_buf: Vec::with_capacity(2 * cfg.frontend.stft.frame_len),
            frame32: vec![0.0; cfg.model.f_mel],
            frames_emitted: 0,
            mu_trace: Vec::new(),
        })
    }

    /// Feed samples; emits one enhanced normalized-domain frame per full hop
    /// once the first analysis window is filled.
    pub fn push_samples(&mut self, samples: &[f64]) -> Result<Vec<Vec<f32>>> {
        let frame_len = self.cfg.frontend.stft.frame_len;
        let hop = self.cfg.frontend.stft.hop;
        self.sample_buf
            .extend(samples.iter().map(|s| s * self.gain));
        let mut out = Vec::new();
        while self.sample_buf.len() >= frame_len {
            let row = self.analyzer.analyze(&self.sample_buf[..frame_len]);
            let normalized = online_normalize_step(row, &mut self.norm_state)?;
            self.mu_trace.push(self.norm_state.mu);
            for (dst, v) in self.frame32.iter_mut().zip(normalized.iter()) {
                *dst = *v as f32;
            }
            let enhanced =
                forward_streaming(&self.cfg.model, &self.params, &self.frame32, &mut self.net_state)?;
            out.push(enhanced);
            self.frames_emitted += 1;
            self.sample_buf.drain(..hop);
        }
        Ok(out)
    }
}
