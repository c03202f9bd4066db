use crate::error::{Error, Result};
use crate::features::ContextConfig;

/// Whether the sub-band layers run causally (streaming) or bidirectionally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Online,
    Offline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Online => "online",
            Mode::Offline => "offline",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "online" => Ok(Mode::Online),
            "offline" => Ok(Mode::Offline),
            other => Err(Error::InvalidConfig(format!("unknown mode: {other}"))),
        }
    }
}

/// Which normalization the pipeline applies before the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Utterance-level random gain shared by the noisy/clean pair.
    OfflineGain,
    /// Gain normalization plus recursive mean re-centering to a global mean.
    OnlineRecursive,
    /// Per-utterance per-frequency mean subtraction, ASR style.
    AsrUtteranceFrequency,
}

impl NormMode {
    pub fn name(self) -> &'static str {
        match self {
            NormMode::OfflineGain => "offline-gain",
            NormMode::OnlineRecursive => "online-recursive",
            NormMode::AsrUtteranceFrequency => "asr-utterance-frequency",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "offline-gain" => Ok(NormMode::OfflineGain),
            "online-recursive" => Ok(NormMode::OnlineRecursive),
            "asr-utterance-frequency" => Ok(NormMode::AsrUtteranceFrequency),
            other => Err(Error::InvalidConfig(format!("unknown norm mode: {other}"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub f_mel: usize,
    /// Feature dimension D carried through the network.
    pub hidden_d: usize,
    /// Number of interleaved full-band/sub-band blocks.
    pub n_blocks: usize,
    pub context: ContextConfig,
    pub mode: Mode,
    /// Hidden size per direction of the full-band BLSTM; two directions
    /// concatenate back to D.
    pub fullband_hidden_per_dir: usize,
    /// Hidden size of the sub-band LSTM (per direction when offline).
    pub subband_hidden: usize,
    pub norm_mode: NormMode,
}

impl ModelConfig {
    /// The reference full-scale online configuration: F_mel=80, D=192, 3 blocks,
    /// 96 per full-band direction, 192 sub-band, 15 past frames.
    pub fn reference_online() -> Self {
        Self {
            f_mel: 80,
            hidden_d: 192,
            n_blocks: 3,
            context: ContextConfig::online_reference(),
            mode: Mode::Online,
            fullband_hidden_per_dir: 96,
            subband_hidden: 192,
            norm_mode: NormMode::OnlineRecursive,
        }
    }

    /// The reference full-scale offline configuration: adds 15 future frames and
    /// bidirectional sub-band layers with a projection back to D.
    pub fn reference_offline() -> Self {
        Self {
            f_mel: 80,
            hidden_d: 192,
            n_blocks: 3,
            context: ContextConfig::offline_reference(),
            mode: Mode::Offline,
            fullband_hidden_per_dir: 96,
            subband_hidden: 192,
            norm_mode: NormMode::OfflineGain,
        }
    }

    /// Small configuration for tests and gradient verification.
    pub fn tiny(mode: Mode) -> Self {
        Self {
            f_mel: 4,
            hidden_d: 6,
            n_blocks: 1,
            context: ContextConfig {
                past_frames: 1,
                future_frames: if mode == Mode::Online { 0 } else { 1 },
                lower_freqs: 1,
                upper_freqs: 1,
            },
            mode,
            fullband_hidden_per_dir: 3,
            subband_hidden: 6,
            norm_mode: match mode {
                Mode::Online => NormMode::OnlineRecursive,
                Mode::Offline => NormMode::OfflineGain,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.f_mel == 0 || self.hidden_d == 0 || self.n_blocks == 0 {
            return Err(Error::InvalidConfig(
                "f_mel, hidden_d and n_blocks must all be positive".into(),
            ));
        }
        if self.fullband_hidden_per_dir * 2 != self.hidden_d {
            return Err(Error::InvalidConfig(format!(
                "two full-band directions of {} do not concatenate to D={}",
                self.fullband_hidden_per_dir, self.hidden_d
            )));
        }
        if self.subband_hidden == 0 {
            return Err(Error::InvalidConfig("subband_hidden must be positive".into()));
        }
        match self.mode {
            Mode::Online => {
                if self.context.future_frames != 0 {
                    return Err(Error::InvalidConfig(
                        "online mode requires future_frames = 0".into(),
                    ));
                }
                if self.subband_hidden != self.hidden_d {
                    return Err(Error::InvalidConfig(format!(
                        "online sub-band hidden size {} must equal D={} (no projection layer)",
                        self.subband_hidden, self.hidden_d
                    )));
                }
                if self.norm_mode == NormMode::AsrUtteranceFrequency {
                    return Err(Error::InvalidConfig(
                        "per-utterance ASR normalization needs the whole utterance; \
                         it is not available in online mode"
                            .into(),
                    ));
                }
            }
            Mode::Offline => {}
        }
        Ok(())
    }

    /// Whether the sub-band layers are bidirectional with a projection.
    pub fn subband_bidirectional(&self) -> bool {
        self.mode == Mode::Offline
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_configs_validate() {
        ModelConfig::reference_online().validate().unwrap();
        ModelConfig::reference_offline().validate().unwrap();
        ModelConfig::tiny(Mode::Online).validate().unwrap();
        ModelConfig::tiny(Mode::Offline).validate().unwrap();
    }

    #[test]
    fn zero_d_is_rejected() {
        let mut cfg = ModelConfig::reference_online();
        cfg.hidden_d = 0;
        cfg.fullband_hidden_per_dir = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn online_with_future_context_is_rejected() {
        let mut cfg = ModelConfig::reference_online();
        cfg.context.future_frames = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn online_with_asr_norm_is_rejected() {
        let mut cfg = ModelConfig::reference_online();
        cfg.norm_mode = NormMode::AsrUtteranceFrequency;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mismatched_fullband_halves_are_rejected() {
        let mut cfg = ModelConfig::reference_online();
        cfg.fullband_hidden_per_dir = 100;
        assert!(cfg.validate().is_err());
    }
}
