//! TOML configuration shared by the subcommands. Every key is optional.

use std::path::Path;

use gaitrt_core::features::{
    EvalMode, EvalProtocol, ModelConfig, ModelName, Preprocessing, ResNetArchPreset, Sampling, Trainer,
};
use gaitrt_core::synth::{CohortConfig, NoiseLevels};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub cohort: CohortSection,
    pub training: TrainingSection,
    pub session: SessionSection,
    pub realtime: RealtimeConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.realtime.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSection {
    pub n_subjects: Option<usize>,
    pub trials_per_subject: Option<usize>,
    pub trial_duration_s: Option<f64>,
    /// Multiplies the default sensor noise; 0 gives noise-free data.
    pub noise_scale: Option<f64>,
}

impl CohortSection {
    pub fn cohort_config(&self) -> CohortConfig {
        let d = CohortConfig::default();
        let s = self.noise_scale.unwrap_or(1.0);
        let n = NoiseLevels::default();
        CohortConfig {
            n_subjects: self.n_subjects.unwrap_or(d.n_subjects),
            trials_per_subject: self.trials_per_subject.unwrap_or(d.trials_per_subject),
            trial_duration_s: self.trial_duration_s.unwrap_or(d.trial_duration_s),
            noise: NoiseLevels {
                accel: n.accel * s,
                gyro: n.gyro * s,
                mag: n.mag * s,
                fsr: n.fsr * s,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolChoice {
    Intra,
    Inter,
    None,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub model: Option<String>,
    pub trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub arch: Option<ResNetArchPreset>,
    pub row_stride_ms: Option<usize>,
    pub settle_ms: Option<f64>,
    pub protocol: Option<ProtocolChoice>,
    pub k: Option<usize>,
}

impl TrainingSection {
    pub fn model_config(&self) -> Result<ModelConfig> {
        let name: ModelName = self
            .model
            .as_deref()
            .unwrap_or("GRF")
            .parse()
            .map_err(|e: gaitrt_core::features::FeatureError| PipelineError::Config(e.to_string()))?;
        Ok(ModelConfig::new(name))
    }

    pub fn trainer(&self, config: &ModelConfig) -> Trainer {
        let mut t = Trainer::for_config(config);
        if let Some(n) = self.trees {
            t.forest.n_trees = n;
        }
        if self.max_depth.is_some() {
            t.forest.max_depth = self.max_depth;
        }
        if let Some(e) = self.epochs {
            t.resnet.max_epochs = e;
        }
        if let Some(p) = self.patience {
            t.resnet.patience = p;
        }
        if let Some(b) = self.batch_size {
            t.resnet.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            t.resnet.learning_rate = lr;
        }
        if let Some(a) = self.arch {
            t.arch = a;
        }
        t
    }

    pub fn sampling(&self) -> Sampling {
        let d = Sampling::default();
        Sampling {
            row_stride_ms: self.row_stride_ms.unwrap_or(d.row_stride_ms),
            settle_ms: self.settle_ms.unwrap_or(d.settle_ms),
        }
    }

    /// `None` when cross-validation is switched off.
    pub fn protocol(&self, config: &ModelConfig, seed: u64) -> Option<EvalProtocol> {
        match self.protocol.unwrap_or(ProtocolChoice::Intra) {
            ProtocolChoice::None => None,
            ProtocolChoice::Inter => Some(EvalProtocol::inter(seed)),
            ProtocolChoice::Intra => {
                let mut p = EvalProtocol::intra_for(config, seed);
                if let Some(k) = self.k {
                    p.k = k;
                }
                debug_assert_eq!(p.mode, EvalMode::Intra);
                Some(p)
            }
        }
    }
}

/// How `dump --dataset` turns a stored trial into a packet stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    pub subject: String,
    pub trial: String,
    pub host_start_ms: u64,
    pub device_epoch_ms: u64,
    /// Device clocks of consecutive sensors differ by this much.
    pub device_clock_spread_ms: u64,
    pub latency_ms: u64,
    pub jitter_ms: u64,
    pub drop_probability: f64,
    pub seed: u64,
}

impl Default for SessionSection {
    fn default() -> Self {
        Self {
            subject: "S01".into(),
            trial: "T01".into(),
            host_start_ms: 1_000_000,
            device_epoch_ms: 1_700_000_000_000,
            device_clock_spread_ms: 5000,
            latency_ms: 3,
            jitter_ms: 0,
            drop_probability: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealtimeConfig {
    /// Ticks run this far behind the host clock so that interpolation has
    /// the packet after each tick.
    pub signal_delay_ms: u64,
    /// Nominal packet spacing, used to repair non-monotone device clocks.
    pub packet_interval_ms: u64,
    pub sensor_timeout_ms: u64,
    /// Live sessions end after this long.
    pub session_s: f64,
    /// Output smoothing; 0 disables it.
    pub smoothing_cutoff_hz: f64,
    pub smoothing_order: usize,
    /// Strike threshold as a fraction of the running maximum insole sum.
    pub strike_fraction: f64,
    pub strike_min_threshold: f64,
    pub imu_order: usize,
    pub imu_band_hz: [f64; 2],
    pub fsr_order: usize,
    pub fsr_cutoff_hz: f64,
    /// Inference falling this far behind the clock skips ticks.
    pub max_lag_ms: u64,
    pub packet_queue: usize,
    pub log_queue: usize,
    /// Predict every tick at session end instead of as it arrives.
    pub batch_at_end: bool,
}

impl Default for RealtimeConfig {
    fn default() -> Self {
        let p = Preprocessing::default();
        Self {
            signal_delay_ms: 50,
            packet_interval_ms: 40,
            sensor_timeout_ms: 2000,
            session_s: 20.0,
            smoothing_cutoff_hz: 6.0,
            smoothing_order: 2,
            strike_fraction: 0.1,
            strike_min_threshold: 0.05,
            imu_order: p.imu_order,
            imu_band_hz: p.imu_band_hz,
            fsr_order: p.fsr_order,
            fsr_cutoff_hz: p.fsr_cutoff_hz,
            max_lag_ms: 250,
            packet_queue: 4096,
            log_queue: 65_536,
            batch_at_end: false,
        }
    }
}

impl RealtimeConfig {
    pub fn preprocessing(&self) -> Preprocessing {
        Preprocessing {
            imu_order: self.imu_order,
            imu_band_hz: self.imu_band_hz,
            fsr_order: self.fsr_order,
            fsr_cutoff_hz: self.fsr_cutoff_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::Config(m.into()));
        if self.packet_interval_ms == 0 {
            return bad("packet_interval_ms must be positive");
        }
        if self.smoothing_cutoff_hz < 0.0 || self.smoothing_cutoff_hz >= 500.0 {
            return bad("smoothing_cutoff_hz must lie in [0, 500)");
        }
        if !(0.0..1.0).contains(&self.strike_fraction) {
            return bad("strike_fraction must lie in [0, 1)");
        }
        if self.packet_queue == 0 || self.log_queue == 0 {
            return bad("queue capacities must be positive");
        }
        if self.session_s <= 0.0 {
            return bad("session_s must be positive");
        }
        Ok(())
    }
}
