//! Model configurations, feature assembly, trial preprocessing, model
//! chaining and the cross-validation protocols.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{fit_forest_scaled, ForestError, ForestModel, ForestParams};
use crate::gait::{Foot, GaitError, StrideClock};
use crate::matrix::Matrix;
use crate::metrics::{compute_report, fold_aggregate, AggregateReport, MetricReport, MetricsError};
use crate::resnet::{train_moments, ResNetArch, ResNetError, ResNetModel, Tensor3, TrainConfig};
use crate::signal::{design_butterworth, resample_linear, FilterKind, IirFilter, SampleSeries, SignalError};
use crate::synth::{self, Dataset, SyntheticTrial, GRAVITY, IMU_AXES, JOINTS, N_FSR};

pub const STREAM_RATE_HZ: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error("misaligned streams: {0}")]
    Alignment(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("warmup incomplete: {0}")]
    WarmupIncomplete(String),
    #[error("unknown model configuration '{0}'")]
    UnknownConfig(String),
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    ResNet(#[from] ResNetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FeatureError {
    pub fn code(&self) -> &'static str {
        match self {
            FeatureError::MissingChannel(_) => "E_MISSING_CHANNEL",
            FeatureError::Alignment(_) => "E_ALIGNMENT",
            FeatureError::InsufficientData(_) => "E_INSUFFICIENT_DATA",
            FeatureError::WarmupIncomplete(_) => "E_WARMUP_INCOMPLETE",
            FeatureError::UnknownConfig(_) => "E_UNKNOWN_CONFIG",
            FeatureError::Model(_) => "E_MODEL",
            FeatureError::Signal(e) => e.code(),
            FeatureError::Gait(e) => e.code(),
            FeatureError::Forest(e) => e.code(),
            FeatureError::ResNet(e) => e.code(),
            FeatureError::Metrics(e) => e.code(),
            FeatureError::Io { .. } => "E_IO",
        }
    }
}

type Result<T> = std::result::Result<T, FeatureError>;

/// Which leg a role refers to. `Own` is the leg a unilateral model is
/// applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Own,
    Right,
    Left,
}

impl Side {
    pub fn resolve(self, leg: Foot) -> Foot {
        match self {
            Side::Own => leg,
            Side::Right => Foot::Right,
            Side::Left => Foot::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Shank,
    Foot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputRole {
    Imu { side: Side, segment: Segment, axis: usize },
    Fsr { side: Side, channel: usize },
    /// vGRF in N/kg.
    GrfMass(Side),
    Angle { joint: usize, side: Side },
    GcPercent,
    LeadFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputRole {
    /// vGRF in body weights.
    VgrfBw(Side),
    Angle { joint: usize, side: Side },
    Moment { joint: usize, side: Side },
}

/// IMU stream channel name.
pub fn sensor_channel(site: &str, axis: usize) -> String {
    format!("imu_{site}_{}", IMU_AXES[axis])
}

pub fn fsr_channel(foot: Foot, channel: usize) -> String {
    format!("fsr_{}{}", foot.suffix(), channel + 1)
}

pub fn vgrf_channel(foot: Foot) -> String {
    format!("vgrf_bw_{}", foot.suffix())
}

pub fn angle_channel(joint: usize, foot: Foot) -> String {
    format!("angle_{}_{}_deg", JOINTS[joint], foot.suffix())
}

pub fn moment_channel(joint: usize, foot: Foot) -> String {
    format!("moment_{}_{}_nm", JOINTS[joint], foot.suffix())
}

fn imu_site(foot: Foot, segment: Segment) -> &'static str {
    match (foot, segment) {
        (Foot::Right, Segment::Shank) => "rs",
        (Foot::Right, Segment::Foot) => "rf",
        (Foot::Left, Segment::Shank) => "ls",
        (Foot::Left, Segment::Foot) => "lf",
    }
}

impl InputRole {
    /// Source channel and multiplier; `None` for GC% and the flag.
    fn channel(self, leg: Foot) -> Option<(String, f64)> {
        match self {
            InputRole::Imu { side, segment, axis } => {
                Some((sensor_channel(imu_site(side.resolve(leg), segment), axis), 1.0))
            }
            InputRole::Fsr { side, channel } => Some((fsr_channel(side.resolve(leg), channel), 1.0)),
            InputRole::GrfMass(side) => Some((vgrf_channel(side.resolve(leg)), GRAVITY)),
            InputRole::Angle { joint, side } => Some((angle_channel(joint, side.resolve(leg)), 1.0)),
            InputRole::GcPercent | InputRole::LeadFlag => None,
        }
    }

    pub fn name(self, leg: Foot) -> String {
        match self {
            InputRole::GcPercent => "gc_percent".into(),
            InputRole::LeadFlag => "lead_flag".into(),
            InputRole::GrfMass(side) => format!("vgrf_nkg_{}", side.resolve(leg).suffix()),
            other => other.channel(leg).expect("stream-backed role").0,
        }
    }
}

impl OutputRole {
    pub fn channel(self, leg: Foot) -> String {
        match self {
            OutputRole::VgrfBw(side) => vgrf_channel(side.resolve(leg)),
            OutputRole::Angle { joint, side } => angle_channel(joint, side.resolve(leg)),
            OutputRole::Moment { joint, side } => moment_channel(joint, side.resolve(leg)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelName {
    Grf,
    W1,
    W2,
    W3,
    W4,
    W5,
    W6,
    MAnkle,
    M5Joint,
}

impl ModelName {
    pub const ALL: [ModelName; 9] = [
        ModelName::Grf,
        ModelName::W1,
        ModelName::W2,
        ModelName::W3,
        ModelName::W4,
        ModelName::W5,
        ModelName::W6,
        ModelName::MAnkle,
        ModelName::M5Joint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Grf => "GRF",
            ModelName::W1 => "W1",
            ModelName::W2 => "W2",
            ModelName::W3 => "W3",
            ModelName::W4 => "W4",
            ModelName::W5 => "W5",
            ModelName::W6 => "W6",
            ModelName::MAnkle => "M_ankle",
            ModelName::M5Joint => "M_5joint",
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self> {
        ModelName::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| FeatureError::UnknownConfig(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Forest,
    ResNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: ModelName,
    pub inputs: Vec<InputRole>,
    pub outputs: Vec<OutputRole>,
    /// Samples per input window.
    pub window: usize,
}

const ANKLE: usize = 4;

fn leg_imus(side: Side) -> Vec<InputRole> {
    let mut v = Vec::with_capacity(18);
    for segment in [Segment::Shank, Segment::Foot] {
        for axis in 0..9 {
            v.push(InputRole::Imu { side, segment, axis });
        }
    }
    v
}

impl ModelConfig {
    pub fn new(name: ModelName) -> Self {
        use InputRole::*;
        let own_angles = |out: fn(usize, Side) -> OutputRole| (0..5).map(|j| out(j, Side::Own)).collect::<Vec<_>>();
        let both = |out: fn(usize, Side) -> OutputRole, joints: &[usize]| {
            let mut v = Vec::new();
            for side in [Side::Right, Side::Left] {
                for &j in joints {
                    v.push(out(j, side));
                }
            }
            v
        };
        let angle = |joint, side| OutputRole::Angle { joint, side };
        let moment = |joint, side| OutputRole::Moment { joint, side };
        let uni = |grf: bool| {
            let mut v = leg_imus(Side::Own);
            if grf {
                v.push(GrfMass(Side::Own));
            }
            v.extend([GcPercent, LeadFlag]);
            v
        };
        let bi = || {
            let mut v = leg_imus(Side::Right);
            v.extend(leg_imus(Side::Left));
            v.extend([GrfMass(Side::Right), GrfMass(Side::Left), GcPercent, LeadFlag]);
            v
        };
        let (inputs, outputs, window) = match name {
            ModelName::Grf => {
                let mut v: Vec<InputRole> = (0..N_FSR).map(|c| Fsr { side: Side::Own, channel: c }).collect();
                v.push(GcPercent);
                (v, vec![OutputRole::VgrfBw(Side::Own)], 1)
            }
            ModelName::W1 => (uni(false), vec![angle(ANKLE, Side::Own)], 1),
            ModelName::W2 => (uni(true), vec![angle(ANKLE, Side::Own)], 1),
            ModelName::W3 => (bi(), both(angle, &[ANKLE]), 1),
            ModelName::W4 => (uni(false), own_angles(angle), 1),
            ModelName::W5 => (uni(true), own_angles(angle), 1),
            ModelName::W6 => (bi(), both(angle, &[0, 1, 2, 3, 4]), 1),
            ModelName::MAnkle => (
                vec![
                    Angle { joint: ANKLE, side: Side::Right },
                    Angle { joint: ANKLE, side: Side::Left },
                    GrfMass(Side::Right),
                    GrfMass(Side::Left),
                    GcPercent,
                    LeadFlag,
                ],
                both(moment, &[ANKLE]),
                10,
            ),
            ModelName::M5Joint => {
                let mut v: Vec<InputRole> = (0..5).map(|j| Angle { joint: j, side: Side::Own }).collect();
                v.extend([GrfMass(Side::Own), GcPercent, LeadFlag]);
                (v, own_angles(moment), 10)
            }
        };
        Self {
            name,
            inputs,
            outputs,
            window,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn family(&self) -> Family {
        if self.window > 1 {
            Family::ResNet
        } else {
            Family::Forest
        }
    }

    /// Whether the model is applied per leg (roles relative to `Own`).
    pub fn unilateral(&self) -> bool {
        let own = |s: Side| s == Side::Own;
        self.outputs.iter().any(|o| match *o {
            OutputRole::VgrfBw(s) | OutputRole::Angle { side: s, .. } | OutputRole::Moment { side: s, .. } => own(s),
        })
    }

    pub fn uses_flag(&self) -> bool {
        self.inputs.contains(&InputRole::LeadFlag)
    }

    pub fn input_names(&self, leg: Foot) -> Vec<String> {
        self.inputs.iter().map(|r| r.name(leg)).collect()
    }

    pub fn output_names(&self, leg: Foot) -> Vec<String> {
        self.outputs.iter().map(|r| r.channel(leg)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Column(usize, f64),
    Gc,
    Flag,
}

/// A configuration's inputs resolved against a concrete channel list.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayout {
    sources: Vec<Source>,
}

impl FeatureLayout {
    pub fn compile(config: &ModelConfig, channels: &[String], leg: Foot) -> Result<Self> {
        let sources = config
            .inputs
            .iter()
            .map(|role| match role {
                InputRole::GcPercent => Ok(Source::Gc),
                InputRole::LeadFlag => Ok(Source::Flag),
                r => {
                    let (name, scale) = r.channel(leg).expect("stream-backed role");
                    channels
                        .iter()
                        .position(|c| *c == name)
                        .map(|i| Source::Column(i, scale))
                        .ok_or(FeatureError::MissingChannel(name))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sources })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn fill(&self, frame: &[f64], gc: f64, flag: f64, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(&self.sources) {
            *o = match *s {
                Source::Column(i, k) => frame[i] * k,
                Source::Gc => gc,
                Source::Flag => flag,
            };
        }
    }
}

/// One feature row per stream sample, in the configuration's input order.
pub fn assemble_features(
    config: &ModelConfig,
    streams: &SampleSeries,
    leg: Foot,
    gc_percent: &[f64],
    flag: &[f64],
) -> Result<Matrix> {
    if (streams.rate_hz() - STREAM_RATE_HZ).abs() > 1e-9 {
        return Err(FeatureError::Alignment(format!(
            "streams sampled at {} Hz, expected {STREAM_RATE_HZ}",
            streams.rate_hz()
        )));
    }
    if gc_percent.len() != streams.len() || flag.len() != streams.len() {
        return Err(FeatureError::Alignment(format!(
            "{} stream rows, {} GC% values, {} flags",
            streams.len(),
            gc_percent.len(),
            flag.len()
        )));
    }
    let layout = FeatureLayout::compile(config, streams.channels(), leg)?;
    let mut out = Matrix::zeros(streams.len(), layout.len());
    for i in 0..streams.len() {
        layout.fill(streams.row(i), gc_percent[i], flag[i], out.row_mut(i));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub imu_order: usize,
    pub imu_band_hz: [f64; 2],
    pub fsr_order: usize,
    pub fsr_cutoff_hz: f64,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            imu_order: 5,
            imu_band_hz: [0.2, 10.0],
            fsr_order: 5,
            fsr_cutoff_hz: 3.0,
        }
    }
}

pub fn insole_stream_channels() -> Vec<String> {
    let mut c = synth::insole_channels(Foot::Right);
    c.extend(synth::insole_channels(Foot::Left));
    c
}

pub fn imu_stream_channels() -> Vec<String> {
    synth::IMU_SITES.iter().flat_map(|s| synth::imu_channels(s)).collect()
}

/// Causal filters for the 1 kHz insole and IMU frames.
#[derive(Debug, Clone)]
pub struct SensorFilters {
    pub fsr: IirFilter,
    pub imu: IirFilter,
    primed: bool,
}

impl SensorFilters {
    pub fn new(pre: &Preprocessing) -> Result<Self> {
        Ok(Self {
            fsr: design_butterworth(pre.fsr_order, FilterKind::Lowpass, &[pre.fsr_cutoff_hz], STREAM_RATE_HZ)?,
            imu: design_butterworth(pre.imu_order, FilterKind::Bandpass, &pre.imu_band_hz, STREAM_RATE_HZ)?,
            primed: false,
        })
    }

    /// Filters one 1 kHz frame of 16 insole and 36 IMU values in place. The
    /// first frame sets the filter state to its steady state.
    pub fn process(&mut self, fsr: &mut [f64], imu: &mut [f64]) -> Result<()> {
        if !self.primed {
            self.fsr.prime(fsr);
            self.imu.prime(imu);
            self.primed = true;
        }
        self.fsr.process_frame(fsr)?;
        self.imu.process_frame(imu)?;
        Ok(())
    }
}

/// A trial at 1 kHz: filtered sensors followed by ground-truth targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTrial {
    pub subject_id: String,
    pub trial_id: String,
    pub mass_kg: f64,
    pub streams: SampleSeries,
    /// Heel-strike times per foot, `[right, left]`.
    pub strikes: [Vec<f64>; 2],
}

pub fn target_channels() -> Vec<String> {
    let mut c = vec![vgrf_channel(Foot::Right), vgrf_channel(Foot::Left)];
    for foot in Foot::BOTH {
        c.extend((0..5).map(|j| angle_channel(j, foot)));
    }
    for foot in Foot::BOTH {
        c.extend((0..5).map(|j| moment_channel(j, foot)));
    }
    c
}

pub fn prepare_trial(trial: &SyntheticTrial, mass_kg: f64, pre: &Preprocessing) -> Result<PreparedTrial> {
    let fsr = concat(&trial.insoles)?;
    let imu = concat(&trial.imus)?;
    let fsr = resample_linear(&fsr, STREAM_RATE_HZ)?;
    let imu = resample_linear(&imu, STREAM_RATE_HZ)?;
    let truth = resample_linear(&trial.truth, STREAM_RATE_HZ)?;
    if fsr.start_ms() != truth.start_ms() || imu.start_ms() != truth.start_ms() {
        return Err(FeatureError::Alignment("sensor and ground-truth streams start apart".into()));
    }
    let n = fsr.len().min(imu.len()).min(truth.len());
    let targets = target_channels();
    let truth_idx: Vec<usize> = targets
        .iter()
        .map(|c| {
            truth
                .channel_index(&format!("gt_{c}"))
                .ok_or_else(|| FeatureError::MissingChannel(format!("gt_{c}")))
        })
        .collect::<Result<_>>()?;
    let mut channels = fsr.channels().to_vec();
    channels.extend(imu.channels().iter().cloned());
    channels.extend(targets);
    let mut data = Matrix::zeros(n, channels.len());
    let mut filters = SensorFilters::new(pre)?;
    let (nf, ni) = (fsr.n_channels(), imu.n_channels());
    for i in 0..n {
        let row = data.row_mut(i);
        row[..nf].copy_from_slice(fsr.row(i));
        row[nf..nf + ni].copy_from_slice(imu.row(i));
        let (a, b) = row.split_at_mut(nf);
        filters.process(a, &mut b[..ni])?;
        for (k, &c) in truth_idx.iter().enumerate() {
            row[nf + ni + k] = truth.row(i)[c];
        }
    }
    Ok(PreparedTrial {
        subject_id: trial.subject_id.clone(),
        trial_id: trial.trial_id.clone(),
        mass_kg,
        streams: SampleSeries::new(truth.start_ms(), STREAM_RATE_HZ, channels, data)?,
        strikes: [trial.strikes(Foot::Right), trial.strikes(Foot::Left)],
    })
}

fn concat(parts: &[SampleSeries]) -> Result<SampleSeries> {
    let first = parts.first().ok_or_else(|| FeatureError::InsufficientData("no sensor series".into()))?;
    let n = first.len();
    let mut channels = Vec::new();
    let mut cols = 0;
    for p in parts {
        if p.len() != n || p.start_ms() != first.start_ms() || p.rate_hz() != first.rate_hz() {
            return Err(FeatureError::Alignment(format!(
                "sensor series {} does not share the first series' time base",
                p.channels().first().map_or("", |s| s.as_str())
            )));
        }
        channels.extend(p.channels().iter().cloned());
        cols += p.n_channels();
    }
    let mut data = Matrix::zeros(n, cols);
    for i in 0..n {
        let mut c = 0;
        let row = data.row_mut(i);
        for p in parts {
            row[c..c + p.n_channels()].copy_from_slice(p.row(i));
            c += p.n_channels();
        }
    }
    Ok(SampleSeries::new(first.start_ms(), first.rate_hz(), channels, data)?)
}

pub fn prepare_dataset(dataset: &Dataset, pre: &Preprocessing) -> Result<Vec<PreparedTrial>> {
    dataset
        .trials
        .iter()
        .map(|t| {
            let mass = dataset
                .subject(&t.subject_id)
                .ok_or_else(|| FeatureError::InsufficientData(format!("no metadata for subject {}", t.subject_id)))?
                .mass_kg;
            prepare_trial(t, mass, pre)
        })
        .collect()
}

/// Which training rows are drawn from the 1 kHz streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    /// Spacing of target instants within a stride.
    pub row_stride_ms: usize,
    /// Strides starting before this time are skipped (filter settling).
    pub settle_ms: f64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            row_stride_ms: 10,
            settle_ms: 2000.0,
        }
    }
}

/// Feature rows (flattened windows) with targets and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub config: ModelConfig,
    /// `n x (window * n_inputs)`, window samples oldest first.
    pub x: Matrix,
    pub y: Matrix,
    /// Gait-cycle id of each row; unique across the set.
    pub cycle: Vec<u32>,
    pub subject: Vec<u32>,
    pub time_ms: Vec<f64>,
    /// Foot whose strikes delimit the row's cycle.
    pub lead: Vec<Foot>,
    /// Leg a unilateral row describes; the right leg for bilateral rows.
    pub leg: Vec<Foot>,
    pub subjects: Vec<String>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn n_cycles(&self) -> usize {
        self.cycle.iter().collect::<BTreeSet<_>>().len()
    }

    pub fn windows(&self, rows: &[usize]) -> Result<Tensor3> {
        let x = self.x.select_rows(rows);
        Ok(Tensor3::from_vec(
            rows.len(),
            self.config.window,
            self.config.n_inputs(),
            x.as_slice().to_vec(),
        )?)
    }
}

/// Offline GC% of `t` on the stride of `strikes` containing it.
fn stride_of(strikes: &[f64], t: f64) -> Option<(f64, f64)> {
    let i = strikes.partition_point(|&s| s <= t);
    (i >= 1 && i < strikes.len()).then(|| (strikes[i - 1], strikes[i]))
}

/// Rows of every complete stride of every lead foot. Unilateral models get
/// one row per leg, GRF rows only the lead leg with its own clock.
pub fn build_samples(config: &ModelConfig, trials: &[PreparedTrial], sampling: &Sampling) -> Result<SampleSet> {
    if sampling.row_stride_ms == 0 {
        return Err(FeatureError::InsufficientData("row stride must be positive".into()));
    }
    let w = config.window;
    let width = w * config.n_inputs();
    let mut x = Matrix::with_cols(width);
    let mut y = Matrix::with_cols(config.n_outputs());
    let (mut cycle, mut subject, mut time_ms) = (Vec::new(), Vec::new(), Vec::new());
    let (mut leads, mut legs_of) = (Vec::new(), Vec::new());
    let mut subjects: Vec<String> = Vec::new();
    let mut next_cycle = 0u32;
    let mut row = vec![0.0; width];
    let mut target = vec![0.0; config.n_outputs()];
    let grf = config.name == ModelName::Grf;
    for trial in trials {
        let s_idx = match subjects.iter().position(|s| *s == trial.subject_id) {
            Some(i) => i,
            None => {
                subjects.push(trial.subject_id.clone());
                subjects.len() - 1
            }
        };
        let streams = &trial.streams;
        let t0 = streams.start_ms();
        let legs: Vec<Foot> = if config.unilateral() { Foot::BOTH.to_vec() } else { vec![Foot::Right] };
        let layouts: Vec<FeatureLayout> = legs
            .iter()
            .map(|&leg| FeatureLayout::compile(config, streams.channels(), leg))
            .collect::<Result<_>>()?;
        let out_idx: Vec<Vec<usize>> = legs
            .iter()
            .map(|&leg| {
                config
                    .output_names(leg)
                    .iter()
                    .map(|c| streams.channel_index(c).ok_or_else(|| FeatureError::MissingChannel(c.clone())))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        for lead in Foot::BOTH {
            let strikes = &trial.strikes[lead.index()];
            for pair in strikes.windows(2) {
                let (s0, s1) = (pair[0], pair[1]);
                if s0 < sampling.settle_ms || s0 - (w as f64 - 1.0) < t0 {
                    continue;
                }
                let last_row = streams.len() as f64 - 1.0 + t0;
                if s1 > last_row {
                    continue;
                }
                let id = next_cycle;
                next_cycle += 1;
                let mut t = s0;
                while t < s1 {
                    for (li, &leg) in legs.iter().enumerate() {
                        if grf && leg != lead {
                            continue;
                        }
                        let flag = if config.unilateral() { (leg == lead) as u8 } else { (lead == Foot::Right) as u8 };
                        for k in 0..w {
                            let tk = t - (w - 1 - k) as f64;
                            let i = (tk - t0).round() as usize;
                            let gc = match stride_of(strikes, tk) {
                                Some((a, b)) => 100.0 * (tk - a) / (b - a),
                                None => 0.0,
                            };
                            let n_in = config.n_inputs();
                            layouts[li].fill(streams.row(i), gc, flag as f64, &mut row[k * n_in..(k + 1) * n_in]);
                        }
                        let i = (t - t0).round() as usize;
                        for (o, &c) in target.iter_mut().zip(&out_idx[li]) {
                            *o = streams.row(i)[c];
                        }
                        x.push_row(&row);
                        y.push_row(&target);
                        cycle.push(id);
                        subject.push(s_idx as u32);
                        time_ms.push(t);
                        leads.push(lead);
                        legs_of.push(leg);
                    }
                    t += sampling.row_stride_ms as f64;
                }
            }
        }
    }
    if x.rows() == 0 {
        return Err(FeatureError::InsufficientData("no complete stride after settling".into()));
    }
    Ok(SampleSet {
        config: config.clone(),
        x,
        y,
        cycle,
        subject,
        time_ms,
        lead: leads,
        leg: legs_of,
        subjects,
    })
}

/// Shared interface of the trained model families. `time_ms` and `leg`
/// identify the sample being predicted; learned models ignore them.
pub trait Predictor: Send + Sync {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn window(&self) -> usize;
    /// `window` holds `window() * n_inputs()` values, oldest sample first.
    fn predict(&self, time_ms: f64, leg: Foot, window: &[f64], out: &mut [f64]) -> Result<()>;
}

impl Predictor for ForestModel {
    fn n_inputs(&self) -> usize {
        self.n_features
    }

    fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    fn window(&self) -> usize {
        1
    }

    fn predict(&self, _time_ms: f64, _leg: Foot, window: &[f64], out: &mut [f64]) -> Result<()> {
        Ok(self.predict_row(window, out)?)
    }
}

impl Predictor for ResNetModel {
    fn n_inputs(&self) -> usize {
        self.arch.n_in
    }

    fn n_outputs(&self) -> usize {
        self.arch.n_out
    }

    fn window(&self) -> usize {
        self.arch.window
    }

    fn predict(&self, _time_ms: f64, _leg: Foot, window: &[f64], out: &mut [f64]) -> Result<()> {
        let x = Tensor3::from_vec(1, self.arch.window, self.arch.n_in, window.to_vec())?;
        let p = ResNetModel::predict(self, &x)?;
        out.copy_from_slice(p.row(0));
        Ok(())
    }
}

/// A trained model together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Forest(ForestModel),
    ResNet(ResNetModel),
}

const CONFIG_KEY: &str = "config";

impl TrainedModel {
    pub fn config_name(&self) -> Result<ModelName> {
        let meta = match self {
            TrainedModel::Forest(m) => &m.metadata,
            TrainedModel::ResNet(m) => &m.metadata,
        };
        meta.get(CONFIG_KEY)
            .ok_or_else(|| FeatureError::Model("model file lacks a configuration name".into()))?
            .parse()
    }

    pub fn config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig::new(self.config_name()?))
    }

    pub fn predictor(&self) -> &dyn Predictor {
        match self {
            TrainedModel::Forest(m) => m,
            TrainedModel::ResNet(m) => m,
        }
    }

    pub fn into_predictor(self) -> Box<dyn Predictor> {
        match self {
            TrainedModel::Forest(m) => Box::new(m),
            TrainedModel::ResNet(m) => Box::new(m),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            TrainedModel::Forest(m) => m.to_bytes(),
            TrainedModel::ResNet(m) => m.to_json().into_bytes(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.first() == Some(&b'{') {
            let s = std::str::from_utf8(bytes).map_err(|e| FeatureError::Model(e.to_string()))?;
            Ok(TrainedModel::ResNet(ResNetModel::from_json(s)?))
        } else {
            Ok(TrainedModel::Forest(ForestModel::from_bytes(bytes)?))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub forest: ForestParams,
    pub arch: ResNetArchPreset,
    pub resnet: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResNetArchPreset {
    Standard,
    Compact,
}

impl Trainer {
    pub fn for_config(config: &ModelConfig) -> Self {
        Self {
            forest: if config.name == ModelName::Grf {
                ForestParams::grf_default()
            } else {
                ForestParams::angle_default()
            },
            arch: ResNetArchPreset::Compact,
            resnet: TrainConfig::default(),
        }
    }

    pub fn arch(&self, config: &ModelConfig) -> ResNetArch {
        let a = match self.arch {
            ResNetArchPreset::Standard => ResNetArch::standard(config.n_inputs(), config.n_outputs()),
            ResNetArchPreset::Compact => ResNetArch::compact(config.n_inputs(), config.n_outputs()),
        };
        ResNetArch {
            window: config.window,
            ..a
        }
    }

    /// Trains on the given rows of `samples`.
    pub fn train(&self, samples: &SampleSet, rows: &[usize], seed: u64) -> Result<TrainedModel> {
        Ok(self.train_counted(samples, rows, seed)?.0)
    }

    /// Like [`Trainer::train`], also returning how many rows reached the
    /// fitting routines.
    pub fn train_counted(&self, samples: &SampleSet, rows: &[usize], seed: u64) -> Result<(TrainedModel, usize)> {
        let config = &samples.config;
        let y = samples.y.select_rows(rows);
        let (mut model, seen) = match config.family() {
            Family::Forest => {
                let x = samples.x.select_rows(rows);
                (TrainedModel::Forest(fit_forest_scaled(&x, &y, &self.forest, seed)?), x.rows())
            }
            Family::ResNet => {
                let x = samples.windows(rows)?;
                let groups: Vec<u64> = rows.iter().map(|&r| samples.cycle[r] as u64).collect();
                let (m, _) = train_moments(&x, &y, &groups, &self.arch(config), &self.resnet, seed)?;
                (TrainedModel::ResNet(m), x.batch())
            }
        };
        let meta = match &mut model {
            TrainedModel::Forest(m) => &mut m.metadata,
            TrainedModel::ResNet(m) => &mut m.metadata,
        };
        meta.insert(CONFIG_KEY.into(), config.name.as_str().into());
        meta.insert("inputs".into(), config.input_names(Foot::Right).join(","));
        meta.insert("outputs".into(), config.output_names(Foot::Right).join(","));
        meta.insert("grf_input_units".into(), "N/kg".into());
        Ok((model, seen))
    }
}

pub fn predict_rows(model: &TrainedModel, samples: &SampleSet, rows: &[usize]) -> Result<Matrix> {
    Ok(match model {
        TrainedModel::Forest(m) => m.predict(&samples.x.select_rows(rows))?,
        TrainedModel::ResNet(m) => m.predict(&samples.windows(rows)?)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Intra,
    Inter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub mode: EvalMode,
    /// Fold count in intra mode.
    pub k: usize,
    pub seed: u64,
}

impl EvalProtocol {
    /// k = 5 for GRF and angle models, 4 for moment models.
    pub fn intra_for(config: &ModelConfig, seed: u64) -> Self {
        Self {
            mode: EvalMode::Intra,
            k: if config.family() == Family::ResNet { 4 } else { 5 },
            seed,
        }
    }

    pub fn inter(seed: u64) -> Self {
        Self {
            mode: EvalMode::Inter,
            k: 0,
            seed,
        }
    }
}

/// Provenance of one fold's training and test rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FoldAudit {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub train_cycles: BTreeSet<u32>,
    pub test_cycles: BTreeSet<u32>,
    pub train_subjects: BTreeSet<u32>,
    pub test_subjects: BTreeSet<u32>,
    /// Rows handed to scaler fitting and model training.
    pub rows_seen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub label: String,
    /// One report per output, in configuration order.
    pub reports: Vec<MetricReport>,
    pub audit: FoldAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub config: ModelName,
    pub mode: EvalMode,
    pub outputs: Vec<String>,
    pub folds: Vec<FoldResult>,
    pub aggregate: Vec<AggregateReport>,
}

impl ProtocolResult {
    /// Mean over folds of the per-fold mean across outputs of `metric`.
    pub fn mean_over_outputs(&self, metric: fn(&MetricReport) -> Option<f64>) -> Option<f64> {
        let per_fold: Vec<f64> = self
            .folds
            .iter()
            .map(|f| {
                let v: Vec<f64> = f.reports.iter().filter_map(metric).collect();
                (v.len() == f.reports.len()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect::<Option<_>>()?;
        Some(per_fold.iter().sum::<f64>() / per_fold.len() as f64)
    }
}

/// Test-row groups per fold: shuffled gait cycles in `k` near-equal parts,
/// or one subject per fold.
pub fn fold_partition(protocol: &EvalProtocol, samples: &SampleSet) -> Result<Vec<(String, Vec<usize>)>> {
    match protocol.mode {
        EvalMode::Intra => {
            let mut cycles: Vec<u32> = samples.cycle.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
            if protocol.k < 2 || cycles.len() < protocol.k {
                return Err(FeatureError::InsufficientData(format!(
                    "{} gait cycles for k = {}",
                    cycles.len(),
                    protocol.k
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
            cycles.shuffle(&mut rng);
            let (base, extra) = (cycles.len() / protocol.k, cycles.len() % protocol.k);
            let mut fold_of: BTreeMap<u32, usize> = BTreeMap::new();
            let mut start = 0;
            for f in 0..protocol.k {
                let size = base + usize::from(f < extra);
                for &c in &cycles[start..start + size] {
                    fold_of.insert(c, f);
                }
                start += size;
            }
            let mut folds = vec![Vec::new(); protocol.k];
            for (i, c) in samples.cycle.iter().enumerate() {
                folds[fold_of[c]].push(i);
            }
            Ok(folds
                .into_iter()
                .enumerate()
                .map(|(f, rows)| (format!("fold{}", f + 1), rows))
                .collect())
        }
        EvalMode::Inter => {
            let present: BTreeSet<u32> = samples.subject.iter().copied().collect();
            if present.len() < 2 {
                return Err(FeatureError::InsufficientData(format!(
                    "{} subjects for leave-one-subject-out",
                    present.len()
                )));
            }
            Ok(present
                .into_iter()
                .map(|s| {
                    let rows = (0..samples.len()).filter(|&i| samples.subject[i] == s).collect();
                    (samples.subjects[s as usize].clone(), rows)
                })
                .collect())
        }
    }
}

/// Seed of fold `fold` in a protocol seeded with `seed`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add((fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn run_protocol(protocol: &EvalProtocol, samples: &SampleSet, trainer: &Trainer) -> Result<ProtocolResult> {
    let folds = fold_partition(protocol, samples)?;
    let mut results = Vec::with_capacity(folds.len());
    for (f, (label, test_rows)) in folds.iter().enumerate() {
        let test_set: BTreeSet<usize> = test_rows.iter().copied().collect();
        let train_rows: Vec<usize> = (0..samples.len()).filter(|i| !test_set.contains(i)).collect();
        if train_rows.is_empty() || test_rows.is_empty() {
            return Err(FeatureError::InsufficientData(format!("fold {label} is empty")));
        }
        let (model, rows_seen) = trainer.train_counted(samples, &train_rows, fold_seed(protocol.seed, f))?;
        let pred = predict_rows(&model, samples, test_rows)?;
        let truth = samples.y.select_rows(test_rows);
        let reports = (0..samples.config.n_outputs())
            .map(|o| compute_report(&truth.column(o), &pred.column(o)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let set = |rows: &[usize], v: &[u32]| rows.iter().map(|&r| v[r]).collect::<BTreeSet<u32>>();
        let audit = FoldAudit {
            train_cycles: set(&train_rows, &samples.cycle),
            test_cycles: set(test_rows, &samples.cycle),
            train_subjects: set(&train_rows, &samples.subject),
            test_subjects: set(test_rows, &samples.subject),
            rows_seen,
            train_rows,
            test_rows: test_rows.clone(),
        };
        log::info!(
            "{} {:?} {label}: {}",
            samples.config.name,
            protocol.mode,
            reports.iter().map(|r| format!("{:.4}", r.rmse)).collect::<Vec<_>>().join(" ")
        );
        results.push(FoldResult {
            label: label.clone(),
            reports,
            audit,
        });
    }
    let aggregate = (0..samples.config.n_outputs())
        .map(|o| fold_aggregate(&results.iter().map(|f| f.reports[o].clone()).collect::<Vec<_>>()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(ProtocolResult {
        config: samples.config.name,
        mode: protocol.mode,
        outputs: samples.config.output_names(Foot::Right),
        folds: results,
        aggregate,
    })
}

/// GRF, angle and moment predictors for both legs, with the right foot's
/// strikes as the GC% clock of the angle and moment stages.
pub struct ChainModels {
    pub grf: Box<dyn Predictor>,
    pub angles: Box<dyn Predictor>,
    pub moments: Box<dyn Predictor>,
}

/// Where the moment stage takes its angle and vGRF inputs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainInputs {
    Predicted,
    /// Ground-truth channels of the frame.
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageOutput {
    /// `[right, left]` in body weights.
    pub vgrf: [f64; 2],
    /// `[right, left]`, joints in [`JOINTS`] order.
    pub angles: [[f64; 5]; 2],
    pub moments: Option<[[f64; 5]; 2]>,
}

/// Per-tick chained inference: vGRF, then angles, then moments.
pub struct ChainEngine {
    models: ChainModels,
    inputs: ChainInputs,
    grf: [FeatureLayout; 2],
    angles: [FeatureLayout; 2],
    truth_vgrf: [Option<usize>; 2],
    truth_angles: [Vec<usize>; 2],
    history: [VecDeque<Vec<f64>>; 2],
    feat: Vec<f64>,
    window: Vec<f64>,
}

pub const CLOCK_FOOT: Foot = Foot::Right;

impl ChainEngine {
    pub fn new(models: ChainModels, channels: &[String], inputs: ChainInputs) -> Result<Self> {
        let expect = |p: &dyn Predictor, c: &ModelConfig| {
            if p.n_inputs() != c.n_inputs() || p.n_outputs() != c.n_outputs() || p.window() != c.window {
                Err(FeatureError::Model(format!(
                    "{} stage expects {}x{} -> {}, model is {}x{} -> {}",
                    c.name,
                    c.window,
                    c.n_inputs(),
                    c.n_outputs(),
                    p.window(),
                    p.n_inputs(),
                    p.n_outputs()
                )))
            } else {
                Ok(())
            }
        };
        let grf_cfg = ModelConfig::new(ModelName::Grf);
        let angle_cfg = ModelConfig::new(ModelName::W4);
        let moment_cfg = ModelConfig::new(ModelName::M5Joint);
        expect(models.grf.as_ref(), &grf_cfg)?;
        expect(models.angles.as_ref(), &angle_cfg)?;
        expect(models.moments.as_ref(), &moment_cfg)?;
        let layout = |cfg: &ModelConfig, leg| FeatureLayout::compile(cfg, channels, leg);
        let find = |name: String| channels.iter().position(|c| *c == name).ok_or(FeatureError::MissingChannel(name));
        let (truth_vgrf, truth_angles) = if inputs == ChainInputs::Truth {
            let v = [find(vgrf_channel(Foot::Right))?, find(vgrf_channel(Foot::Left))?];
            let a = [
                (0..5).map(|j| find(angle_channel(j, Foot::Right))).collect::<Result<Vec<_>>>()?,
                (0..5).map(|j| find(angle_channel(j, Foot::Left))).collect::<Result<Vec<_>>>()?,
            ];
            ([Some(v[0]), Some(v[1])], a)
        } else {
            ([None, None], [Vec::new(), Vec::new()])
        };
        Ok(Self {
            grf: [layout(&grf_cfg, Foot::Right)?, layout(&grf_cfg, Foot::Left)?],
            angles: [layout(&angle_cfg, Foot::Right)?, layout(&angle_cfg, Foot::Left)?],
            models,
            inputs,
            truth_vgrf,
            truth_angles,
            history: [VecDeque::new(), VecDeque::new()],
            feat: Vec::new(),
            window: Vec::new(),
        })
    }

    pub fn moment_window(&self) -> usize {
        self.models.moments.window()
    }

    /// Clears the moment-input history.
    pub fn reset(&mut self) {
        self.history.iter_mut().for_each(VecDeque::clear);
    }

    /// Whether both stride clocks are running.
    pub fn ready(clock: &StrideClock) -> bool {
        clock.is_ready(Foot::Right) && clock.is_ready(Foot::Left)
    }

    pub fn grf_stage(&mut self, t: f64, frame: &[f64], clock: &StrideClock, out: &mut StageOutput) -> Result<()> {
        for foot in Foot::BOTH {
            let gc = clock.gc_percent(foot, t)?;
            let l = &self.grf[foot.index()];
            self.feat.resize(l.len(), 0.0);
            l.fill(frame, gc, 0.0, &mut self.feat);
            let mut v = [0.0];
            self.models.grf.predict(t, foot, &self.feat, &mut v)?;
            out.vgrf[foot.index()] = v[0];
        }
        Ok(())
    }

    pub fn angle_stage(&mut self, t: f64, frame: &[f64], clock: &StrideClock, out: &mut StageOutput) -> Result<()> {
        let gc = clock.gc_percent(CLOCK_FOOT, t)?;
        for leg in Foot::BOTH {
            let l = &self.angles[leg.index()];
            self.feat.resize(l.len(), 0.0);
            l.fill(frame, gc, (leg == CLOCK_FOOT) as u8 as f64, &mut self.feat);
            self.models.angles.predict(t, leg, &self.feat, &mut out.angles[leg.index()])?;
        }
        Ok(())
    }

    /// Appends this tick to the moment-input history and predicts once a
    /// full window is available.
    pub fn moment_stage(&mut self, t: f64, frame: &[f64], clock: &StrideClock, out: &mut StageOutput) -> Result<()> {
        let gc = clock.gc_percent(CLOCK_FOOT, t)?;
        let w = self.models.moments.window();
        for leg in Foot::BOTH {
            let i = leg.index();
            let (angles, vgrf) = match self.inputs {
                ChainInputs::Predicted => (out.angles[i], out.vgrf[i]),
                ChainInputs::Truth => {
                    let mut a = [0.0; 5];
                    for (v, &c) in a.iter_mut().zip(&self.truth_angles[i]) {
                        *v = frame[c];
                    }
                    (a, frame[self.truth_vgrf[i].expect("truth inputs resolved")])
                }
            };
            let mut sample = angles.to_vec();
            sample.extend([vgrf * GRAVITY, gc, (leg == CLOCK_FOOT) as u8 as f64]);
            let h = &mut self.history[i];
            h.push_back(sample);
            while h.len() > w {
                h.pop_front();
            }
        }
        let filled = self.history[0].len();
        if filled < w {
            return Err(FeatureError::WarmupIncomplete(format!("{filled} of {w} moment-window samples")));
        }
        let mut all = [[0.0; 5]; 2];
        for leg in Foot::BOTH {
            self.window.clear();
            for s in self.history[leg.index()].iter() {
                self.window.extend_from_slice(s);
            }
            self.models.moments.predict(t, leg, &self.window, &mut all[leg.index()])?;
        }
        out.moments = Some(all);
        Ok(())
    }

    /// All three stages for one tick. Returns `WarmupIncomplete` until both
    /// clocks run; `moments` stays `None` until the window fills.
    pub fn step(&mut self, t: f64, frame: &[f64], clock: &StrideClock) -> Result<StageOutput> {
        if !Self::ready(clock) {
            return Err(FeatureError::WarmupIncomplete("stride clocks need two strikes per foot".into()));
        }
        let mut out = StageOutput::default();
        self.grf_stage(t, frame, clock, &mut out)?;
        self.angle_stage(t, frame, clock, &mut out)?;
        match self.moment_stage(t, frame, clock, &mut out) {
            Ok(()) | Err(FeatureError::WarmupIncomplete(_)) => Ok(out),
            Err(e) => Err(e),
        }
    }
}

/// Chained predictions over a prepared trial, one row per fully valid tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub time_ms: Vec<f64>,
    /// `[right, left]` GC% of each tick on its own foot's clock.
    pub gc_percent: Vec<[f64; 2]>,
    pub vgrf: Matrix,
    /// Right joints then left joints.
    pub angles: Matrix,
    pub moments: Matrix,
}

pub fn chain_predict(models: ChainModels, trial: &PreparedTrial, inputs: ChainInputs) -> Result<ChainTrace> {
    let streams = &trial.streams;
    let mut engine = ChainEngine::new(models, streams.channels(), inputs)?;
    let mut clock = StrideClock::new();
    let mut next = [0usize; 2];
    let mut trace = ChainTrace {
        time_ms: Vec::new(),
        gc_percent: Vec::new(),
        vgrf: Matrix::with_cols(2),
        angles: Matrix::with_cols(10),
        moments: Matrix::with_cols(10),
    };
    for i in 0..streams.len() {
        let t = streams.time_ms(i);
        for foot in Foot::BOTH {
            let s = &trial.strikes[foot.index()];
            while next[foot.index()] < s.len() && s[next[foot.index()]] <= t {
                clock.observe(foot, s[next[foot.index()]]);
                next[foot.index()] += 1;
            }
        }
        let out = match engine.step(t, streams.row(i), &clock) {
            Ok(o) => o,
            Err(FeatureError::WarmupIncomplete(_)) => continue,
            Err(e) => return Err(e),
        };
        let Some(m) = out.moments else { continue };
        trace.time_ms.push(t);
        trace
            .gc_percent
            .push([clock.gc_percent(Foot::Right, t)?, clock.gc_percent(Foot::Left, t)?]);
        trace.vgrf.push_row(&out.vgrf);
        trace.angles.push_row(&[out.angles[0], out.angles[1]].concat());
        trace.moments.push_row(&[m[0], m[1]].concat());
    }
    if trace.time_ms.is_empty() {
        return Err(FeatureError::WarmupIncomplete(
            "trial ends before the first full stride and moment window".into(),
        ));
    }
    Ok(trace)
}
