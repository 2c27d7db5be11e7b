//! Heel-strike detection, stride segmentation and gait-cycle percentage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::SampleSeries;

/// Minimum spacing between two strikes of the same foot.
pub const DEBOUNCE_MS: f64 = 300.0;

/// Real-time GC% never reaches 100; a long stride saturates here.
pub const GC_CLAMP: f64 = 99.999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaitError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("time {0} ms lies outside every stride")]
    OutOfStride(f64),
    #[error("stride clock for {0:?} foot has not seen two heel strikes yet")]
    WarmupIncomplete(Foot),
    #[error("trial has no complete stride")]
    EmptyTrial,
}

impl GaitError {
    pub fn code(&self) -> &'static str {
        match self {
            GaitError::InsufficientData(_) => "E_INSUFFICIENT_DATA",
            GaitError::OutOfStride(_) => "E_OUT_OF_STRIDE",
            GaitError::WarmupIncomplete(_) => "E_WARMUP_INCOMPLETE",
            GaitError::EmptyTrial => "E_EMPTY_TRIAL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Foot {
    Right,
    Left,
}

impl Foot {
    pub const BOTH: [Foot; 2] = [Foot::Right, Foot::Left];

    pub fn index(self) -> usize {
        match self {
            Foot::Right => 0,
            Foot::Left => 1,
        }
    }

    pub fn other(self) -> Foot {
        match self {
            Foot::Right => Foot::Left,
            Foot::Left => Foot::Right,
        }
    }

    /// Column-name suffix, `r` or `l`.
    pub fn suffix(self) -> &'static str {
        match self {
            Foot::Right => "r",
            Foot::Left => "l",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrikeSource {
    ForcePlate,
    Insole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeelStrikeEvent {
    pub time_ms: f64,
    pub foot: Foot,
    pub source: StrikeSource,
}

/// Upward threshold crossings (`prev < threshold <= current`) of a
/// single-channel force series, debounced by [`DEBOUNCE_MS`].
pub fn detect_heel_strikes(
    force: &SampleSeries,
    threshold: f64,
    foot: Foot,
    source: StrikeSource,
) -> Result<Vec<HeelStrikeEvent>, GaitError> {
    if force.is_empty() {
        return Err(GaitError::InsufficientData("empty force series".into()));
    }
    let values = force.column(0);
    let mut events: Vec<HeelStrikeEvent> = Vec::new();
    for i in 1..values.len() {
        if values[i - 1] < threshold && threshold <= values[i] {
            let t = force.time_ms(i);
            if events.last().map_or(true, |e| t - e.time_ms >= DEBOUNCE_MS) {
                events.push(HeelStrikeEvent {
                    time_ms: t,
                    foot,
                    source,
                });
            }
        }
    }
    Ok(events)
}

/// `100 (t - s_i) / (s_{i+1} - s_i)` for the stride `[s_i, s_{i+1})`
/// containing `t`. `strikes` must be sorted.
pub fn gc_percent_offline(strikes: &[f64], t: f64) -> Result<f64, GaitError> {
    let i = strikes.partition_point(|&s| s <= t);
    if i == 0 || i >= strikes.len() {
        return Err(GaitError::OutOfStride(t));
    }
    let (s0, s1) = (strikes[i - 1], strikes[i]);
    Ok(100.0 * (t - s0) / (s1 - s0))
}

/// Tracks the last heel strike and the previous stride duration per foot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StrideClock {
    last_strike: [Option<f64>; 2],
    prev_duration: [Option<f64>; 2],
}

impl StrideClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, foot: Foot, time_ms: f64) {
        let i = foot.index();
        if let Some(last) = self.last_strike[i] {
            self.prev_duration[i] = Some(time_ms - last);
        }
        self.last_strike[i] = Some(time_ms);
    }

    pub fn last_strike(&self, foot: Foot) -> Option<f64> {
        self.last_strike[foot.index()]
    }

    pub fn previous_stride(&self, foot: Foot) -> Option<f64> {
        self.prev_duration[foot.index()]
    }

    pub fn is_ready(&self, foot: Foot) -> bool {
        self.prev_duration[foot.index()].is_some()
    }

    /// GC% extrapolated from the previous stride, clamped below 100.
    pub fn gc_percent(&self, foot: Foot, t: f64) -> Result<f64, GaitError> {
        let i = foot.index();
        match (self.last_strike[i], self.prev_duration[i]) {
            (Some(last), Some(dur)) => Ok((100.0 * (t - last) / dur).clamp(0.0, GC_CLAMP)),
            _ => Err(GaitError::WarmupIncomplete(foot)),
        }
    }
}

/// Online strike detector on the summed insole channels. The threshold is
/// a fraction of the running maximum, floored at `min_threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct InsoleStrikeDetector {
    pub foot: Foot,
    pub fraction: f64,
    pub min_threshold: f64,
    running_max: f64,
    prev: Option<f64>,
    last_event: Option<f64>,
}

impl InsoleStrikeDetector {
    pub fn new(foot: Foot, fraction: f64, min_threshold: f64) -> Self {
        Self {
            foot,
            fraction,
            min_threshold,
            running_max: 0.0,
            prev: None,
            last_event: None,
        }
    }

    pub fn threshold(&self) -> f64 {
        (self.fraction * self.running_max).max(self.min_threshold)
    }

    pub fn update(&mut self, time_ms: f64, value: f64) -> Option<HeelStrikeEvent> {
        self.running_max = self.running_max.max(value);
        let threshold = self.threshold();
        let prev = self.prev.replace(value)?;
        if prev < threshold && threshold <= value {
            if self.last_event.map_or(true, |t| time_ms - t >= DEBOUNCE_MS) {
                self.last_event = Some(time_ms);
                return Some(HeelStrikeEvent {
                    time_ms,
                    foot: self.foot,
                    source: StrikeSource::Insole,
                });
            }
        }
        None
    }
}

/// One stride of one trial, delimited by two strikes of the lead foot.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitCycleSegment {
    pub subject_id: String,
    pub trial_id: String,
    pub foot: Foot,
    pub samples: SampleSeries,
    pub gc_percent: Vec<f64>,
}

impl GaitCycleSegment {
    /// 1 for channels of the leg whose strikes delimit this segment.
    pub fn lead_flag(&self, leg: Foot) -> f64 {
        if leg == self.foot {
            1.0
        } else {
            0.0
        }
    }

    pub fn start_ms(&self) -> f64 {
        self.samples.start_ms()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Cuts a trial into one segment per complete stride per foot. Segments of
/// the right foot come first, each list in time order.
pub fn segment_cycles(
    subject_id: &str,
    trial_id: &str,
    streams: &SampleSeries,
    strikes: &[HeelStrikeEvent],
) -> Result<Vec<GaitCycleSegment>, GaitError> {
    let mut segments = Vec::new();
    for foot in Foot::BOTH {
        let mut times: Vec<f64> = strikes
            .iter()
            .filter(|e| e.foot == foot)
            .map(|e| e.time_ms)
            .collect();
        times.sort_by(f64::total_cmp);
        for w in times.windows(2) {
            let (s0, s1) = (w[0], w[1]);
            if s0 < streams.start_ms() - 1e-9 {
                continue;
            }
            let from = first_row_at_or_after(streams, s0);
            let to = first_row_at_or_after(streams, s1);
            if from >= to || to > streams.len() {
                continue;
            }
            // a stride is complete only if the stream covers its end
            if streams.time_ms(streams.len() - 1) < s1 - 1e-9 && to == streams.len() {
                continue;
            }
            let samples = streams.slice(from, to);
            let gc_percent = (from..to)
                .map(|r| 100.0 * (streams.time_ms(r) - s0) / (s1 - s0))
                .collect();
            segments.push(GaitCycleSegment {
                subject_id: subject_id.to_string(),
                trial_id: trial_id.to_string(),
                foot,
                samples,
                gc_percent,
            });
        }
    }
    if segments.is_empty() {
        return Err(GaitError::EmptyTrial);
    }
    Ok(segments)
}

fn first_row_at_or_after(s: &SampleSeries, t: f64) -> usize {
    let pos = (t - s.start_ms()) * s.rate_hz() / 1000.0;
    let mut i = pos.ceil().max(0.0) as usize;
    // guard against rounding in the division
    while i > 0 && s.time_ms(i - 1) >= t - 1e-9 {
        i -= 1;
    }
    while i < s.len() && s.time_ms(i) < t - 1e-9 {
        i += 1;
    }
    i.min(s.len())
}
