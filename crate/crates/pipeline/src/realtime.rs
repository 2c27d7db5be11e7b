//! The processing unit: 1 kHz ticks over aligned sensor buffers, stride
//! clocking, chained inference, output smoothing and latency accounting.
//!
//! Tick `k` describes signal time `origin + k` on the host clock and runs
//! once the host clock reaches `origin + k + signal_delay_ms`, using only
//! packets that arrived by then.

use std::collections::VecDeque;
use std::time::Instant;

use gaitrt_core::features::{
    imu_stream_channels, insole_stream_channels, ChainEngine, ChainInputs, ChainModels, FeatureError, SensorFilters,
    StageOutput,
};
use gaitrt_core::gait::{Foot, InsoleStrikeDetector, StrideClock};
use gaitrt_core::signal::{design_butterworth, FilterKind, IirFilter};
use gaitrt_core::synth::N_FSR;
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::RealtimeConfig;
use crate::error::{PipelineError, Result};
use crate::ingest::{IngestStats, TimestampAligner};
use crate::logs::{LogRow, LogSink, PacketRow, PredictionRow};
use crate::packet::SensorId;

/// Frame order: right insole, left insole, then the IMUs right shank,
/// right foot, left shank, left foot.
const FRAME_SENSORS: [SensorId; 6] = [
    SensorId::RightInsole,
    SensorId::LeftInsole,
    SensorId::RightShank,
    SensorId::RightFoot,
    SensorId::LeftShank,
    SensorId::LeftFoot,
];
const FRAME_WIDTH: usize = 2 * N_FSR + 36;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| s[((s.len() - 1) as f64 * p).round() as usize];
        Self {
            count: s.len(),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p50_ms: q(0.5),
            p95_ms: q(0.95),
            max_ms: s[s.len() - 1],
        }
    }
}

/// Completion of each stage for the final tick, in ms after the end of
/// the collection window.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageLatency {
    pub batch_at_end: bool,
    pub grf_done_ms: f64,
    pub angles_done_ms: f64,
    pub moments_done_ms: f64,
    /// Wall time from a sample's signal time to its logged prediction; only
    /// measured against a real clock.
    pub end_to_end: Option<LatencyStats>,
    /// Compute time per predicted tick.
    pub processing: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub ingest: IngestStats,
    pub origin_host_ms: Option<i64>,
    pub ticks: u64,
    pub valid_ticks: u64,
    /// Ticks before every sensor had reported.
    pub no_data_ticks: u64,
    /// Ticks whose inference was skipped because processing fell behind.
    pub skipped_ticks: u64,
    pub strikes: [u64; 2],
    pub first_valid_session_ms: Option<i64>,
}

/// Maps host milliseconds onto the wall clock.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    pub start: Instant,
    pub host_ms_at_start: f64,
}

impl WallClock {
    pub fn host_now(&self) -> f64 {
        self.host_ms_at_start + self.start.elapsed().as_secs_f64() * 1000.0
    }

    fn ms_since(&self, host_ms: f64, at: Instant) -> f64 {
        at.duration_since(self.start).as_secs_f64() * 1000.0 - (host_ms - self.host_ms_at_start)
    }
}

struct BatchTick {
    session_ms: i64,
    frame: Vec<f64>,
    clock: StrideClock,
}

pub struct Processor<S: LogSink> {
    cfg: RealtimeConfig,
    aligner: TimestampAligner,
    buffers: [VecDeque<(i64, Vec<f64>)>; 6],
    first_host: [Option<i64>; 6],
    origin: Option<i64>,
    first_arrival: Option<u64>,
    complete_at: i64,
    next_k: i64,
    filters: SensorFilters,
    detectors: [InsoleStrikeDetector; 2],
    clock: StrideClock,
    engine: ChainEngine,
    smoothing: Option<[IirFilter; 2]>,
    smoothing_primed: bool,
    need_reset: bool,
    batch: Vec<BatchTick>,
    sink: S,
    stats: RunStats,
    wall: Option<WallClock>,
    processing_ms: Vec<f64>,
    end_to_end_ms: Vec<f64>,
    stage_done: [Option<Instant>; 3],
}

impl<S: LogSink> Processor<S> {
    pub fn new(cfg: RealtimeConfig, models: ChainModels, sink: S) -> Result<Self> {
        cfg.validate()?;
        let mut channels = insole_stream_channels();
        channels.extend(imu_stream_channels());
        let engine = ChainEngine::new(models, &channels, ChainInputs::Predicted)?;
        let smoothing = if cfg.smoothing_cutoff_hz > 0.0 {
            let f = design_butterworth(cfg.smoothing_order, FilterKind::Lowpass, &[cfg.smoothing_cutoff_hz], 1000.0)?;
            Some([f.clone(), f])
        } else {
            None
        };
        let detector = |foot| InsoleStrikeDetector::new(foot, cfg.strike_fraction, cfg.strike_min_threshold);
        Ok(Self {
            aligner: TimestampAligner::new(cfg.packet_interval_ms),
            filters: SensorFilters::new(&cfg.preprocessing())?,
            detectors: [detector(Foot::Right), detector(Foot::Left)],
            cfg,
            buffers: Default::default(),
            first_host: [None; 6],
            origin: None,
            first_arrival: None,
            complete_at: 0,
            next_k: 0,
            clock: StrideClock::new(),
            engine,
            smoothing,
            smoothing_primed: false,
            need_reset: false,
            batch: Vec::new(),
            sink,
            stats: RunStats::default(),
            wall: None,
            processing_ms: Vec::new(),
            end_to_end_ms: Vec::new(),
            stage_done: [None; 3],
        })
    }

    /// Measures end-to-end latency against `wall`.
    pub fn set_wall_clock(&mut self, wall: WallClock) {
        self.wall = Some(wall);
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn origin(&self) -> Option<i64> {
        self.origin
    }

    pub fn ingest_stats(&self) -> &IngestStats {
        &self.aligner.stats
    }

    pub fn first_arrival(&self) -> Option<u64> {
        self.first_arrival
    }

    /// Whether every sensor that has reported is past its silence timeout.
    pub fn all_silent(&self) -> bool {
        self.aligner.all_silent()
    }

    /// Host time at which the next tick becomes due.
    pub fn next_due(&self) -> Option<i64> {
        self.origin.map(|o| o + self.next_k + self.cfg.signal_delay_ms as i64)
    }

    /// Feeds one datagram received at host time `arrival_ms`.
    pub fn push(&mut self, arrival_ms: u64, bytes: &[u8]) {
        self.first_arrival.get_or_insert(arrival_ms);
        let Some((packet, s)) = self.aligner.accept_bytes(arrival_ms, bytes) else { return };
        self.sink.send(LogRow::Packet(PacketRow {
            arrival_ms,
            sensor: packet.sensor,
            seq: packet.seq,
            device_ms: packet.device_ms,
            host_ms: s.host_ms,
            values: s.values.clone(),
        }));
        let i = s.sensor.index();
        self.first_host[i].get_or_insert(s.host_ms);
        self.buffers[i].push_back((s.host_ms, s.values));
        if self.origin.is_none() && self.first_host.iter().all(Option::is_some) {
            let origin = self.first_host.iter().flatten().copied().min().expect("six sensors");
            self.origin = Some(origin);
            self.complete_at = arrival_ms as i64;
            self.stats.origin_host_ms = Some(origin);
            info!("all sensors reporting; session origin at host {origin} ms");
        }
    }

    /// Runs every tick due by host time `now_ms`. With a lag budget, ticks
    /// already further behind than the budget skip inference.
    pub fn advance_to(&mut self, now_ms: i64, lag_budget_ms: Option<u64>) -> Result<()> {
        if now_ms >= 0 {
            self.aligner.check_timeouts(now_ms as u64, self.cfg.sensor_timeout_ms);
        }
        while let Some(due) = self.next_due() {
            if due > now_ms {
                break;
            }
            let skip = lag_budget_ms.is_some_and(|b| now_ms - due > b as i64);
            self.tick(skip)?;
        }
        Ok(())
    }

    /// Ends the session: runs the remaining ticks up to the last sample
    /// every sensor has delivered, then returns the sink and the run report.
    pub fn finish(mut self) -> Result<(S, RunStats, StageLatency)> {
        let end = Instant::now();
        self.stage_done = [None; 3];
        let Some(origin) = self.origin else {
            let missing = SensorId::ALL
                .into_iter()
                .find(|s| self.first_host[s.index()].is_none())
                .expect("origin exists once all sensors report");
            return Err(PipelineError::MissingSensor(missing));
        };
        let last = self
            .buffers
            .iter()
            .map(|b| b.back().map_or(i64::MIN, |s| s.0))
            .min()
            .expect("six buffers");
        while origin + self.next_k <= last {
            self.tick(false)?;
        }
        if self.cfg.batch_at_end {
            self.run_batch()?;
        }
        let offset = |i: usize| {
            self.stage_done[i].map_or(0.0, |t| t.duration_since(end).as_secs_f64() * 1000.0)
        };
        let latency = StageLatency {
            batch_at_end: self.cfg.batch_at_end,
            grf_done_ms: offset(0),
            angles_done_ms: offset(1),
            moments_done_ms: offset(2),
            end_to_end: self.wall.map(|_| LatencyStats::from_samples(&self.end_to_end_ms)),
            processing: LatencyStats::from_samples(&self.processing_ms),
        };
        self.stats.ingest = self.aligner.stats.clone();
        Ok((self.sink, self.stats, latency))
    }

    fn sample_at(&mut self, sensor: SensorId, t: i64, out: &mut [f64]) {
        let b = &mut self.buffers[sensor.index()];
        while b.len() >= 2 && b[1].0 <= t {
            b.pop_front();
        }
        let (t0, v0) = &b[0];
        match b.get(1) {
            Some((t1, v1)) if *t0 < t => {
                let w = (t - t0) as f64 / (t1 - t0) as f64;
                for ((o, a), c) in out.iter_mut().zip(v0).zip(v1) {
                    *o = a + w * (c - a);
                }
            }
            _ => out.copy_from_slice(v0),
        }
    }

    fn tick(&mut self, skip: bool) -> Result<()> {
        let origin = self.origin.expect("ticks start after the origin is known");
        let k = self.next_k;
        self.next_k += 1;
        self.stats.ticks += 1;
        let host_ms = origin + k;
        if host_ms + (self.cfg.signal_delay_ms as i64) < self.complete_at {
            self.stats.no_data_ticks += 1;
            self.need_reset = true;
            self.sink.send(LogRow::Prediction(Box::new(PredictionRow::invalid(k, host_ms))));
            return Ok(());
        }
        let started = Instant::now();
        let mut upsampled = vec![0.0; FRAME_WIDTH];
        let mut at = 0;
        for sensor in FRAME_SENSORS {
            let n = sensor.n_channels();
            self.sample_at(sensor, host_ms, &mut upsampled[at..at + n]);
            at += n;
        }
        let mut frame = upsampled.clone();
        let (fsr, imu) = frame.split_at_mut(2 * N_FSR);
        self.filters.process(fsr, imu)?;
        let t = k as f64;
        for foot in Foot::BOTH {
            let sum: f64 = upsampled[foot.index() * N_FSR..(foot.index() + 1) * N_FSR].iter().sum();
            if let Some(ev) = self.detectors[foot.index()].update(t, sum) {
                self.clock.observe(foot, ev.time_ms);
                self.stats.strikes[foot.index()] += 1;
                self.sink.send(LogRow::Strike {
                    session_ms: k,
                    host_ms,
                    foot,
                });
            }
        }
        if self.cfg.batch_at_end {
            self.batch.push(BatchTick {
                session_ms: k,
                frame: frame.clone(),
                clock: self.clock.clone(),
            });
        }
        self.sink.send(LogRow::Frame {
            session_ms: k,
            host_ms,
            upsampled,
            filtered: frame.clone(),
        });
        if self.cfg.batch_at_end {
            return Ok(());
        }
        if skip {
            self.stats.skipped_ticks += 1;
            self.need_reset = true;
            self.sink.send(LogRow::Prediction(Box::new(PredictionRow::invalid(k, host_ms))));
            return Ok(());
        }
        if self.need_reset {
            self.engine.reset();
            self.smoothing_primed = false;
            self.need_reset = false;
        }
        let mut out = StageOutput::default();
        let valid = if ChainEngine::ready(&self.clock) {
            self.engine.grf_stage(t, &frame, &self.clock, &mut out)?;
            self.stage_done[0] = Some(Instant::now());
            self.engine.angle_stage(t, &frame, &self.clock, &mut out)?;
            self.stage_done[1] = Some(Instant::now());
            match self.engine.moment_stage(t, &frame, &self.clock, &mut out) {
                Ok(()) => true,
                Err(FeatureError::WarmupIncomplete(_)) => false,
                Err(e) => return Err(e.into()),
            }
        } else {
            false
        };
        let row = self.row(k, host_ms, valid, &out, &self.clock.clone())?;
        if valid {
            let done = Instant::now();
            self.stage_done[2] = Some(done);
            self.processing_ms.push(done.duration_since(started).as_secs_f64() * 1000.0);
            if let Some(w) = &self.wall {
                self.end_to_end_ms.push(w.ms_since(host_ms as f64, done));
            }
        }
        self.sink.send(LogRow::Prediction(Box::new(row)));
        Ok(())
    }

    fn row(&mut self, k: i64, host_ms: i64, valid: bool, out: &StageOutput, clock: &StrideClock) -> Result<PredictionRow> {
        if !valid {
            self.smoothing_primed = false;
            return Ok(PredictionRow::invalid(k, host_ms));
        }
        let moments = out.moments.expect("valid rows carry moments");
        let t = k as f64;
        let mut row = PredictionRow {
            session_ms: k,
            host_ms,
            valid: true,
            gc_percent: [clock.gc_percent(Foot::Right, t)?, clock.gc_percent(Foot::Left, t)?],
            vgrf: out.vgrf,
            angles_raw: flatten(&out.angles),
            angles_filtered: flatten(&out.angles),
            moments_raw: flatten(&moments),
            moments_filtered: flatten(&moments),
        };
        if let Some([fa, fm]) = &mut self.smoothing {
            if !self.smoothing_primed {
                fa.prime(&row.angles_raw);
                fm.prime(&row.moments_raw);
                self.smoothing_primed = true;
            }
            fa.process_frame(&mut row.angles_filtered)?;
            fm.process_frame(&mut row.moments_filtered)?;
        }
        self.stats.valid_ticks += 1;
        self.stats.first_valid_session_ms.get_or_insert(k);
        Ok(row)
    }

    /// Predicts every stored tick stage by stage: all vGRF, then all
    /// angles, then all moments.
    fn run_batch(&mut self) -> Result<()> {
        let ticks = std::mem::take(&mut self.batch);
        let mut outs = vec![StageOutput::default(); ticks.len()];
        let ready: Vec<bool> = ticks.iter().map(|b| ChainEngine::ready(&b.clock)).collect();
        for ((b, out), _) in ticks.iter().zip(&mut outs).zip(&ready).filter(|(_, r)| **r) {
            self.engine.grf_stage(b.session_ms as f64, &b.frame, &b.clock, out)?;
        }
        self.stage_done[0] = Some(Instant::now());
        for ((b, out), _) in ticks.iter().zip(&mut outs).zip(&ready).filter(|(_, r)| **r) {
            self.engine.angle_stage(b.session_ms as f64, &b.frame, &b.clock, out)?;
        }
        self.stage_done[1] = Some(Instant::now());
        let mut valid = vec![false; ticks.len()];
        for (i, b) in ticks.iter().enumerate() {
            if !ready[i] {
                continue;
            }
            match self.engine.moment_stage(b.session_ms as f64, &b.frame, &b.clock, &mut outs[i]) {
                Ok(()) => valid[i] = true,
                Err(FeatureError::WarmupIncomplete(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.stage_done[2] = Some(Instant::now());
        let origin = self.origin.expect("batch ticks need an origin");
        for (i, b) in ticks.iter().enumerate() {
            let row = self.row(b.session_ms, origin + b.session_ms, valid[i], &outs[i], &b.clock)?;
            self.sink.send(LogRow::Prediction(Box::new(row)));
        }
        Ok(())
    }
}

fn flatten(v: &[[f64; 5]; 2]) -> [f64; 10] {
    let mut o = [0.0; 10];
    o[..5].copy_from_slice(&v[0]);
    o[5..].copy_from_slice(&v[1]);
    o
}
