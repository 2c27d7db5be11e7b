#![allow(dead_code)]

use gaitrt::config::{RealtimeConfig, SessionSection};
use gaitrt::dump::DumpRecord;
use gaitrt::logs::{LogRow, MemorySink, PredictionRow};
use gaitrt::realtime::{Processor, RunStats, StageLatency};
use gaitrt::reference::perfect_models;
use gaitrt::session::session_records;
use gaitrt_core::synth::{generate_trial, NoiseLevels, SubjectProfile, SyntheticTrial};

pub fn clean_trial(duration_s: f64) -> SyntheticTrial {
    let mut p = SubjectProfile::canonical("S01");
    p.noise = NoiseLevels::zero();
    generate_trial(&p, "T01", duration_s, 1).unwrap()
}

pub fn records(trial: &SyntheticTrial, session: &SessionSection) -> Vec<DumpRecord> {
    session_records(trial, session).unwrap()
}

pub fn exact_config() -> RealtimeConfig {
    RealtimeConfig {
        smoothing_cutoff_hz: 0.0,
        ..RealtimeConfig::default()
    }
}

/// Runs `records` through a processor with in-memory logging, advancing the
/// clock to each arrival before delivering the packet.
pub fn run_memory(
    trial: &SyntheticTrial,
    records: &[DumpRecord],
    cfg: &RealtimeConfig,
) -> (MemorySink, RunStats, StageLatency) {
    let mut p = Processor::new(cfg.clone(), perfect_models(trial).unwrap(), MemorySink::default()).unwrap();
    for r in records {
        p.advance_to(r.arrival_ms as i64 - 1, None).unwrap();
        p.push(r.arrival_ms, &r.bytes);
    }
    p.finish().unwrap()
}

pub fn predictions(sink: &MemorySink) -> Vec<PredictionRow> {
    sink.rows
        .iter()
        .filter_map(|r| match r {
            LogRow::Prediction(p) => Some((**p).clone()),
            _ => None,
        })
        .collect()
}
