use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use gaitrt::compare::{compare_to_reference, read_rt_logs, read_strikes, PredictionLog};
use gaitrt::config::{RealtimeConfig, SessionSection};
use gaitrt::driver::replay;
use gaitrt::logs::{LogRow, MemorySink, LOG_FILES};
use gaitrt::packet::SensorId;
use gaitrt::realtime::Processor;
use gaitrt::reference::perfect_models;
use gaitrt_core::gait::Foot;

mod common;
use common::{clean_trial, exact_config, predictions, records, run_memory};

fn csv_rows(path: &std::path::Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn replay_conserves_packets_and_fills_every_tick() {
    let trial = clean_trial(20.0);
    let recs = records(&trial, &SessionSection::default());
    let mut per_sensor: BTreeMap<SensorId, u64> = BTreeMap::new();
    for r in &recs {
        *per_sensor.entry(gaitrt::packet::SensorPacket::decode(&r.bytes).unwrap().sensor).or_default() += 1;
    }
    for (s, n) in &per_sensor {
        assert!((495..=505).contains(n), "{s}: {n} packets");
    }
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let out = replay(recs, perfect_models(&trial).unwrap(), &exact_config(), dir.path(), true).unwrap();
    assert!(started.elapsed().as_secs_f64() < 5.0);
    for s in SensorId::ALL {
        assert_eq!(out.stats.ingest.packets[s.index()], per_sensor[&s]);
    }
    assert_eq!(csv_rows(&dir.path().join("insole_raw.csv")) as u64, per_sensor[&SensorId::RightInsole] * 2);
    assert_eq!(csv_rows(&dir.path().join("imu_raw.csv")) as u64, per_sensor[&SensorId::RightShank] * 4);
    assert_eq!(out.rows_dropped, 0);
    assert_eq!(out.stats.ticks, 20_001);
    for name in ["grf", "angles_filtered", "moments_filtered", "imu_upsampled", "insole_filtered"] {
        assert_eq!(csv_rows(&dir.path().join(format!("{name}.csv"))), 20_001, "{name}");
    }
    assert!(out.stats.valid_ticks > 17_000, "{} valid", out.stats.valid_ticks);
    for name in LOG_FILES {
        assert!(dir.path().join(format!("{name}.csv")).exists());
    }
    assert!(dir.path().join("latency.json").exists());
}

#[test]
fn invalid_rows_before_warmup_then_all_valid() {
    let trial = clean_trial(8.0);
    let (sink, stats, _) = run_memory(&trial, &records(&trial, &SessionSection::default()), &exact_config());
    let rows = predictions(&sink);
    let first = rows.iter().position(|r| r.valid).unwrap();
    assert!(first > 1000);
    assert!(rows[first..].iter().all(|r| r.valid));
    assert!(rows[..first].iter().all(|r| !r.valid && r.vgrf == [0.0; 2]));
    assert_eq!(stats.first_valid_session_ms, Some(first as i64));
    for foot in Foot::BOTH {
        let detected: Vec<i64> = sink
            .rows
            .iter()
            .filter_map(|r| match r {
                LogRow::Strike { session_ms, foot: f, .. } if *f == foot => Some(*session_ms),
                _ => None,
            })
            .collect();
        let truth = trial.strikes(foot);
        assert_eq!(detected.len(), truth.len());
        assert_eq!(stats.strikes[foot.index()], truth.len() as u64);
        for (d, t) in detected.iter().zip(&truth) {
            assert!((*d as f64 - t).abs() <= 40.0, "{foot:?}: detected {d}, true {t}");
        }
    }
}

#[test]
fn predictions_use_only_packets_already_arrived() {
    let trial = clean_trial(8.0);
    let recs = records(
        &trial,
        &SessionSection {
            jitter_ms: 5,
            seed: 3,
            ..SessionSection::default()
        },
    );
    let cfg = RealtimeConfig::default();
    let (full, _, _) = run_memory(&trial, &recs, &cfg);
    let full = predictions(&full);
    let cut = recs[0].arrival_ms + 6000;
    let mut p = Processor::new(cfg.clone(), perfect_models(&trial).unwrap(), MemorySink::default()).unwrap();
    for r in recs.iter().filter(|r| r.arrival_ms <= cut) {
        p.advance_to(r.arrival_ms as i64 - 1, None).unwrap();
        p.push(r.arrival_ms, &r.bytes);
    }
    p.advance_to(cut as i64, None).unwrap();
    let due_by_cut = p.stats().ticks as usize;
    let (partial, _, _) = p.finish().unwrap();
    let partial = predictions(&partial);
    assert!(due_by_cut > 5000);
    assert_eq!(&partial[..due_by_cut], &full[..due_by_cut]);
    assert!(full[..due_by_cut].iter().any(|r| r.valid));
}

#[test]
fn batch_mode_finishes_stages_in_chain_order() {
    let trial = clean_trial(8.0);
    let recs = records(&trial, &SessionSection::default());
    let cfg = RealtimeConfig {
        batch_at_end: true,
        ..exact_config()
    };
    let (batch, stats, lat) = run_memory(&trial, &recs, &cfg);
    assert!(lat.batch_at_end);
    assert!(lat.grf_done_ms <= lat.angles_done_ms && lat.angles_done_ms <= lat.moments_done_ms);
    assert!(lat.moments_done_ms < 100.0, "{lat:?}");
    let (tick, tstats, _) = run_memory(&trial, &recs, &exact_config());
    assert_eq!(stats.valid_ticks, tstats.valid_ticks);
    assert_eq!(predictions(&batch), predictions(&tick));
}

#[test]
fn lagging_ticks_skip_inference_and_recover() {
    let trial = clean_trial(8.0);
    let recs = records(&trial, &SessionSection::default());
    let mut p = Processor::new(exact_config(), perfect_models(&trial).unwrap(), MemorySink::default()).unwrap();
    let stall = recs[0].arrival_ms + 5000;
    for r in &recs {
        if r.arrival_ms < stall {
            p.advance_to(r.arrival_ms as i64 - 1, Some(250)).unwrap();
        }
        p.push(r.arrival_ms, &r.bytes);
    }
    p.advance_to(recs.last().unwrap().arrival_ms as i64, Some(250)).unwrap();
    let (sink, stats, _) = p.finish().unwrap();
    assert!(stats.skipped_ticks > 2000, "{} skipped", stats.skipped_ticks);
    let rows = predictions(&sink);
    assert!(rows.last().unwrap().valid);
    assert_eq!(rows.len() as u64, stats.ticks);
}

#[test]
fn sensor_silence_is_reported() {
    let trial = clean_trial(8.0);
    let recs = records(&trial, &SessionSection::default());
    let mut p = Processor::new(exact_config(), perfect_models(&trial).unwrap(), MemorySink::default()).unwrap();
    let cut = recs[0].arrival_ms + 3000;
    for r in &recs {
        let s = gaitrt::packet::SensorPacket::decode(&r.bytes).unwrap().sensor;
        if s == SensorId::LeftShank && r.arrival_ms > cut {
            continue;
        }
        p.advance_to(r.arrival_ms as i64 - 1, None).unwrap();
        p.push(r.arrival_ms, &r.bytes);
    }
    assert_eq!(p.ingest_stats().timeouts.len(), 1);
    assert_eq!(p.ingest_stats().timeouts[0].sensor, "imu_ls");
    assert!(!p.all_silent());
}

#[test]
fn missing_sensor_is_an_error() {
    let trial = clean_trial(4.0);
    let recs = records(&trial, &SessionSection::default());
    let mut p = Processor::new(exact_config(), perfect_models(&trial).unwrap(), MemorySink::default()).unwrap();
    for r in &recs {
        if gaitrt::packet::SensorPacket::decode(&r.bytes).unwrap().sensor != SensorId::RightInsole {
            p.push(r.arrival_ms, &r.bytes);
        }
    }
    assert_eq!(p.finish().err().unwrap().code(), "E_MISSING_SENSOR");
}

#[test]
fn as_fast_as_possible_replay_is_byte_reproducible() {
    let trial = clean_trial(8.0);
    let recs = records(
        &trial,
        &SessionSection {
            jitter_ms: 4,
            seed: 11,
            ..SessionSection::default()
        },
    );
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        replay(recs.clone(), perfect_models(&trial).unwrap(), &RealtimeConfig::default(), d.path(), true).unwrap();
    }
    for name in LOG_FILES {
        let f = format!("{name}.csv");
        assert_eq!(fs::read(dirs[0].path().join(&f)).unwrap(), fs::read(dirs[1].path().join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn perfect_self_replay_correlates_exactly() {
    let trial = clean_trial(20.0);
    let dir = tempfile::tempdir().unwrap();
    replay(
        records(&trial, &SessionSection::default()),
        perfect_models(&trial).unwrap(),
        &exact_config(),
        dir.path(),
        true,
    )
    .unwrap();
    let rt = read_rt_logs(dir.path(), PredictionLog::Filtered).unwrap();
    let truth_strikes = [trial.strikes(Foot::Right), trial.strikes(Foot::Left)];
    let report = compare_to_reference(&rt, &truth_strikes, std::slice::from_ref(&trial)).unwrap();
    assert_eq!(report.variables.len(), 11);
    assert!(report.rt_cycles > 10);
    for v in &report.variables {
        assert!((v.r - 1.0).abs() <= 1e-9, "{}: r = {}", v.variable, v.r);
    }
    let detected = read_strikes(dir.path()).unwrap();
    let report = compare_to_reference(&rt, &detected, std::slice::from_ref(&trial)).unwrap();
    for v in &report.variables {
        assert!(v.r > 0.9, "{}: r = {} on detected strikes", v.variable, v.r);
    }
}

#[test]
fn comparison_needs_a_complete_cycle() {
    let trial = clean_trial(4.0);
    let (sink, _, _) = run_memory(&trial, &records(&trial, &SessionSection::default()), &exact_config());
    assert!(sink.rows.iter().any(|r| matches!(r, LogRow::Frame { .. })));
    let dir = tempfile::tempdir().unwrap();
    replay(
        records(&trial, &SessionSection::default()),
        perfect_models(&trial).unwrap(),
        &exact_config(),
        dir.path(),
        true,
    )
    .unwrap();
    let rt = read_rt_logs(dir.path(), PredictionLog::Raw).unwrap();
    let err = compare_to_reference(&rt, &[vec![100.0], vec![]], std::slice::from_ref(&trial)).unwrap_err();
    assert_eq!(err.code(), "E_INSUFFICIENT_DATA");
}

