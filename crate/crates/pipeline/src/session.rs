//! Packet streams synthesised from stored trials, for replay and tests.

use gaitrt_core::synth::SyntheticTrial;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SessionSection;
use crate::dump::DumpRecord;
use crate::error::{PipelineError, Result};
use crate::packet::{SensorId, SensorPacket};

/// Sensor samples of `trial` in packet form, in arrival order. Each sensor
/// gets its own device clock; arrival adds latency and a uniform delay in
/// `[0, 2 * jitter_ms]`.
pub fn session_records(trial: &SyntheticTrial, s: &SessionSection) -> Result<Vec<DumpRecord>> {
    if !(0.0..1.0).contains(&s.drop_probability) {
        return Err(PipelineError::Config("drop_probability must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut out: Vec<(u64, usize, DumpRecord)> = Vec::new();
    for sensor in SensorId::ALL {
        let series = match sensor {
            SensorId::RightShank => &trial.imus[0],
            SensorId::RightFoot => &trial.imus[1],
            SensorId::LeftShank => &trial.imus[2],
            SensorId::LeftFoot => &trial.imus[3],
            SensorId::RightInsole => &trial.insoles[0],
            SensorId::LeftInsole => &trial.insoles[1],
        };
        if series.n_channels() != sensor.n_channels() {
            return Err(PipelineError::InsufficientData(format!(
                "{sensor}: trial has {} channels",
                series.n_channels()
            )));
        }
        let device_epoch = s.device_epoch_ms + sensor.index() as u64 * s.device_clock_spread_ms;
        for i in 0..series.len() {
            let t = series.time_ms(i).round() as u64;
            let jitter = if s.jitter_ms > 0 { rng.gen_range(0..=2 * s.jitter_ms) } else { 0 };
            if s.drop_probability > 0.0 && rng.gen_bool(s.drop_probability) {
                continue;
            }
            let packet = SensorPacket {
                sensor,
                seq: i as u32,
                device_ms: device_epoch + t,
                values: series.row(i).iter().map(|&v| v as f32).collect(),
            };
            let arrival = s.host_start_ms + t + s.latency_ms + jitter;
            out.push((
                arrival,
                out.len(),
                DumpRecord {
                    arrival_ms: arrival,
                    bytes: packet.encode(),
                },
            ));
        }
    }
    out.sort_by_key(|(a, i, _)| (*a, *i));
    Ok(out.into_iter().map(|(_, _, r)| r).collect())
}
