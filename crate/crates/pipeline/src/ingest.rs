//! Packet validation, per-sensor bookkeeping and timestamp adjustment.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::packet::{SensorId, SensorPacket};

/// Counters kept while ingesting one session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    /// Accepted packets per sensor, in [`SensorId::ALL`] order.
    pub packets: [u64; 6],
    pub malformed: u64,
    /// Packets missing from sequence-number gaps.
    pub dropped: [u64; 6],
    /// Packets arriving with a sequence number at or below one already seen.
    pub reordered: [u64; 6],
    /// Timestamps rebuilt from sequence spacing.
    pub repaired: [u64; 6],
    pub timeouts: Vec<SensorTimeoutEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorTimeoutEvent {
    pub sensor: String,
    pub last_arrival_ms: u64,
    pub detected_at_ms: u64,
}

/// A packet placed on the host clock.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSample {
    pub sensor: SensorId,
    pub seq: u32,
    pub device_ms: u64,
    pub arrival_ms: u64,
    pub host_ms: i64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct SensorState {
    offset: i64,
    last_seq: u32,
    last_host: i64,
    last_arrival: u64,
    timed_out: bool,
}

/// Maps device timestamps onto the host clock with one constant offset per
/// sensor, taken from its first packet.
#[derive(Debug, Clone)]
pub struct TimestampAligner {
    interval_ms: u64,
    state: [Option<SensorState>; 6],
    pub stats: IngestStats,
}

impl TimestampAligner {
    pub fn new(interval_ms: u64) -> Self {
        Self {
            interval_ms,
            state: [None; 6],
            stats: IngestStats::default(),
        }
    }

    /// Decodes and aligns one datagram. Malformed datagrams and stale
    /// sequence numbers are counted and yield `None`.
    pub fn accept_bytes(&mut self, arrival_ms: u64, bytes: &[u8]) -> Option<(SensorPacket, AlignedSample)> {
        match SensorPacket::decode(bytes) {
            Ok(p) => {
                let s = self.accept(arrival_ms, &p)?;
                Some((p, s))
            }
            Err(e) => {
                self.stats.malformed += 1;
                warn!("skipping malformed packet at {arrival_ms} ms: {e}");
                None
            }
        }
    }

    pub fn accept(&mut self, arrival_ms: u64, p: &SensorPacket) -> Option<AlignedSample> {
        let i = p.sensor.index();
        let host_ms = match &mut self.state[i] {
            None => {
                self.state[i] = Some(SensorState {
                    offset: p.device_ms as i64 - arrival_ms as i64,
                    last_seq: p.seq,
                    last_host: arrival_ms as i64,
                    last_arrival: arrival_ms,
                    timed_out: false,
                });
                arrival_ms as i64
            }
            Some(st) => {
                if p.seq <= st.last_seq {
                    self.stats.reordered[i] += 1;
                    warn!("{}: stale sequence number {} after {}", p.sensor, p.seq, st.last_seq);
                    return None;
                }
                let gap = p.seq - st.last_seq;
                if gap > 1 {
                    self.stats.dropped[i] += (gap - 1) as u64;
                }
                let mut host = p.device_ms as i64 - st.offset;
                if host <= st.last_host {
                    self.stats.repaired[i] += 1;
                    warn!("{}: non-monotone device time at seq {}, using sequence spacing", p.sensor, p.seq);
                    host = st.last_host + gap as i64 * self.interval_ms as i64;
                }
                st.last_seq = p.seq;
                st.last_host = host;
                st.last_arrival = arrival_ms;
                st.timed_out = false;
                host
            }
        };
        self.stats.packets[i] += 1;
        Some(AlignedSample {
            sensor: p.sensor,
            seq: p.seq,
            device_ms: p.device_ms,
            arrival_ms,
            host_ms,
            values: p.values.iter().map(|&v| v as f64).collect(),
        })
    }

    pub fn seen(&self, sensor: SensorId) -> bool {
        self.state[sensor.index()].is_some()
    }

    pub fn last_arrival(&self, sensor: SensorId) -> Option<u64> {
        self.state[sensor.index()].map(|s| s.last_arrival)
    }

    /// Flags sensors silent for longer than `timeout_ms` at host time `now`,
    /// once per silent spell. Returns the newly silent sensors.
    pub fn check_timeouts(&mut self, now_ms: u64, timeout_ms: u64) -> Vec<SensorId> {
        let mut out = Vec::new();
        for sensor in SensorId::ALL {
            let Some(st) = &mut self.state[sensor.index()] else { continue };
            if !st.timed_out && now_ms > st.last_arrival + timeout_ms {
                st.timed_out = true;
                warn!(
                    "E_SENSOR_TIMEOUT: {sensor} silent for {} ms",
                    now_ms - st.last_arrival
                );
                self.stats.timeouts.push(SensorTimeoutEvent {
                    sensor: sensor.name().to_string(),
                    last_arrival_ms: st.last_arrival,
                    detected_at_ms: now_ms,
                });
                out.push(sensor);
            }
        }
        out
    }

    /// Whether every sensor that has reported is currently timed out.
    pub fn all_silent(&self) -> bool {
        let seen: Vec<_> = self.state.iter().flatten().collect();
        !seen.is_empty() && seen.iter().all(|s| s.timed_out)
    }
}
