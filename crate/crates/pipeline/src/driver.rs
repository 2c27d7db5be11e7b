//! Session drivers wiring the ingest, processing and logging units.

use std::net::{ToSocketAddrs, UdpSocket};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use gaitrt_core::features::ChainModels;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::RealtimeConfig;
use crate::dump::{DumpRecord, DumpWriter};
use crate::error::{PipelineError, Result};
use crate::logs::{LogSink, LogSummary, LogWriter, Overflow, ThreadedSink};
use crate::realtime::{Processor, RunStats, StageLatency, WallClock};

type Datagram = (u64, Vec<u8>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub stats: RunStats,
    pub latency: StageLatency,
    pub rows_written: u64,
    pub rows_dropped: u64,
}

/// Replays dumped datagrams through the full pipeline, writing logs,
/// `session.json` and `latency.json` to `out`. Without `as_fast_as_possible`
/// the original inter-arrival timing is reproduced.
pub fn replay(
    records: Vec<DumpRecord>,
    models: ChainModels,
    cfg: &RealtimeConfig,
    out: &Path,
    as_fast_as_possible: bool,
) -> Result<SessionOutcome> {
    let first = records
        .first()
        .map(|r| r.arrival_ms)
        .ok_or_else(|| PipelineError::InsufficientData("dump holds no packets".into()))?;
    let writer = LogWriter::create(out)?;
    let overflow = if as_fast_as_possible { Overflow::Block } else { Overflow::Drop };
    let sink = ThreadedSink::spawn(writer, cfg.log_queue, overflow)?;
    let mut proc = Processor::new(cfg.clone(), models, sink)?;
    let (tx, rx) = sync_channel::<Datagram>(cfg.packet_queue);
    let wall = WallClock {
        start: Instant::now(),
        host_ms_at_start: first as f64,
    };
    let ingest = thread::Builder::new()
        .name("gaitrt-ingest".into())
        .spawn(move || {
            for r in records {
                if !as_fast_as_possible {
                    let due = wall.start + Duration::from_millis(r.arrival_ms - first);
                    let now = Instant::now();
                    if due > now {
                        thread::sleep(due - now);
                    }
                }
                if tx.send((r.arrival_ms, r.bytes)).is_err() {
                    break;
                }
            }
        })
        .map_err(|e| PipelineError::Config(format!("cannot start ingest thread: {e}")))?;
    let res = if as_fast_as_possible {
        process_as_fast_as_possible(&mut proc, &rx)
    } else {
        proc.set_wall_clock(wall);
        process_timed(&mut proc, &rx, wall, cfg, |_| false)
    };
    drop(rx);
    let _ = ingest.join();
    res?;
    finish_session(proc, out)
}

fn process_as_fast_as_possible<S: LogSink>(proc: &mut Processor<S>, rx: &Receiver<Datagram>) -> Result<()> {
    for (arrival, bytes) in rx.iter() {
        proc.advance_to(arrival as i64 - 1, None)?;
        proc.push(arrival, &bytes);
    }
    Ok(())
}

/// Processes against the wall clock until the ingest side hangs up or
/// `stop` says so.
fn process_timed<S: LogSink>(
    proc: &mut Processor<S>,
    rx: &Receiver<Datagram>,
    wall: WallClock,
    cfg: &RealtimeConfig,
    mut stop: impl FnMut(&Processor<S>) -> bool,
) -> Result<()> {
    let budget = Some(cfg.max_lag_ms);
    loop {
        let now = wall.host_now();
        let wait = proc.next_due().map_or(5.0, |d| (d as f64 + 1.0 - now).clamp(0.0, 5.0));
        match rx.recv_timeout(Duration::from_secs_f64(wait / 1000.0)) {
            Ok((arrival, bytes)) => {
                proc.advance_to(arrival as i64 - 1, budget)?;
                proc.push(arrival, &bytes);
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return Ok(()),
        }
        proc.advance_to(wall.host_now().floor() as i64 - 1, budget)?;
        if stop(proc) {
            return Ok(());
        }
    }
}

fn finish_session(proc: Processor<ThreadedSink>, out: &Path) -> Result<SessionOutcome> {
    let (sink, stats, latency) = proc.finish()?;
    let LogSummary {
        rows_written,
        rows_dropped,
    } = sink.finish()?;
    if rows_dropped > 0 {
        warn!("logging fell behind; {rows_dropped} rows dropped");
    }
    let outcome = SessionOutcome {
        stats,
        latency,
        rows_written,
        rows_dropped,
    };
    write_json(&out.join("session.json"), &outcome.stats)?;
    write_json(&out.join("latency.json"), &outcome.latency)?;
    info!(
        "session done: {} ticks, {} valid, {} skipped; moments done {:.2} ms after the window",
        outcome.stats.ticks, outcome.stats.valid_ticks, outcome.stats.skipped_ticks, outcome.latency.moments_done_ms
    );
    Ok(outcome)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Log(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}

fn unix_ms() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64() * 1000.0)
}

fn bind(addr: &str) -> Result<UdpSocket> {
    let addr = addr
        .to_socket_addrs()
        .map_err(PipelineError::Network)?
        .next()
        .ok_or_else(|| PipelineError::Config(format!("cannot resolve {addr}")))?;
    let socket = UdpSocket::bind(addr).map_err(PipelineError::Network)?;
    socket
        .set_read_timeout(Some(Duration::from_millis(20)))
        .map_err(PipelineError::Network)?;
    Ok(socket)
}

/// Receives datagrams, stamping them with host time, until `stop` is set.
fn spawn_udp_ingest(
    socket: UdpSocket,
    wall: WallClock,
    capacity: usize,
    stop: Arc<AtomicBool>,
) -> Result<(Receiver<Datagram>, thread::JoinHandle<()>)> {
    let (tx, rx) = sync_channel::<Datagram>(capacity);
    let handle = thread::Builder::new()
        .name("gaitrt-ingest".into())
        .spawn(move || {
            let mut buf = vec![0u8; 65_536];
            while !stop.load(Ordering::Relaxed) {
                match socket.recv_from(&mut buf) {
                    Ok((n, _)) => {
                        let arrival = wall.host_now().floor() as u64;
                        if tx.send((arrival, buf[..n].to_vec())).is_err() {
                            break;
                        }
                    }
                    Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                    Err(e) => {
                        warn!("E_NETWORK: {e}");
                        break;
                    }
                }
            }
        })
        .map_err(|e| PipelineError::Config(format!("cannot start ingest thread: {e}")))?;
    Ok((rx, handle))
}

/// Live session on a UDP socket. Ends `session_s` after the first packet,
/// or once every sensor has been silent past the timeout.
pub fn run_live(listen: &str, models: ChainModels, cfg: &RealtimeConfig, out: &Path) -> Result<SessionOutcome> {
    let socket = bind(listen)?;
    info!("listening on {listen}");
    let writer = LogWriter::create(out)?;
    let sink = ThreadedSink::spawn(writer, cfg.log_queue, Overflow::Drop)?;
    let mut proc = Processor::new(cfg.clone(), models, sink)?;
    let wall = WallClock {
        start: Instant::now(),
        host_ms_at_start: unix_ms(),
    };
    proc.set_wall_clock(wall);
    let stop = Arc::new(AtomicBool::new(false));
    let (rx, handle) = spawn_udp_ingest(socket, wall, cfg.packet_queue, stop.clone())?;
    let session_ms = cfg.session_s * 1000.0;
    let res = process_timed(&mut proc, &rx, wall, cfg, |p| {
        p.all_silent() || p.first_arrival().is_some_and(|f| wall.host_now() - f as f64 >= session_ms)
    });
    stop.store(true, Ordering::Relaxed);
    drop(rx);
    let _ = handle.join();
    res?;
    finish_session(proc, out)
}

/// Records datagrams from `listen` into a dump file.
pub fn record_dump(listen: &str, cfg: &RealtimeConfig, path: &Path) -> Result<u64> {
    let socket = bind(listen)?;
    let wall = WallClock {
        start: Instant::now(),
        host_ms_at_start: unix_ms(),
    };
    let mut w = DumpWriter::create(path)?;
    let mut buf = vec![0u8; 65_536];
    let mut first: Option<f64> = None;
    let mut last = wall.host_now();
    loop {
        let now = wall.host_now();
        if first.is_some_and(|f| now - f >= cfg.session_s * 1000.0) {
            break;
        }
        if first.is_some() && now - last > cfg.sensor_timeout_ms as f64 {
            warn!("E_SENSOR_TIMEOUT: no packets for {} ms, ending the recording", (now - last) as u64);
            break;
        }
        match socket.recv_from(&mut buf) {
            Ok((n, _)) => {
                let arrival = wall.host_now();
                first.get_or_insert(arrival);
                last = arrival;
                w.write(arrival.floor() as u64, &buf[..n]).map_err(|e| PipelineError::io(path, e))?;
            }
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(PipelineError::Network(e)),
        }
    }
    let n = w.records();
    w.finish().map_err(|e| PipelineError::io(path, e))?;
    Ok(n)
}
