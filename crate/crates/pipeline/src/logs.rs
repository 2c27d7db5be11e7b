//! Session log files and the logging unit.
//!
//! Sensor logs: `insole_raw`, `insole_adjusted`, `insole_filtered`,
//! `imu_raw`, `imu_upsampled`, `imu_filtered`. Prediction logs: `grf`,
//! `angles_raw`, `angles_filtered`, `moments_raw`, `moments_filtered`.
//! Detected heel strikes go to `strikes`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::JoinHandle;

use gaitrt_core::features::{angle_channel, imu_stream_channels, insole_stream_channels, moment_channel};
use gaitrt_core::gait::Foot;
use gaitrt_core::synth::{IMU_AXES, N_FSR};

use crate::error::{PipelineError, Result};
use crate::packet::SensorId;

pub const LOG_FILES: [&str; 12] = [
    "insole_raw",
    "insole_adjusted",
    "insole_filtered",
    "imu_raw",
    "imu_upsampled",
    "imu_filtered",
    "grf",
    "angles_raw",
    "angles_filtered",
    "moments_raw",
    "moments_filtered",
    "strikes",
];

/// The log files whose rows are 1 kHz predictions.
pub const PREDICTION_LOGS: [&str; 5] = ["grf", "angles_raw", "angles_filtered", "moments_raw", "moments_filtered"];

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRow {
    pub arrival_ms: u64,
    pub sensor: SensorId,
    pub seq: u32,
    pub device_ms: u64,
    pub host_ms: i64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub session_ms: i64,
    pub host_ms: i64,
    pub valid: bool,
    pub gc_percent: [f64; 2],
    pub vgrf: [f64; 2],
    pub angles_raw: [f64; 10],
    pub angles_filtered: [f64; 10],
    pub moments_raw: [f64; 10],
    pub moments_filtered: [f64; 10],
}

impl PredictionRow {
    pub fn invalid(session_ms: i64, host_ms: i64) -> Self {
        Self {
            session_ms,
            host_ms,
            valid: false,
            gc_percent: [0.0; 2],
            vgrf: [0.0; 2],
            angles_raw: [0.0; 10],
            angles_filtered: [0.0; 10],
            moments_raw: [0.0; 10],
            moments_filtered: [0.0; 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogRow {
    Packet(PacketRow),
    /// One 1 kHz sensor frame: insole then IMU channels.
    Frame {
        session_ms: i64,
        host_ms: i64,
        upsampled: Vec<f64>,
        filtered: Vec<f64>,
    },
    Prediction(Box<PredictionRow>),
    Strike {
        session_ms: i64,
        host_ms: i64,
        foot: Foot,
    },
}

/// Where the processing unit sends its rows.
pub trait LogSink {
    fn send(&mut self, row: LogRow);
}

/// Keeps rows in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub rows: Vec<LogRow>,
}

impl LogSink for MemorySink {
    fn send(&mut self, row: LogRow) {
        self.rows.push(row);
    }
}

fn headers() -> Vec<Vec<String>> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let fsr: Vec<String> = (1..=N_FSR).map(|i| format!("fsr_{i}")).collect();
    let imu: Vec<String> = IMU_AXES.iter().map(|a| a.to_string()).collect();
    let raw = |extra: &str, ch: &[String]| {
        let mut h = s(&["arrival_ms", "sensor", "seq", extra]);
        h.extend(ch.iter().cloned());
        h
    };
    let tick = |ch: Vec<String>| {
        let mut h = s(&["session_ms", "host_ms", "valid"]);
        h.extend(ch);
        h
    };
    let gc = || vec!["gc_percent_r".to_string(), "gc_percent_l".to_string()];
    let sides = |f: &dyn Fn(usize, Foot) -> String| {
        let mut c = gc();
        for foot in Foot::BOTH {
            c.extend((0..5).map(|j| f(j, foot)));
        }
        c
    };
    let mut imu_raw = s(&["arrival_ms", "sensor", "seq", "device_ms", "host_ms"]);
    imu_raw.extend(imu);
    vec![
        raw("device_ms", &fsr),
        raw("host_ms", &fsr),
        tick(insole_stream_channels()),
        imu_raw,
        tick(imu_stream_channels()),
        tick(imu_stream_channels()),
        tick([gc(), vec!["vgrf_bw_r".into(), "vgrf_bw_l".into()]].concat()),
        tick(sides(&angle_channel)),
        tick(sides(&angle_channel)),
        tick(sides(&moment_channel)),
        tick(sides(&moment_channel)),
        s(&["session_ms", "host_ms", "foot"]),
    ]
}

/// CSV writers for one session directory.
pub struct LogWriter {
    writers: Vec<csv::Writer<BufWriter<File>>>,
    dir: PathBuf,
    pub rows_written: u64,
    cell: Vec<String>,
}

fn idx(name: &str) -> usize {
    LOG_FILES.iter().position(|f| *f == name).expect("known log file")
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

impl LogWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let mut writers = Vec::new();
        for (name, header) in LOG_FILES.iter().zip(headers()) {
            let path = dir.join(format!("{name}.csv"));
            let f = File::create(&path).map_err(|e| PipelineError::io(&path, e))?;
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(BufWriter::new(f));
            w.write_record(&header).map_err(|e| PipelineError::Log(e.to_string()))?;
            writers.push(w);
        }
        Ok(Self {
            writers,
            dir: dir.to_path_buf(),
            rows_written: 0,
            cell: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn emit(&mut self, file: usize) -> Result<()> {
        self.writers[file]
            .write_record(&self.cell)
            .map_err(|e| PipelineError::Log(e.to_string()))?;
        self.rows_written += 1;
        Ok(())
    }

    fn tick_prefix(&mut self, session_ms: i64, host_ms: i64, valid: bool) {
        self.cell.clear();
        self.cell.push(session_ms.to_string());
        self.cell.push(host_ms.to_string());
        self.cell.push((valid as u8).to_string());
    }

    pub fn write(&mut self, row: &LogRow) -> Result<()> {
        match row {
            LogRow::Packet(p) => {
                self.cell.clear();
                self.cell.push(p.arrival_ms.to_string());
                self.cell.push(p.sensor.name().to_string());
                self.cell.push(p.seq.to_string());
                if p.sensor.is_insole() {
                    self.cell.push(p.device_ms.to_string());
                    self.cell.extend(p.values.iter().map(|&v| fmt(v)));
                    self.emit(idx("insole_raw"))?;
                    self.cell.truncate(3);
                    self.cell.push(p.host_ms.to_string());
                    self.cell.extend(p.values.iter().map(|&v| fmt(v)));
                    self.emit(idx("insole_adjusted"))
                } else {
                    self.cell.push(p.device_ms.to_string());
                    self.cell.push(p.host_ms.to_string());
                    self.cell.extend(p.values.iter().map(|&v| fmt(v)));
                    self.emit(idx("imu_raw"))
                }
            }
            LogRow::Frame {
                session_ms,
                host_ms,
                upsampled,
                filtered,
            } => {
                let nf = 2 * N_FSR;
                self.tick_prefix(*session_ms, *host_ms, true);
                self.cell.extend(filtered[..nf].iter().map(|&v| fmt(v)));
                self.emit(idx("insole_filtered"))?;
                self.tick_prefix(*session_ms, *host_ms, true);
                self.cell.extend(upsampled[nf..].iter().map(|&v| fmt(v)));
                self.emit(idx("imu_upsampled"))?;
                self.tick_prefix(*session_ms, *host_ms, true);
                self.cell.extend(filtered[nf..].iter().map(|&v| fmt(v)));
                self.emit(idx("imu_filtered"))
            }
            LogRow::Prediction(p) => {
                let gc = p.gc_percent;
                let groups: [(&str, &[f64]); 5] = [
                    ("grf", &p.vgrf),
                    ("angles_raw", &p.angles_raw),
                    ("angles_filtered", &p.angles_filtered),
                    ("moments_raw", &p.moments_raw),
                    ("moments_filtered", &p.moments_filtered),
                ];
                for (name, values) in groups {
                    self.tick_prefix(p.session_ms, p.host_ms, p.valid);
                    if p.valid {
                        self.cell.extend(gc.iter().chain(values).map(|&v| fmt(v)));
                    } else {
                        self.cell.extend(std::iter::repeat(String::new()).take(2 + values.len()));
                    }
                    self.emit(idx(name))?;
                }
                Ok(())
            }
            LogRow::Strike {
                session_ms,
                host_ms,
                foot,
            } => {
                self.cell.clear();
                self.cell.push(session_ms.to_string());
                self.cell.push(host_ms.to_string());
                self.cell.push(foot.suffix().to_string());
                self.emit(idx("strikes"))
            }
        }
    }

    pub fn finish(mut self) -> Result<u64> {
        for w in &mut self.writers {
            w.flush().map_err(|e| PipelineError::io(&self.dir, e))?;
        }
        Ok(self.rows_written)
    }
}

/// What the logging unit does when its queue is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overflow {
    /// Drop the row and count it, so the processor never waits.
    Drop,
    /// Wait for space; used when replaying as fast as possible so that logs
    /// are complete and reproducible.
    Block,
}

/// Sending side of the logging unit.
pub struct ThreadedSink {
    tx: Option<SyncSender<LogRow>>,
    overflow: Overflow,
    dropped: Arc<AtomicU64>,
    handle: Option<JoinHandle<Result<u64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LogSummary {
    pub rows_written: u64,
    pub rows_dropped: u64,
}

impl ThreadedSink {
    pub fn spawn(writer: LogWriter, capacity: usize, overflow: Overflow) -> Result<Self> {
        let (tx, rx) = sync_channel::<LogRow>(capacity);
        let handle = std::thread::Builder::new()
            .name("gaitrt-log".into())
            .spawn(move || drain(writer, rx))
            .map_err(|e| PipelineError::Log(e.to_string()))?;
        Ok(Self {
            tx: Some(tx),
            overflow,
            dropped: Arc::new(AtomicU64::new(0)),
            handle: Some(handle),
        })
    }

    pub fn finish(mut self) -> Result<LogSummary> {
        drop(self.tx.take());
        let written = self
            .handle
            .take()
            .expect("joined once")
            .join()
            .map_err(|_| PipelineError::Log("logging thread panicked".into()))??;
        Ok(LogSummary {
            rows_written: written,
            rows_dropped: self.dropped.load(Ordering::Relaxed),
        })
    }
}

fn drain(mut writer: LogWriter, rx: Receiver<LogRow>) -> Result<u64> {
    for row in rx {
        writer.write(&row)?;
    }
    writer.finish()
}

impl LogSink for ThreadedSink {
    fn send(&mut self, row: LogRow) {
        let Some(tx) = &self.tx else { return };
        let lost = match self.overflow {
            Overflow::Block => tx.send(row).is_err(),
            Overflow::Drop => match tx.try_send(row) {
                Ok(()) => false,
                Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => true,
            },
        };
        if lost {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
    }
}
