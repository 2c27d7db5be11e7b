//! Ensemble-average comparison of real-time predictions with reference
//! ground truth over the gait cycle.

use std::path::Path;

use gaitrt_core::features::{angle_channel, moment_channel, vgrf_channel};
use gaitrt_core::gait::Foot;
use gaitrt_core::metrics::{compute_report, ensemble_average, CycleCurve, EnsembleProfile, GC_GRID};
use gaitrt_core::signal::resample_linear;
use gaitrt_core::synth::{SyntheticTrial, JOINTS};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub const N_VARIABLES: usize = 11;

/// vGRF, the five joint angles, then the five joint moments.
pub fn variable_names() -> Vec<String> {
    let mut v = vec!["vgrf".to_string()];
    v.extend(JOINTS.iter().map(|j| format!("angle_{j}")));
    v.extend(JOINTS.iter().map(|j| format!("moment_{j}")));
    v
}

fn channels(foot: Foot) -> Vec<String> {
    let mut c = vec![vgrf_channel(foot)];
    c.extend((0..5).map(|j| angle_channel(j, foot)));
    c.extend((0..5).map(|j| moment_channel(j, foot)));
    c
}

/// Which angle and moment logs to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionLog {
    Raw,
    Filtered,
}

/// Prediction logs of one session, one row per tick.
#[derive(Debug, Clone, PartialEq)]
pub struct RtLogs {
    pub session_ms: Vec<i64>,
    pub valid: Vec<bool>,
    /// Per leg `[right, left]`, per row, the eleven variables.
    pub values: [Vec<[f64; N_VARIABLES]>; 2],
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| PipelineError::Log(format!("{}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| PipelineError::Log(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::Log(format!("{}: {e}", path.display())))?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| PipelineError::Log(format!("{}: no column {name}", path.display())))
}

pub fn read_rt_logs(dir: &Path, which: PredictionLog) -> Result<RtLogs> {
    let suffix = match which {
        PredictionLog::Raw => "raw",
        PredictionLog::Filtered => "filtered",
    };
    let files = [
        dir.join("grf.csv"),
        dir.join(format!("angles_{suffix}.csv")),
        dir.join(format!("moments_{suffix}.csv")),
    ];
    let tables = files.iter().map(|p| read_csv(p)).collect::<Result<Vec<_>>>()?;
    let n = tables[0].1.len();
    if tables.iter().any(|t| t.1.len() != n) {
        return Err(PipelineError::Log("prediction logs differ in length".into()));
    }
    let mut out = RtLogs {
        session_ms: Vec::with_capacity(n),
        valid: Vec::with_capacity(n),
        values: [vec![[0.0; N_VARIABLES]; n], vec![[0.0; N_VARIABLES]; n]],
    };
    let bad = |p: &Path, row: usize, msg: &str| PipelineError::Log(format!("{} row {}: {msg}", p.display(), row + 2));
    for (i, row) in tables[0].1.iter().enumerate() {
        let t: i64 = row[0].parse().map_err(|_| bad(&files[0], i, "bad session_ms"))?;
        out.session_ms.push(t);
        out.valid.push(&row[2] == "1");
    }
    for foot in Foot::BOTH {
        let names = channels(foot);
        for (v, name) in names.iter().enumerate() {
            let f = match v {
                0 => 0,
                1..=5 => 1,
                _ => 2,
            };
            let (header, rows) = &tables[f];
            let c = column(header, name, &files[f])?;
            for (i, row) in rows.iter().enumerate() {
                if row[0].parse::<i64>().ok() != Some(out.session_ms[i]) {
                    return Err(bad(&files[f], i, "rows out of step with grf.csv"));
                }
                if out.valid[i] {
                    out.values[foot.index()][i][v] = row[c].parse().map_err(|_| bad(&files[f], i, "bad value"))?;
                }
            }
        }
    }
    Ok(out)
}

/// Detected heel strikes from `strikes.csv`, `[right, left]`, session ms.
pub fn read_strikes(dir: &Path) -> Result<[Vec<f64>; 2]> {
    let path = dir.join("strikes.csv");
    let (_, rows) = read_csv(&path)?;
    let mut out = [Vec::new(), Vec::new()];
    for (i, row) in rows.iter().enumerate() {
        let t: f64 = row[0]
            .parse()
            .map_err(|_| PipelineError::Log(format!("{} row {}: bad session_ms", path.display(), i + 2)))?;
        let foot = if &row[2] == "r" { Foot::Right } else { Foot::Left };
        out[foot.index()].push(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableComparison {
    pub variable: String,
    pub r: f64,
    pub r2: f64,
    pub rt: EnsembleProfile,
    pub reference: EnsembleProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rt_cycles: usize,
    pub reference_cycles: usize,
    pub variables: Vec<VariableComparison>,
}

impl ComparisonReport {
    /// `variable,r,r2` rows.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("variable,r,r2,rt_cycles,reference_cycles\n");
        for v in &self.variables {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                v.variable, v.r, v.r2, self.rt_cycles, self.reference_cycles
            ));
        }
        s
    }

    /// Mean and standard deviation of both profiles on the GC grid.
    pub fn profiles_csv(&self) -> String {
        let mut s = String::from("gc_percent");
        for v in &self.variables {
            for part in ["rt_mean", "rt_std", "ref_mean", "ref_std"] {
                s.push_str(&format!(",{}_{part}", v.variable));
            }
        }
        s.push('\n');
        for g in 0..GC_GRID {
            s.push_str(&g.to_string());
            for v in &self.variables {
                for x in [v.rt.mean[g], v.rt.std[g], v.reference.mean[g], v.reference.std[g]] {
                    s.push_str(&format!(",{x}"));
                }
            }
            s.push('\n');
        }
        s
    }
}

fn push_cycle(curves: &mut [Vec<CycleCurve>], s0: f64, s1: f64, samples: impl Iterator<Item = (f64, [f64; N_VARIABLES])>) {
    let mut gc = Vec::new();
    let mut vals: Vec<Vec<f64>> = vec![Vec::new(); N_VARIABLES];
    for (t, v) in samples {
        gc.push(100.0 * (t - s0) / (s1 - s0));
        for (c, x) in vals.iter_mut().zip(v) {
            c.push(x);
        }
    }
    for (c, values) in curves.iter_mut().zip(vals) {
        c.push(CycleCurve {
            gc_percent: gc.clone(),
            values,
        });
    }
}

/// Cycles of the RT logs between consecutive same-foot strikes in which
/// every tick is present and valid; each leg is cut on its own strikes.
pub fn rt_cycles(rt: &RtLogs, strikes: &[Vec<f64>; 2]) -> Vec<Vec<CycleCurve>> {
    let mut curves = vec![Vec::new(); N_VARIABLES];
    let Some(&first) = rt.session_ms.first() else { return curves };
    for foot in Foot::BOTH {
        for w in strikes[foot.index()].windows(2) {
            let (s0, s1) = (w[0], w[1]);
            let lo = (s0.ceil() as i64 - first).max(0) as usize;
            let hi = (s1.ceil() as i64 - first).max(0) as usize;
            if hi > rt.session_ms.len() || lo >= hi || (s0.ceil() as i64) < first {
                continue;
            }
            let complete = (lo..hi).all(|i| rt.valid[i] && rt.session_ms[i] == first + i as i64);
            if !complete {
                continue;
            }
            let v = &rt.values[foot.index()];
            push_cycle(&mut curves, s0, s1, (lo..hi).map(|i| (rt.session_ms[i] as f64, v[i])));
        }
    }
    curves
}

/// All complete cycles of the reference trials' ground truth at 1 kHz.
pub fn reference_cycles(reference: &[SyntheticTrial]) -> Result<Vec<Vec<CycleCurve>>> {
    let mut curves = vec![Vec::new(); N_VARIABLES];
    for trial in reference {
        let truth = resample_linear(&trial.truth, 1000.0)?;
        for foot in Foot::BOTH {
            let idx: Vec<usize> = channels(foot)
                .iter()
                .map(|c| {
                    truth
                        .channel_index(&format!("gt_{c}"))
                        .ok_or_else(|| PipelineError::InsufficientData(format!("reference lacks gt_{c}")))
                })
                .collect::<Result<_>>()?;
            let strikes = trial.strikes(foot);
            for w in strikes.windows(2) {
                let (s0, s1) = (w[0], w[1]);
                let rows = (0..truth.len()).filter(|&i| {
                    let t = truth.time_ms(i);
                    s0 <= t && t < s1
                });
                let samples = rows.map(|i| {
                    let mut v = [0.0; N_VARIABLES];
                    for (x, &c) in v.iter_mut().zip(&idx) {
                        *x = truth.row(i)[c];
                    }
                    (truth.time_ms(i), v)
                });
                push_cycle(&mut curves, s0, s1, samples);
            }
        }
    }
    Ok(curves)
}

/// Pearson r and coefficient of determination between the RT and
/// reference mean profiles of each variable.
pub fn compare_to_reference(
    rt: &RtLogs,
    rt_strikes: &[Vec<f64>; 2],
    reference: &[SyntheticTrial],
) -> Result<ComparisonReport> {
    let rt_curves = rt_cycles(rt, rt_strikes);
    let ref_curves = reference_cycles(reference)?;
    if rt_curves[0].is_empty() {
        return Err(PipelineError::InsufficientData("real-time logs hold no complete valid cycle".into()));
    }
    if ref_curves[0].is_empty() {
        return Err(PipelineError::InsufficientData("reference holds no complete cycle".into()));
    }
    let mut variables = Vec::new();
    for (v, name) in variable_names().into_iter().enumerate() {
        let a = ensemble_average(&rt_curves[v])?;
        let b = ensemble_average(&ref_curves[v])?;
        let report = compute_report(&b.mean, &a.mean)?;
        variables.push(VariableComparison {
            variable: name,
            r: report.r()?,
            r2: report.r2()?,
            rt: a,
            reference: b,
        });
    }
    Ok(ComparisonReport {
        rt_cycles: rt_curves[0].len(),
        reference_cycles: ref_curves[0].len(),
        variables,
    })
}
