//! Regression metrics, ensemble averaging over the gait cycle, and fold
//! aggregation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ground truth has zero range")]
    RangeError,
    #[error("correlation undefined: a series has zero variance")]
    CorrelationUndefined,
}

impl MetricsError {
    pub fn code(&self) -> &'static str {
        match self {
            MetricsError::EmptyInput => "E_EMPTY_INPUT",
            MetricsError::LengthMismatch(..) => "E_SHAPE",
            MetricsError::RangeError => "E_RANGE",
            MetricsError::CorrelationUndefined => "E_CORRELATION_UNDEFINED",
        }
    }
}

/// Error metrics of one prediction series against ground truth.
///
/// Normalized metrics are percentages of the ground-truth range. Entries
/// that are undefined for the data (zero range, zero variance) are `None`;
/// the accessors turn them into errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub nrmse: Option<f64>,
    pub nmae: Option<f64>,
    pub pearson_r: Option<f64>,
    pub r_squared: Option<f64>,
    pub n_samples: usize,
}

impl MetricReport {
    pub fn nrmse(&self) -> Result<f64, MetricsError> {
        self.nrmse.ok_or(MetricsError::RangeError)
    }

    pub fn nmae(&self) -> Result<f64, MetricsError> {
        self.nmae.ok_or(MetricsError::RangeError)
    }

    pub fn r(&self) -> Result<f64, MetricsError> {
        self.pearson_r.ok_or(MetricsError::CorrelationUndefined)
    }

    pub fn r2(&self) -> Result<f64, MetricsError> {
        self.r_squared.ok_or(MetricsError::RangeError)
    }

    /// `key=value` pairs, undefined entries rendered as `nan`.
    pub fn to_kv(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"));
        format!(
            "rmse={:.6} nrmse={} nmae={} r={} r2={} n={}",
            self.rmse,
            f(self.nrmse),
            f(self.nmae),
            f(self.pearson_r),
            f(self.r_squared),
            self.n_samples
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv())
    }
}

pub fn compute_report(y_true: &[f64], y_pred: &[f64]) -> Result<MetricReport, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = y_true.len() as f64;
    let (mut sse, mut sae) = (0.0, 0.0);
    for (t, p) in y_true.iter().zip(y_pred) {
        let e = p - t;
        sse += e * e;
        sae += e.abs();
    }
    let rmse = (sse / n).sqrt();
    let (lo, hi) = y_true
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let (nrmse, nmae) = if range > 0.0 {
        (Some(100.0 * rmse / range), Some(100.0 * (sae / n) / range))
    } else {
        (None, None)
    };

    let mean_t = y_true.iter().sum::<f64>() / n;
    let mean_p = y_pred.iter().sum::<f64>() / n;
    let (mut stt, mut spp, mut stp) = (0.0, 0.0, 0.0);
    for (t, p) in y_true.iter().zip(y_pred) {
        let (dt, dp) = (t - mean_t, p - mean_p);
        stt += dt * dt;
        spp += dp * dp;
        stp += dt * dp;
    }
    let pearson_r = (stt > 0.0 && spp > 0.0).then(|| (stp / (stt.sqrt() * spp.sqrt())).clamp(-1.0, 1.0));
    let r_squared = (stt > 0.0).then(|| 1.0 - sse / stt);
    Ok(MetricReport {
        rmse,
        nrmse,
        nmae,
        pearson_r,
        r_squared,
        n_samples: y_true.len(),
    })
}

/// Number of points on the gait-cycle grid (0, 1, ..., 100 %).
pub const GC_GRID: usize = 101;

/// Pointwise mean and population standard deviation over the GC grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleProfile {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_cycles: usize,
}

/// One cycle of one variable: samples at increasing GC% in `[0, 100]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleCurve {
    pub gc_percent: Vec<f64>,
    pub values: Vec<f64>,
}

impl CycleCurve {
    /// Linear interpolation onto the 101-point grid; the ends are held
    /// when the samples do not cover 0 or 100.
    pub fn on_grid(&self) -> Vec<f64> {
        let x = &self.gc_percent;
        let y = &self.values;
        let mut out = Vec::with_capacity(GC_GRID);
        let mut j = 0;
        for g in 0..GC_GRID {
            let g = g as f64;
            while j + 1 < x.len() && x[j + 1] <= g {
                j += 1;
            }
            let v = if g <= x[0] {
                y[0]
            } else if j + 1 >= x.len() {
                y[x.len() - 1]
            } else if x[j] == g {
                y[j]
            } else {
                let t = (g - x[j]) / (x[j + 1] - x[j]);
                y[j] + t * (y[j + 1] - y[j])
            };
            out.push(v);
        }
        out
    }
}

pub fn ensemble_average(cycles: &[CycleCurve]) -> Result<EnsembleProfile, MetricsError> {
    if cycles.is_empty() || cycles.iter().any(|c| c.values.is_empty()) {
        return Err(MetricsError::EmptyInput);
    }
    for c in cycles {
        if c.gc_percent.len() != c.values.len() {
            return Err(MetricsError::LengthMismatch(c.gc_percent.len(), c.values.len()));
        }
    }
    let grids: Vec<Vec<f64>> = cycles.iter().map(CycleCurve::on_grid).collect();
    let n = grids.len() as f64;
    let mut mean = vec![0.0; GC_GRID];
    for g in &grids {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut std = vec![0.0; GC_GRID];
    for g in &grids {
        for ((s, v), m) in std.iter_mut().zip(g).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    Ok(EnsembleProfile {
        mean,
        std,
        n_cycles: cycles.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Across-fold summary; each field aggregates the folds where the metric
/// is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rmse: MeanStd,
    pub nrmse: Option<MeanStd>,
    pub nmae: Option<MeanStd>,
    pub pearson_r: Option<MeanStd>,
    pub r_squared: Option<MeanStd>,
    pub n_reports: usize,
}

/// Sample mean and sample (N-1) standard deviation; a single value has
/// standard deviation 0.
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(MeanStd { mean, std })
}

pub fn fold_aggregate(reports: &[MetricReport]) -> Result<AggregateReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let pick = |f: fn(&MetricReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        mean_std(&v)
    };
    Ok(AggregateReport {
        rmse: pick(|r| Some(r.rmse)).expect("non-empty"),
        nrmse: pick(|r| r.nrmse),
        nmae: pick(|r| r.nmae),
        pearson_r: pick(|r| r.pearson_r),
        r_squared: pick(|r| r.r_squared),
        n_reports: reports.len(),
    })
}
