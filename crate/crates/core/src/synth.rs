//! Deterministic synthetic gait data and the on-disk dataset format.
//!
//! Joint angles and moments are Fourier series in gait-cycle phase, vGRF is
//! a tapered two-hump stance curve, insole channels are saturating
//! projections of vGRF onto stance-phase basis functions, and IMU channels
//! are derived analytically from segment angles. The left leg repeats the
//! right leg half a stride later.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::{Foot, HeelStrikeEvent, StrikeSource};
use crate::matrix::Matrix;
use crate::signal::SampleSeries;

pub const GRAVITY: f64 = 9.81;
pub const IMU_RATE_HZ: f64 = 25.0;
pub const TRUTH_RATE_HZ: f64 = 100.0;
pub const HARMONICS: usize = 6;
pub const N_FSR: usize = 8;
pub const N_BASIS: usize = 4;
pub const JOINTS: [&str; 5] = ["hipflex", "hipadd", "hiprot", "kneeflex", "ankleflex"];
pub const IMU_AXES: [&str; 9] = ["ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz"];
/// Right shank, right foot, left shank, left foot.
pub const IMU_SITES: [&str; 4] = ["rs", "rf", "ls", "lf"];

const IMU_PERIOD_MS: u64 = 40;
const TRUTH_PERIOD_MS: u64 = 10;
const MAG_FIELD: [f64; 3] = [20.0, 0.0, -45.0];
const BASIS_CENTERS: [f64; N_BASIS] = [0.08, 0.35, 0.7, 0.92];
const BASIS_WIDTH: f64 = 0.16;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("trial of {duration_ms} ms is shorter than two strides of {stride_ms} ms")]
    InsufficientDuration { duration_ms: u64, stride_ms: u64 },
    #[error("{path}:{line}: {msg}")]
    Format { path: String, line: u64, msg: String },
    #[error("{path}:{line}: {msg}")]
    Data { path: String, line: u64, msg: String },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        match self {
            SynthError::InsufficientDuration { .. } => "E_INSUFFICIENT_DURATION",
            SynthError::Format { .. } => "E_FORMAT",
            SynthError::Data { .. } => "E_DATA",
            SynthError::InvalidProfile(_) => "E_PROFILE",
            SynthError::Io { .. } => "E_IO",
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> SynthError {
    SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `a0 + sum_k a_k cos(2 pi k p) + b_k sin(2 pi k p)` over phase `p` in [0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fourier {
    pub a0: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Fourier {
    /// Least-squares truncation of a periodic function to `harmonics` terms.
    pub fn fit(f: impl Fn(f64) -> f64, harmonics: usize) -> Self {
        let n = 512;
        let samples: Vec<f64> = (0..n).map(|i| f(i as f64 / n as f64)).collect();
        let a0 = samples.iter().sum::<f64>() / n as f64;
        let mut a = vec![0.0; harmonics];
        let mut b = vec![0.0; harmonics];
        for k in 1..=harmonics {
            for (i, v) in samples.iter().enumerate() {
                let w = 2.0 * PI * (k * i) as f64 / n as f64;
                a[k - 1] += v * w.cos();
                b[k - 1] += v * w.sin();
            }
            a[k - 1] *= 2.0 / n as f64;
            b[k - 1] *= 2.0 / n as f64;
        }
        Self { a0, a, b }
    }

    pub fn eval(&self, p: f64) -> f64 {
        let mut v = self.a0;
        for k in 0..self.a.len() {
            let w = 2.0 * PI * (k + 1) as f64 * p;
            v += self.a[k] * w.cos() + self.b[k] * w.sin();
        }
        v
    }

    /// First derivative with respect to phase.
    pub fn deriv(&self, p: f64) -> f64 {
        let mut v = 0.0;
        for k in 0..self.a.len() {
            let c = 2.0 * PI * (k + 1) as f64;
            let w = c * p;
            v += c * (self.b[k] * w.cos() - self.a[k] * w.sin());
        }
        v
    }

    /// Second derivative with respect to phase.
    pub fn deriv2(&self, p: f64) -> f64 {
        let mut v = 0.0;
        for k in 0..self.a.len() {
            let c = 2.0 * PI * (k + 1) as f64;
            let w = c * p;
            v -= c * c * (self.a[k] * w.cos() + self.b[k] * w.sin());
        }
        v
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            a0: self.a0 * s,
            a: self.a.iter().map(|v| v * s).collect(),
            b: self.b.iter().map(|v| v * s).collect(),
        }
    }
}

/// Periodic Gaussian bump on the unit phase circle.
fn bump(p: f64, center: f64, width: f64) -> f64 {
    (-1..=1)
        .map(|m| {
            let d = p - center + m as f64;
            (-d * d / (2.0 * width * width)).exp()
        })
        .sum()
}

fn canonical_angle(joint: usize, p: f64) -> f64 {
    match joint {
        0 => 8.0 + 22.0 * (2.0 * PI * (p - 0.02)).cos() + 4.0 * bump(p, 0.88, 0.06),
        1 => 4.0 * bump(p, 0.15, 0.08) - 3.0 * bump(p, 0.65, 0.1),
        2 => 4.0 * (2.0 * PI * p + 1.0).sin(),
        3 => 4.0 + 16.0 * bump(p, 0.15, 0.06) + 55.0 * bump(p, 0.72, 0.1),
        _ => -5.0 * bump(p, 0.07, 0.04) + 9.0 * bump(p, 0.42, 0.12) - 17.0 * bump(p, 0.63, 0.05),
    }
}

/// Per kilogram of body mass.
fn canonical_moment(joint: usize, p: f64) -> f64 {
    match joint {
        0 => 0.6 * bump(p, 0.05, 0.06) - 0.7 * bump(p, 0.48, 0.08) + 0.2 * bump(p, 0.9, 0.05),
        1 => 0.8 * bump(p, 0.15, 0.06) + 0.7 * bump(p, 0.45, 0.07),
        2 => 0.15 * bump(p, 0.12, 0.05) - 0.12 * bump(p, 0.45, 0.06),
        3 => -0.4 * bump(p, 0.12, 0.05) + 0.3 * bump(p, 0.4, 0.08) - 0.2 * bump(p, 0.6, 0.04),
        _ => 1.4 * bump(p, 0.47, 0.09) - 0.1 * bump(p, 0.05, 0.03),
    }
}

/// Weight-normalized vGRF over the stance phase, zero in swing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrfShape {
    pub peak_bw: f64,
    pub stance_fraction: f64,
    /// `(amplitude, center, width)` in stance-phase units.
    pub humps: [(f64, f64, f64); 2],
    pub plateau: f64,
    scale: f64,
}

impl GrfShape {
    pub fn new(peak_bw: f64, stance_fraction: f64, humps: [(f64, f64, f64); 2], plateau: f64) -> Self {
        let mut g = Self {
            peak_bw,
            stance_fraction,
            humps,
            plateau,
            scale: 1.0,
        };
        let max = (0..=2000).map(|i| g.raw(i as f64 / 2000.0)).fold(0.0, f64::max);
        g.scale = peak_bw / max;
        g
    }

    fn raw(&self, s: f64) -> f64 {
        if !(0.0..1.0).contains(&s) {
            return 0.0;
        }
        let taper = (PI * s).sin().powf(0.35);
        let body: f64 = self.plateau
            + self
                .humps
                .iter()
                .map(|&(a, c, w)| a * (-(s - c) * (s - c) / (2.0 * w * w)).exp())
                .sum::<f64>();
        taper * body
    }

    /// Stance-phase coordinate in [0, 1) for gait phase `p`, if in stance.
    pub fn stance_phase(&self, p: f64) -> Option<f64> {
        (p < self.stance_fraction).then(|| p / self.stance_fraction)
    }

    pub fn eval(&self, p: f64) -> f64 {
        match self.stance_phase(p) {
            Some(s) => self.scale * self.raw(s),
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    /// m/s^2
    pub accel: f64,
    /// deg/s
    pub gyro: f64,
    /// uT
    pub mag: f64,
    pub fsr: f64,
}

impl NoiseLevels {
    pub fn zero() -> Self {
        Self {
            accel: 0.0,
            gyro: 0.0,
            mag: 0.0,
            fsr: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::zero()
    }
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            accel: 0.05,
            gyro: 1.0,
            mag: 0.3,
            fsr: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    pub mass_kg: f64,
    pub height_cm: f64,
    /// Multiple of 20 ms so both feet strike on the 100 Hz grid.
    pub stride_ms: u64,
    /// Degrees, in [`JOINTS`] order.
    pub angles: Vec<Fourier>,
    /// N*m, in [`JOINTS`] order.
    pub moments: Vec<Fourier>,
    pub grf: GrfShape,
    pub fsr_weights: Vec<[f64; N_BASIS]>,
    pub fsr_gain: f64,
    /// Sensor mounting pitch offsets in degrees, in [`IMU_SITES`] order.
    pub imu_offsets_deg: [f64; 4],
    pub noise: NoiseLevels,
}

impl SubjectProfile {
    pub fn canonical(subject_id: &str) -> Self {
        let mass_kg = 70.0;
        Self {
            subject_id: subject_id.to_string(),
            mass_kg,
            height_cm: 175.0,
            stride_ms: 1100,
            angles: (0..5).map(|j| Fourier::fit(|p| canonical_angle(j, p), HARMONICS)).collect(),
            moments: (0..5)
                .map(|j| Fourier::fit(|p| canonical_moment(j, p), HARMONICS).scaled(mass_kg))
                .collect(),
            grf: GrfShape::new(1.1, 0.6, [(0.5, 0.22, 0.1), (0.45, 0.75, 0.1)], 0.75),
            fsr_weights: (0..N_FSR)
                .map(|c| {
                    let mut w = [0.15; N_BASIS];
                    w[c * N_BASIS / N_FSR] = 1.0;
                    w
                })
                .collect(),
            fsr_gain: 1.5,
            imu_offsets_deg: [0.0; 4],
            noise: NoiseLevels::default(),
        }
    }

    /// A subject with seeded variation around the canonical profile.
    pub fn sample(subject_id: &str, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::canonical(subject_id);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let jitter = |rng: &mut ChaCha8Rng, sd: f64| sd * unit.sample(rng);
        p.mass_kg = rng.gen_range(58.0..85.0);
        p.height_cm = rng.gen_range(160.0..190.0);
        p.stride_ms = 20 * rng.gen_range(50..=58);
        p.angles = (0..5)
            .map(|j| {
                let scale = 1.0 + jitter(rng, 0.12);
                let shift = jitter(rng, 0.02);
                let offset = jitter(rng, 2.5);
                Fourier::fit(|ph| offset + scale * canonical_angle(j, ph - shift), HARMONICS)
            })
            .collect();
        p.moments = (0..5)
            .map(|j| {
                let scale = 1.0 + jitter(rng, 0.12);
                let shift = jitter(rng, 0.015);
                Fourier::fit(|ph| scale * canonical_moment(j, ph - shift), HARMONICS).scaled(p.mass_kg)
            })
            .collect();
        let h1 = (0.5 * (1.0 + jitter(rng, 0.1)), 0.22 + jitter(rng, 0.02), 0.1);
        let h2 = (0.45 * (1.0 + jitter(rng, 0.1)), 0.75 + jitter(rng, 0.02), 0.1);
        p.grf = GrfShape::new(
            rng.gen_range(1.02..1.18),
            rng.gen_range(0.58..0.63),
            [h1, h2],
            0.75 * (1.0 + jitter(rng, 0.05)),
        );
        for w in &mut p.fsr_weights {
            for v in w.iter_mut() {
                *v *= rng.gen_range(0.6..1.4);
            }
        }
        p.fsr_gain *= rng.gen_range(0.8..1.25);
        for o in &mut p.imu_offsets_deg {
            *o = rng.gen_range(-5.0..5.0);
        }
        p
    }

    fn validate(&self) -> Result<(), SynthError> {
        if !(self.mass_kg > 0.0 && self.height_cm > 0.0) || self.stride_ms == 0 || self.stride_ms % 20 != 0 {
            return Err(SynthError::InvalidProfile(format!(
                "{}: mass, height must be positive and the stride a positive multiple of 20 ms",
                self.subject_id
            )));
        }
        if self.angles.len() != 5 || self.moments.len() != 5 || self.fsr_weights.len() != N_FSR {
            return Err(SynthError::InvalidProfile(format!("{}: wrong series count", self.subject_id)));
        }
        Ok(())
    }

    pub fn weight_n(&self) -> f64 {
        self.mass_kg * GRAVITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectInfo {
    pub subject_id: String,
    pub mass_kg: f64,
    pub height_cm: f64,
}

impl SubjectInfo {
    pub fn weight_n(&self) -> f64 {
        self.mass_kg * GRAVITY
    }
}

impl From<&SubjectProfile> for SubjectInfo {
    fn from(p: &SubjectProfile) -> Self {
        Self {
            subject_id: p.subject_id.clone(),
            mass_kg: p.mass_kg,
            height_cm: p.height_cm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrial {
    pub subject_id: String,
    pub trial_id: String,
    /// Right then left, 25 Hz, channels `fsr_{r,l}1..8`.
    pub insoles: Vec<SampleSeries>,
    /// In [`IMU_SITES`] order, 25 Hz, channels `imu_<site>_<axis>`.
    pub imus: Vec<SampleSeries>,
    /// 100 Hz ground truth with the `gt_*` columns.
    pub truth: SampleSeries,
    /// Both feet, time ordered.
    pub heel_strikes: Vec<HeelStrikeEvent>,
}

impl SyntheticTrial {
    pub fn insole(&self, foot: Foot) -> &SampleSeries {
        &self.insoles[foot.index()]
    }

    pub fn strikes(&self, foot: Foot) -> Vec<f64> {
        self.heel_strikes
            .iter()
            .filter(|e| e.foot == foot)
            .map(|e| e.time_ms)
            .collect()
    }

    pub fn duration_ms(&self) -> f64 {
        self.truth.time_ms(self.truth.len() - 1) - self.truth.start_ms()
    }
}

pub fn insole_channels(foot: Foot) -> Vec<String> {
    (1..=N_FSR).map(|i| format!("fsr_{}{i}", foot.suffix())).collect()
}

pub fn imu_channels(site: &str) -> Vec<String> {
    IMU_AXES.iter().map(|a| format!("imu_{site}_{a}")).collect()
}

pub fn truth_channels() -> Vec<String> {
    let mut c = vec!["gt_vgrf_bw_r".to_string(), "gt_vgrf_bw_l".to_string()];
    for kind in ["angle", "moment"] {
        let unit = if kind == "angle" { "deg" } else { "nm" };
        for side in ["r", "l"] {
            for j in JOINTS {
                c.push(format!("gt_{kind}_{j}_{side}_{unit}"));
            }
        }
    }
    c.push("gt_gc_percent_r".to_string());
    c.push("gt_gc_percent_l".to_string());
    c
}

pub fn angle_column(joint: &str, foot: Foot) -> String {
    format!("gt_angle_{joint}_{}_deg", foot.suffix())
}

pub fn moment_column(joint: &str, foot: Foot) -> String {
    format!("gt_moment_{joint}_{}_nm", foot.suffix())
}

pub fn vgrf_column(foot: Foot) -> String {
    format!("gt_vgrf_bw_{}", foot.suffix())
}

pub fn gc_column(foot: Foot) -> String {
    format!("gt_gc_percent_{}", foot.suffix())
}

/// Every trial CSV column after `time_ms`, in file order.
pub fn trial_columns() -> Vec<String> {
    let mut c = insole_channels(Foot::Right);
    c.extend(insole_channels(Foot::Left));
    for site in IMU_SITES {
        c.extend(imu_channels(site));
    }
    c.extend(truth_channels());
    c
}

struct Phase {
    stride_ms: u64,
}

impl Phase {
    /// Phase in [0, 1) of `foot` at integer time `t_ms`.
    fn at(&self, foot: Foot, t_ms: u64) -> f64 {
        let shift = match foot {
            Foot::Right => 0,
            Foot::Left => self.stride_ms / 2,
        };
        let local = (t_ms + self.stride_ms - shift) % self.stride_ms;
        local as f64 / self.stride_ms as f64
    }
}

/// The nine IMU channels of one segment at phase `p`.
pub fn imu_sample(profile: &SubjectProfile, site: usize, p: f64) -> [f64; 9] {
    let foot = if site < 2 { Foot::Right } else { Foot::Left };
    let segment = site % 2;
    let stride_s = profile.stride_ms as f64 / 1000.0;
    let a = &profile.angles;
    let mirror = if foot == Foot::Right { 1.0 } else { -1.0 };
    let (pitch, pitch_d, pitch_dd) = if segment == 0 {
        (
            a[0].eval(p) - a[3].eval(p),
            a[0].deriv(p) - a[3].deriv(p),
            a[0].deriv2(p) - a[3].deriv2(p),
        )
    } else {
        (
            a[0].eval(p) - a[3].eval(p) + a[4].eval(p),
            a[0].deriv(p) - a[3].deriv(p) + a[4].deriv(p),
            a[0].deriv2(p) - a[3].deriv2(p) + a[4].deriv2(p),
        )
    };
    let pitch = pitch + profile.imu_offsets_deg[site];
    let pitch_rate = pitch_d / stride_s;
    let pitch_acc = pitch_dd / (stride_s * stride_s);
    let roll = 0.5 * mirror * a[1].eval(p);
    let roll_rate = 0.5 * mirror * a[1].deriv(p) / stride_s;
    let yaw = 0.5 * mirror * a[2].eval(p);
    let yaw_rate = 0.5 * mirror * a[2].deriv(p) / stride_s;
    let lever = if segment == 0 { 0.22 } else { 0.08 } * profile.height_cm / 100.0;

    let (th, ph, ps) = (pitch.to_radians(), roll.to_radians(), yaw.to_radians());
    let thd = pitch_rate.to_radians();
    let thdd = pitch_acc.to_radians();
    let [bx, _, bz] = MAG_FIELD;
    [
        GRAVITY * th.sin() + lever * thdd,
        GRAVITY * th.cos() * ph.sin(),
        GRAVITY * th.cos() * ph.cos() - lever * thd * thd,
        roll_rate,
        pitch_rate,
        yaw_rate,
        bx * ps.cos() * th.cos() - bz * th.sin(),
        -bx * ps.sin(),
        bx * ps.cos() * th.sin() + bz * th.cos(),
    ]
}

/// Noise-free insole channels of one foot at phase `p`, in [0, 1).
pub fn insole_sample(profile: &SubjectProfile, p: f64) -> [f64; N_FSR] {
    let mut out = [0.0; N_FSR];
    let Some(s) = profile.grf.stance_phase(p) else { return out };
    let f = profile.grf.eval(p);
    for (c, w) in profile.fsr_weights.iter().enumerate() {
        let load: f64 = w
            .iter()
            .zip(BASIS_CENTERS)
            .map(|(wb, cb)| wb * (-(s - cb) * (s - cb) / (2.0 * BASIS_WIDTH * BASIS_WIDTH)).exp())
            .sum();
        let x = profile.fsr_gain * f * load;
        out[c] = x / (1.0 + x);
    }
    out
}

/// Generates a trial of `duration_s` seconds (rounded down to the 40 ms
/// sensor grid), starting at a right heel strike at time 0.
pub fn generate_trial(
    profile: &SubjectProfile,
    trial_id: &str,
    duration_s: f64,
    seed: u64,
) -> Result<SyntheticTrial, SynthError> {
    profile.validate()?;
    let duration_ms = ((duration_s * 1000.0).max(0.0) as u64) / IMU_PERIOD_MS * IMU_PERIOD_MS;
    if duration_ms < 2 * profile.stride_ms {
        return Err(SynthError::InsufficientDuration {
            duration_ms,
            stride_ms: profile.stride_ms,
        });
    }
    let phase = Phase {
        stride_ms: profile.stride_ms,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = profile.noise;

    let n_imu = (duration_ms / IMU_PERIOD_MS + 1) as usize;
    let mut insole_data = [Matrix::zeros(n_imu, N_FSR), Matrix::zeros(n_imu, N_FSR)];
    let mut imu_data: Vec<Matrix> = (0..4).map(|_| Matrix::zeros(n_imu, 9)).collect();
    for i in 0..n_imu {
        let t = i as u64 * IMU_PERIOD_MS;
        for foot in Foot::BOTH {
            let p = phase.at(foot, t);
            let clean = insole_sample(profile, p);
            let row = insole_data[foot.index()].row_mut(i);
            for c in 0..N_FSR {
                let v = clean[c] + noise.fsr * unit.sample(&mut rng);
                row[c] = v.clamp(0.0, 1.0);
            }
        }
        for (site, data) in imu_data.iter_mut().enumerate() {
            let foot = if site < 2 { Foot::Right } else { Foot::Left };
            let clean = imu_sample(profile, site, phase.at(foot, t));
            let row = data.row_mut(i);
            for c in 0..9 {
                let sd = match c {
                    0..=2 => noise.accel,
                    3..=5 => noise.gyro,
                    _ => noise.mag,
                };
                row[c] = if sd > 0.0 { clean[c] + sd * unit.sample(&mut rng) } else { clean[c] };
            }
        }
    }

    let n_truth = (duration_ms / TRUTH_PERIOD_MS + 1) as usize;
    let columns = truth_channels();
    let mut truth = Matrix::zeros(n_truth, columns.len());
    for i in 0..n_truth {
        let t = i as u64 * TRUTH_PERIOD_MS;
        let pr = phase.at(Foot::Right, t);
        let pl = phase.at(Foot::Left, t);
        let row = truth.row_mut(i);
        row[0] = profile.grf.eval(pr);
        row[1] = profile.grf.eval(pl);
        for (k, p) in [pr, pl].into_iter().enumerate() {
            for j in 0..5 {
                row[2 + 5 * k + j] = profile.angles[j].eval(p);
                row[12 + 5 * k + j] = profile.moments[j].eval(p);
            }
        }
        row[22] = 100.0 * pr;
        row[23] = 100.0 * pl;
    }

    let mut heel_strikes = Vec::new();
    let mut t = 0;
    while t <= duration_ms {
        heel_strikes.push(HeelStrikeEvent {
            time_ms: t as f64,
            foot: Foot::Right,
            source: StrikeSource::ForcePlate,
        });
        if t + profile.stride_ms / 2 <= duration_ms {
            heel_strikes.push(HeelStrikeEvent {
                time_ms: (t + profile.stride_ms / 2) as f64,
                foot: Foot::Left,
                source: StrikeSource::ForcePlate,
            });
        }
        t += profile.stride_ms;
    }

    let series = |rate, channels: Vec<String>, data| {
        SampleSeries::new(0.0, rate, channels, data).expect("generator shapes are consistent")
    };
    let [ir, il] = insole_data;
    Ok(SyntheticTrial {
        subject_id: profile.subject_id.clone(),
        trial_id: trial_id.to_string(),
        insoles: vec![
            series(IMU_RATE_HZ, insole_channels(Foot::Right), ir),
            series(IMU_RATE_HZ, insole_channels(Foot::Left), il),
        ],
        imus: imu_data
            .into_iter()
            .zip(IMU_SITES)
            .map(|(d, site)| series(IMU_RATE_HZ, imu_channels(site), d))
            .collect(),
        truth: series(TRUTH_RATE_HZ, columns, truth),
        heel_strikes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub trial_duration_s: f64,
    pub noise: NoiseLevels,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_subjects: 8,
            trials_per_subject: 10,
            trial_duration_s: 20.0,
            noise: NoiseLevels::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub subjects: Vec<SubjectInfo>,
    pub trials: Vec<SyntheticTrial>,
}

impl Dataset {
    pub fn subject(&self, id: &str) -> Option<&SubjectInfo> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub profiles: Vec<SubjectProfile>,
    pub dataset: Dataset,
}

pub fn subject_id(index: usize) -> String {
    format!("S{:02}", index + 1)
}

pub fn trial_id(index: usize) -> String {
    format!("T{:02}", index + 1)
}

/// Subjects vary in anthropometry, cadence and curve shapes; each trial
/// varies the stride period by up to one 20 ms step.
pub fn generate_cohort(config: &CohortConfig, seed: u64) -> Result<Cohort, SynthError> {
    let mut profiles = Vec::with_capacity(config.n_subjects);
    let mut trials = Vec::new();
    for s in 0..config.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let mut profile = SubjectProfile::sample(&subject_id(s), &mut rng);
        profile.noise = config.noise;
        for t in 0..config.trials_per_subject {
            let mut trial_profile = profile.clone();
            let step: i64 = rng.gen_range(-1..=1);
            trial_profile.stride_ms = (profile.stride_ms as i64 + 20 * step) as u64;
            let trial_seed = seed ^ ((s as u64) << 40) ^ ((t as u64) << 20) ^ 0x5EED;
            trials.push(generate_trial(&trial_profile, &trial_id(t), config.trial_duration_s, trial_seed)?);
        }
        profiles.push(profile);
    }
    Ok(Cohort {
        dataset: Dataset {
            subjects: profiles.iter().map(SubjectInfo::from).collect(),
            trials,
        },
        profiles,
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes `subjects.csv` and `<subject>/<trial>.csv` under `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let meta = dir.join("subjects.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&meta)
        .map_err(|e| csv_io(&meta, e))?;
    w.write_record(["subject_id", "mass_kg", "weight_n", "height_cm"])
        .map_err(|e| csv_io(&meta, e))?;
    for s in &dataset.subjects {
        w.write_record([
            s.subject_id.clone(),
            fmt_f64(s.mass_kg),
            fmt_f64(s.weight_n()),
            fmt_f64(s.height_cm),
        ])
        .map_err(|e| csv_io(&meta, e))?;
    }
    w.flush().map_err(|e| io_err(&meta, e))?;
    for trial in &dataset.trials {
        let sub = dir.join(&trial.subject_id);
        fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
        write_trial(trial, &sub.join(format!("{}.csv", trial.trial_id)))?;
    }
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> SynthError {
    SynthError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    }
}

pub fn write_trial(trial: &SyntheticTrial, path: &Path) -> Result<(), SynthError> {
    let columns = trial_columns();
    let n_sensor = N_FSR * 2 + 9 * 4;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let mut header = vec!["time_ms".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).map_err(|e| csv_io(path, e))?;

    let sensors = trial.insoles.iter().chain(&trial.imus).collect::<Vec<_>>();
    let n_rows = sensors[0].len();
    let mut gt_i = 0;
    let empty_gt = vec![String::new(); columns.len() - n_sensor];
    let empty_sensor = vec![String::new(); n_sensor];
    let write_truth_until = |w: &mut csv::Writer<fs::File>, t: f64, gt_i: &mut usize| -> Result<(), SynthError> {
        while *gt_i < trial.truth.len() && trial.truth.time_ms(*gt_i) < t {
            let mut rec = vec![fmt_f64(trial.truth.time_ms(*gt_i))];
            rec.extend(empty_sensor.iter().cloned());
            rec.extend(trial.truth.row(*gt_i).iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
            *gt_i += 1;
        }
        Ok(())
    };
    for i in 0..n_rows {
        let t = sensors[0].time_ms(i);
        write_truth_until(&mut w, t, &mut gt_i)?;
        let mut rec = vec![fmt_f64(t)];
        for s in &sensors {
            rec.extend(s.row(i).iter().map(|v| fmt_f64(*v)));
        }
        rec.extend(empty_gt.iter().cloned());
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    write_truth_until(&mut w, f64::INFINITY, &mut gt_i)?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, SynthError> {
    let meta = dir.join("subjects.csv");
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(&meta)
        .map_err(|e| csv_io(&meta, e))?;
    let header = r.headers().map_err(|e| csv_io(&meta, e))?.clone();
    let expected = ["subject_id", "mass_kg", "weight_n", "height_cm"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(SynthError::Format {
            path: meta.display().to_string(),
            line: 1,
            msg: format!("expected header {}", expected.join(",")),
        });
    }
    let mut subjects = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_io(&meta, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let data_err = |msg: String| SynthError::Data {
            path: meta.display().to_string(),
            line,
            msg,
        };
        if rec.len() != expected.len() {
            return Err(data_err(format!("expected {} fields, found {}", expected.len(), rec.len())));
        }
        let num = |i: usize| -> Result<f64, SynthError> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| data_err(format!("invalid {} '{}'", expected[i], &rec[i])))
        };
        subjects.push(SubjectInfo {
            subject_id: rec[0].to_string(),
            mass_kg: num(1)?,
            height_cm: num(3)?,
        });
    }
    let mut trials = Vec::new();
    for s in &subjects {
        let sub = dir.join(&s.subject_id);
        let mut files: Vec<PathBuf> = fs::read_dir(&sub)
            .map_err(|e| io_err(&sub, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            let trial = f.file_stem().and_then(|x| x.to_str()).unwrap_or_default().to_string();
            trials.push(read_trial(&f, &s.subject_id, &trial)?);
        }
    }
    Ok(Dataset { subjects, trials })
}

pub fn read_trial(path: &Path, subject_id: &str, trial_id: &str) -> Result<SyntheticTrial, SynthError> {
    let p = path.display().to_string();
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let header = r.headers().map_err(|e| csv_io(path, e))?.clone();
    let mut expected = vec!["time_ms".to_string()];
    expected.extend(trial_columns());
    for (i, name) in expected.iter().enumerate() {
        match header.get(i) {
            Some(h) if h == name => {}
            Some(h) => {
                return Err(SynthError::Format {
                    path: p,
                    line: 1,
                    msg: format!("column {} is '{h}', expected '{name}'", i + 1),
                })
            }
            None => {
                return Err(SynthError::Format {
                    path: p,
                    line: 1,
                    msg: format!("missing column '{name}'"),
                })
            }
        }
    }
    if header.len() != expected.len() {
        return Err(SynthError::Format {
            path: p,
            line: 1,
            msg: format!("unexpected extra column '{}'", &header[expected.len()]),
        });
    }
    let n_sensor = N_FSR * 2 + 9 * 4;
    let mut sensor_t = Vec::new();
    let mut sensor_rows: Vec<f64> = Vec::new();
    let mut truth_t = Vec::new();
    let mut truth_rows: Vec<f64> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let data_err = |msg: String| SynthError::Data {
            path: p.clone(),
            line,
            msg,
        };
        if rec.len() != expected.len() {
            return Err(data_err(format!("expected {} fields, found {}", expected.len(), rec.len())));
        }
        let parse = |i: usize| -> Result<f64, SynthError> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| data_err(format!("invalid value '{}' in column {}", &rec[i], expected[i])))
        };
        let t = parse(0)?;
        let has_sensor = !rec[1].is_empty();
        let has_truth = !rec[1 + n_sensor].is_empty();
        if !has_sensor && !has_truth {
            return Err(data_err("row carries neither sensor nor ground-truth values".into()));
        }
        if has_sensor {
            sensor_t.push(t);
            for i in 1..=n_sensor {
                sensor_rows.push(parse(i)?);
            }
        }
        if has_truth {
            truth_t.push(t);
            for i in 1 + n_sensor..expected.len() {
                truth_rows.push(parse(i)?);
            }
        }
    }
    let uniform = |t: &[f64], rate: f64, what: &str| -> Result<(), SynthError> {
        let step = 1000.0 / rate;
        if t.len() < 2 {
            return Err(SynthError::Data {
                path: p.clone(),
                line: 0,
                msg: format!("fewer than two {what} rows"),
            });
        }
        for (i, w) in t.windows(2).enumerate() {
            if (w[1] - w[0] - step).abs() > 1e-6 {
                return Err(SynthError::Data {
                    path: p.clone(),
                    line: 0,
                    msg: format!("{what} row {} breaks the {step} ms spacing", i + 2),
                });
            }
        }
        Ok(())
    };
    uniform(&sensor_t, IMU_RATE_HZ, "sensor")?;
    uniform(&truth_t, TRUTH_RATE_HZ, "ground-truth")?;

    let sensors = Matrix::from_vec(sensor_t.len(), n_sensor, sensor_rows);
    let make = |cols: std::ops::Range<usize>, names: Vec<String>| {
        let idx: Vec<usize> = cols.collect();
        SampleSeries::new(sensor_t[0], IMU_RATE_HZ, names, sensors.select_columns(&idx)).expect("consistent shapes")
    };
    let insoles = vec![
        make(0..N_FSR, insole_channels(Foot::Right)),
        make(N_FSR..2 * N_FSR, insole_channels(Foot::Left)),
    ];
    let imus = IMU_SITES
        .iter()
        .enumerate()
        .map(|(k, site)| make(2 * N_FSR + 9 * k..2 * N_FSR + 9 * (k + 1), imu_channels(site)))
        .collect();
    let truth_cols = truth_channels();
    let truth = SampleSeries::new(
        truth_t[0],
        TRUTH_RATE_HZ,
        truth_cols.clone(),
        Matrix::from_vec(truth_t.len(), truth_cols.len(), truth_rows),
    )
    .expect("consistent shapes");
    let mut heel_strikes = Vec::new();
    for i in 0..truth.len() {
        for foot in Foot::BOTH {
            let c = truth_cols.len() - 2 + foot.index();
            if truth.row(i)[c] == 0.0 {
                heel_strikes.push(HeelStrikeEvent {
                    time_ms: truth.time_ms(i),
                    foot,
                    source: StrikeSource::ForcePlate,
                });
            }
        }
    }
    Ok(SyntheticTrial {
        subject_id: subject_id.to_string(),
        trial_id: trial_id.to_string(),
        insoles,
        imus,
        truth,
        heel_strikes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(id: &str) -> SubjectProfile {
        SubjectProfile {
            noise: NoiseLevels::zero(),
            ..SubjectProfile::canonical(id)
        }
    }

    #[test]
    fn fourier_fit_reproduces_low_order_series() {
        let f = Fourier::fit(|p| 1.0 + 2.0 * (2.0 * PI * p).cos() - 0.5 * (6.0 * PI * p).sin(), 6);
        assert!((f.a0 - 1.0).abs() < 1e-12);
        assert!((f.a[0] - 2.0).abs() < 1e-12);
        assert!((f.b[2] + 0.5).abs() < 1e-12);
        let h = 1e-6;
        for p in [0.1, 0.37, 0.8] {
            let num = (f.eval(p + h) - f.eval(p - h)) / (2.0 * h);
            assert!((num - f.deriv(p)).abs() < 1e-5);
            let num2 = (f.deriv(p + h) - f.deriv(p - h)) / (2.0 * h);
            assert!((num2 - f.deriv2(p)).abs() < 1e-4);
        }
    }

    #[test]
    fn grf_is_zero_in_swing_and_peaks_at_configured_level() {
        let g = GrfShape::new(1.15, 0.6, [(0.5, 0.22, 0.1), (0.45, 0.75, 0.1)], 0.75);
        assert_eq!(g.eval(0.6), 0.0);
        assert_eq!(g.eval(0.95), 0.0);
        let peak = (0..10000).map(|i| g.eval(i as f64 / 10000.0)).fold(0.0, f64::max);
        assert!((peak - 1.15).abs() < 1e-3);
    }

    #[test]
    fn strikes_fall_on_stride_multiples() {
        let p = quiet("S01");
        let trial = generate_trial(&p, "T01", 6.0, 1).unwrap();
        let right = trial.strikes(Foot::Right);
        for (k, t) in right.iter().enumerate() {
            assert_eq!(*t, (k as u64 * p.stride_ms) as f64);
        }
        let left = trial.strikes(Foot::Left);
        assert_eq!(left[0], (p.stride_ms / 2) as f64);
        assert!(generate_trial(&p, "T02", 2.0, 1).is_err());
    }

    #[test]
    fn noiseless_gyro_matches_pitch_derivative() {
        let p = quiet("S01");
        let trial = generate_trial(&p, "T01", 4.0, 3).unwrap();
        let stride_s = p.stride_ms as f64 / 1000.0;
        for i in 0..trial.imus[0].len() {
            let t = trial.imus[0].time_ms(i) as u64;
            let ph = (t % p.stride_ms) as f64 / p.stride_ms as f64;
            let a = &p.angles;
            let rate = (a[0].deriv(ph) - a[3].deriv(ph)) / stride_s;
            assert_eq!(trial.imus[0].row(i)[4], rate);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = CohortConfig {
            n_subjects: 2,
            trials_per_subject: 2,
            trial_duration_s: 4.0,
            ..CohortConfig::default()
        };
        let a = generate_cohort(&cfg, 9).unwrap();
        let b = generate_cohort(&cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.profiles[0], a.profiles[1]);
    }
}
