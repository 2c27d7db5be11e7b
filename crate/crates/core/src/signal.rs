//! Uniformly sampled multichannel series, linear resampling, Butterworth
//! IIR design and streaming filtering, and feature standardization.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use num_complex::Complex64 as Complex;

use crate::matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid cutoff: {0}")]
    InvalidCutoff(String),
    #[error("invalid filter order {0}")]
    InvalidOrder(usize),
    #[error("shape mismatch: expected {expected} columns, got {got}")]
    ShapeError { expected: usize, got: usize },
    #[error("invalid sample rate {0}")]
    InvalidRate(f64),
}

impl SignalError {
    pub fn code(&self) -> &'static str {
        match self {
            SignalError::InsufficientData(_) => "E_INSUFFICIENT_DATA",
            SignalError::InvalidCutoff(_) => "E_INVALID_CUTOFF",
            SignalError::InvalidOrder(_) => "E_INVALID_ORDER",
            SignalError::ShapeError { .. } => "E_SHAPE",
            SignalError::InvalidRate(_) => "E_INVALID_RATE",
        }
    }
}

/// Uniformly sampled multichannel time series.
///
/// Row `i` is sampled at `start_ms + i * 1000 / rate_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSeries {
    start_ms: f64,
    rate_hz: f64,
    channels: Vec<String>,
    data: Matrix,
}

impl SampleSeries {
    pub fn new(
        start_ms: f64,
        rate_hz: f64,
        channels: Vec<String>,
        data: Matrix,
    ) -> Result<Self, SignalError> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(SignalError::InvalidRate(rate_hz));
        }
        if data.cols() != channels.len() {
            return Err(SignalError::ShapeError {
                expected: channels.len(),
                got: data.cols(),
            });
        }
        Ok(Self {
            start_ms,
            rate_hz,
            channels,
            data,
        })
    }

    pub fn start_ms(&self) -> f64 {
        self.start_ms
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn into_data(self) -> Matrix {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn time_ms(&self, row: usize) -> f64 {
        self.start_ms + row as f64 * 1000.0 / self.rate_hz
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.data.column(c)
    }

    /// Rows `[from, to)` as a new series starting at the time of `from`.
    pub fn slice(&self, from: usize, to: usize) -> SampleSeries {
        SampleSeries {
            start_ms: self.time_ms(from),
            rate_hz: self.rate_hz,
            channels: self.channels.clone(),
            data: self.data.slice_rows(from, to),
        }
    }

    /// Keeps only the named channels, in the given order.
    pub fn select(&self, names: &[&str]) -> Option<SampleSeries> {
        let idx: Option<Vec<usize>> = names.iter().map(|n| self.channel_index(n)).collect();
        let idx = idx?;
        Some(SampleSeries {
            start_ms: self.start_ms,
            rate_hz: self.rate_hz,
            channels: names.iter().map(|s| s.to_string()).collect(),
            data: self.data.select_columns(&idx),
        })
    }
}

/// Linear-interpolation resampling onto a uniform grid at `target_rate`.
///
/// The output starts at the input start time and ends at the last output
/// instant not after the last input sample. Output instants that coincide
/// with input instants reproduce the input values exactly.
pub fn resample_linear(series: &SampleSeries, target_rate: f64) -> Result<SampleSeries, SignalError> {
    if series.len() < 2 {
        return Err(SignalError::InsufficientData(format!(
            "resampling needs at least 2 rows, got {}",
            series.len()
        )));
    }
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(SignalError::InvalidRate(target_rate));
    }
    let n = series.len();
    let cols = series.n_channels();
    let src = series.data();
    let rate_in = series.rate_hz();

    // Integer rates (the common case) get exact positions: output j sits at
    // input position j * rate_in / target_rate.
    let integral = rate_in.fract() == 0.0 && target_rate.fract() == 0.0 && rate_in < 1e9 && target_rate < 1e9;
    let position = |j: usize| -> (usize, f64) {
        if integral {
            let num = j as u128 * rate_in as u128;
            let den = target_rate as u128;
            ((num / den) as usize, (num % den) as f64 / den as f64)
        } else {
            let p = j as f64 * rate_in / target_rate;
            let i = p.floor();
            (i as usize, p - i)
        }
    };
    let n_out = if integral {
        ((n as u128 - 1) * target_rate as u128 / rate_in as u128) as usize + 1
    } else {
        ((n - 1) as f64 * target_rate / rate_in).floor() as usize + 1
    };

    let mut out = Matrix::zeros(n_out, cols);
    for j in 0..n_out {
        let (i, frac) = position(j);
        let dst = out.row_mut(j);
        if frac == 0.0 || i + 1 >= n {
            dst.copy_from_slice(src.row(i.min(n - 1)));
        } else {
            let a = src.row(i);
            let b = src.row(i + 1);
            for c in 0..cols {
                dst[c] = a[c] + frac * (b[c] - a[c]);
            }
        }
    }
    SampleSeries::new(series.start_ms(), target_rate, series.channels().to_vec(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    Lowpass,
    Bandpass,
}

/// One second-order (or first-order, with `b2 = a2 = 0`) section,
/// `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    pub fn response(&self, omega: f64) -> Complex {
        let z1 = Complex::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = Complex::new(self.b[0], 0.0) + z1 * self.b[1] + z2 * self.b[2];
        let den = Complex::new(self.a[0], 0.0) + z1 * self.a[1] + z2 * self.a[2];
        num / den
    }
}

/// Causal IIR filter with per-channel state, realised as a cascade of
/// second-order sections in transposed direct form II.
#[derive(Debug, Clone, PartialEq)]
pub struct IirFilter {
    sections: Vec<Biquad>,
    // state[channel][section] = (s1, s2)
    state: Vec<Vec<[f64; 2]>>,
}

impl IirFilter {
    pub fn from_sections(sections: Vec<Biquad>) -> Self {
        Self {
            sections,
            state: Vec::new(),
        }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Expanded transfer function `(b, a)` with `a[0] = 1`.
    ///
    /// For inspection only; high orders lose precision in this form, which
    /// is why filtering runs on the sections.
    pub fn transfer_function(&self) -> (Vec<f64>, Vec<f64>) {
        let mut b = vec![1.0];
        let mut a = vec![1.0];
        for s in &self.sections {
            b = poly_mul(&b, &s.b);
            a = poly_mul(&a, &s.a);
        }
        (b, a)
    }

    /// Frequency response at `freq_hz` for sample rate `fs`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex {
        let omega = 2.0 * PI * freq_hz / fs;
        self.sections
            .iter()
            .fold(Complex::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }

    pub fn n_channels(&self) -> usize {
        self.state.len()
    }

    pub fn reset(&mut self) {
        self.state.clear();
    }

    fn ensure_channels(&mut self, channels: usize) -> Result<(), SignalError> {
        if self.state.is_empty() {
            self.state = vec![vec![[0.0; 2]; self.sections.len()]; channels];
            Ok(())
        } else if self.state.len() != channels {
            Err(SignalError::ShapeError {
                expected: self.state.len(),
                got: channels,
            })
        } else {
            Ok(())
        }
    }

    /// Sets the state to the steady state for a constant input equal to
    /// `frame`, so a signal starting at that level produces no transient.
    pub fn prime(&mut self, frame: &[f64]) {
        self.state = frame
            .iter()
            .map(|&x0| {
                let mut u = x0;
                self.sections
                    .iter()
                    .map(|s| {
                        let y = u * (s.b[0] + s.b[1] + s.b[2]) / (s.a[0] + s.a[1] + s.a[2]);
                        let s2 = s.b[2] * u - s.a[2] * y;
                        let s1 = s.b[1] * u - s.a[1] * y + s2;
                        u = y;
                        [s1, s2]
                    })
                    .collect()
            })
            .collect();
    }

    /// Filters one multichannel frame in place.
    pub fn process_frame(&mut self, frame: &mut [f64]) -> Result<(), SignalError> {
        self.ensure_channels(frame.len())?;
        for (x, state) in frame.iter_mut().zip(self.state.iter_mut()) {
            let mut v = *x;
            for (s, st) in self.sections.iter().zip(state.iter_mut()) {
                let y = s.b[0] * v + st[0];
                st[0] = s.b[1] * v - s.a[1] * y + st[1];
                st[1] = s.b[2] * v - s.a[2] * y;
                v = y;
            }
            *x = v;
        }
        Ok(())
    }

    /// Filters a chunk, carrying state over from previous calls.
    pub fn filter_stream(&mut self, chunk: &SampleSeries) -> Result<SampleSeries, SignalError> {
        self.ensure_channels(chunk.n_channels())?;
        let mut data = chunk.data().clone();
        for r in 0..data.rows() {
            self.process_frame(data.row_mut(r))?;
        }
        SampleSeries::new(chunk.start_ms(), chunk.rate_hz(), chunk.channels().to_vec(), data)
    }
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    // drop trailing zeros contributed by first-order sections
    while out.len() > 1 && *out.last().unwrap() == 0.0 {
        out.pop();
    }
    out
}

/// Digital Butterworth design: analog prototype, frequency pre-warping and
/// the bilinear transform, emitted as second-order sections.
pub fn design_butterworth(
    order: usize,
    kind: FilterKind,
    cutoffs: &[f64],
    sample_rate: f64,
) -> Result<IirFilter, SignalError> {
    if order < 1 {
        return Err(SignalError::InvalidOrder(order));
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(SignalError::InvalidRate(sample_rate));
    }
    let nyquist = sample_rate / 2.0;
    let expected = match kind {
        FilterKind::Lowpass => 1,
        FilterKind::Bandpass => 2,
    };
    if cutoffs.len() != expected {
        return Err(SignalError::InvalidCutoff(format!(
            "{kind:?} needs {expected} cutoff(s), got {}",
            cutoffs.len()
        )));
    }
    for &c in cutoffs {
        if !(c > 0.0 && c < nyquist) {
            return Err(SignalError::InvalidCutoff(format!(
                "{c} Hz is outside (0, {nyquist}) Hz"
            )));
        }
    }
    if kind == FilterKind::Bandpass && cutoffs[0] >= cutoffs[1] {
        return Err(SignalError::InvalidCutoff(format!(
            "bandpass cutoffs must ascend, got {:?}",
            cutoffs
        )));
    }

    let fs2 = 2.0 * sample_rate;
    let warp = |f: f64| fs2 * (PI * f / sample_rate).tan();
    let bilinear = |s: Complex| (Complex::new(fs2, 0.0) + s) / (Complex::new(fs2, 0.0) - s);

    // Prototype poles in the upper half plane plus the real pole for odd orders.
    let n = order;
    let proto = |k: usize| Complex::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64);
    let upper: Vec<Complex> = (0..n / 2).map(proto).collect();
    let has_real = n % 2 == 1;

    let mut sections = Vec::new();
    match kind {
        FilterKind::Lowpass => {
            let wc = warp(cutoffs[0]);
            for p in &upper {
                let z = bilinear(*p * wc);
                sections.push(conjugate_section([1.0, 2.0, 1.0], z));
            }
            if has_real {
                let z = bilinear(Complex::new(-wc, 0.0)).re;
                sections.push(first_order_section([1.0, 1.0], z));
            }
            // unit gain at DC, section by section
            for s in &mut sections {
                normalize_at(s, 0.0);
            }
        }
        FilterKind::Bandpass => {
            let w1 = warp(cutoffs[0]);
            let w2 = warp(cutoffs[1]);
            let bw = w2 - w1;
            let w0sq = w1 * w2;
            // each prototype pole p maps to the roots of s^2 - bw p s + w0^2
            let split = |p: Complex| {
                let bp = p * bw;
                let disc = (bp * bp - Complex::new(4.0 * w0sq, 0.0)).sqrt();
                ((bp + disc) * 0.5, (bp - disc) * 0.5)
            };
            for p in &upper {
                let (s1, s2) = split(*p);
                sections.push(conjugate_section([1.0, 0.0, -1.0], bilinear(s1)));
                sections.push(conjugate_section([1.0, 0.0, -1.0], bilinear(s2)));
            }
            if has_real {
                let (s1, s2) = split(Complex::new(-1.0, 0.0));
                let (z1, z2) = (bilinear(s1), bilinear(s2));
                // real pair or complex conjugate pair: a = 1 - (z1+z2) z^-1 + z1 z2 z^-2
                let a1 = -(z1 + z2).re;
                let a2 = (z1 * z2).re;
                sections.push(Biquad {
                    b: [1.0, 0.0, -1.0],
                    a: [1.0, a1, a2],
                });
            }
            // unit gain at the pre-warped geometric centre
            let omega0 = 2.0 * (w0sq.sqrt() / fs2).atan();
            for s in &mut sections {
                normalize_at(s, omega0);
            }
        }
    }
    Ok(IirFilter::from_sections(sections))
}

fn conjugate_section(b: [f64; 3], pole: Complex) -> Biquad {
    Biquad {
        b,
        a: [1.0, -2.0 * pole.re, pole.norm_sqr()],
    }
}

fn first_order_section(b: [f64; 2], pole: f64) -> Biquad {
    Biquad {
        b: [b[0], b[1], 0.0],
        a: [1.0, -pole, 0.0],
    }
}

fn normalize_at(s: &mut Biquad, omega: f64) {
    let g = s.response(omega).norm();
    for c in &mut s.b {
        *c /= g;
    }
}

/// Per-feature standardization with population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardScaler {
    pub fn fit(rows: &Matrix) -> Result<Self, SignalError> {
        if rows.rows() == 0 {
            return Err(SignalError::InsufficientData("scaler fit needs at least 1 row".into()));
        }
        let n = rows.rows() as f64;
        let cols = rows.cols();
        let mut mean = vec![0.0; cols];
        for r in 0..rows.rows() {
            for (m, x) in mean.iter_mut().zip(rows.row(r)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for r in 0..rows.rows() {
            for ((v, x), m) in var.iter_mut().zip(rows.row(r)).zip(&mean) {
                let d = x - m;
                *v += d * d;
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = if *s > 0.0 { (*x - m) / s } else { 0.0 };
        }
    }

    pub fn transform(&self, rows: &Matrix) -> Result<Matrix, SignalError> {
        self.check(rows.cols())?;
        let mut out = rows.clone();
        for r in 0..out.rows() {
            self.transform_row(out.row_mut(r));
        }
        Ok(out)
    }

    pub fn inverse_transform_row(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = *x * s + m;
        }
    }

    pub fn inverse_transform(&self, rows: &Matrix) -> Result<Matrix, SignalError> {
        self.check(rows.cols())?;
        let mut out = rows.clone();
        for r in 0..out.rows() {
            self.inverse_transform_row(out.row_mut(r));
        }
        Ok(out)
    }

    fn check(&self, cols: usize) -> Result<(), SignalError> {
        if cols != self.n_features() {
            return Err(SignalError::ShapeError {
                expected: self.n_features(),
                got: cols,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(rate: f64, values: &[f64]) -> SampleSeries {
        let data = Matrix::from_rows(values.iter().map(|v| vec![*v]).collect());
        SampleSeries::new(0.0, rate, vec!["x".into()], data).unwrap()
    }

    #[test]
    fn primed_filter_holds_constant_input() {
        for (kind, cut) in [(FilterKind::Lowpass, vec![3.0]), (FilterKind::Bandpass, vec![0.2, 10.0])] {
            let mut f = design_butterworth(5, kind, &cut, 1000.0).unwrap();
            let dc = f.response(0.0, 1000.0).re;
            f.prime(&[9.81, -2.0]);
            for _ in 0..2000 {
                let mut frame = [9.81, -2.0];
                f.process_frame(&mut frame).unwrap();
                assert!((frame[0] - 9.81 * dc).abs() < 1e-9);
                assert!((frame[1] + 2.0 * dc).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_point_interpolation() {
        let out = resample_linear(&series(1.0, &[0.0, 10.0]), 4.0).unwrap();
        assert_eq!(out.column(0), vec![0.0, 2.5, 5.0, 7.5, 10.0]);
        assert_eq!(out.rate_hz(), 4.0);
    }

    #[test]
    fn ramp_is_interpolation_exact() {
        let values: Vec<f64> = (0..50).map(|i| 2.0 * (i as f64 / 25.0)).collect();
        let out = resample_linear(&series(25.0, &values), 1000.0).unwrap();
        assert_eq!(out.len(), 49 * 40 + 1);
        for i in 0..out.len() {
            let t = out.time_ms(i) / 1000.0;
            assert!((out.row(i)[0] - 2.0 * t).abs() < 1e-12, "row {i}");
        }
    }

    #[test]
    fn upsample_100_to_1000_counts() {
        let values: Vec<f64> = (0..200).map(|i| (i as f64).sin()).collect();
        let out = resample_linear(&series(100.0, &values), 1000.0).unwrap();
        assert_eq!(out.len(), 199 * 10 + 1);
        for i in 0..200 {
            assert_eq!(out.row(i * 10)[0], values[i]);
        }
    }

    #[test]
    fn resample_needs_two_rows() {
        assert!(matches!(
            resample_linear(&series(10.0, &[1.0]), 100.0),
            Err(SignalError::InsufficientData(_))
        ));
    }

    #[test]
    fn design_rejects_bad_arguments() {
        assert_eq!(
            design_butterworth(0, FilterKind::Lowpass, &[3.0], 1000.0).unwrap_err(),
            SignalError::InvalidOrder(0)
        );
        assert!(matches!(
            design_butterworth(5, FilterKind::Lowpass, &[500.0], 1000.0),
            Err(SignalError::InvalidCutoff(_))
        ));
        assert!(matches!(
            design_butterworth(5, FilterKind::Bandpass, &[10.0, 0.2], 1000.0),
            Err(SignalError::InvalidCutoff(_))
        ));
        assert!(matches!(
            design_butterworth(5, FilterKind::Bandpass, &[10.0], 1000.0),
            Err(SignalError::InvalidCutoff(_))
        ));
    }

    #[test]
    fn fsr_lowpass_dc_and_cutoff() {
        let f = design_butterworth(5, FilterKind::Lowpass, &[3.0], 1000.0).unwrap();
        assert!((f.response(0.0, 1000.0).norm() - 1.0).abs() < 1e-12);
        assert!((f.response(3.0, 1000.0).norm() - 0.5f64.sqrt()).abs() < 1e-9);
        assert_eq!(f.sections().len(), 3);
    }

    #[test]
    fn constant_through_lowpass_converges_to_one() {
        let mut f = design_butterworth(5, FilterKind::Lowpass, &[3.0], 1000.0).unwrap();
        let input = series(1000.0, &vec![1.0; 3000]);
        let out = f.filter_stream(&input).unwrap();
        // the underdamped pole pair still rings at ~2e-6 at t = 2 s
        assert!((out.row(1999)[0] - 1.0).abs() < 1e-5);
        for i in 2500..3000 {
            assert!((out.row(i)[0] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_through_bandpass_converges_to_zero() {
        let mut f = design_butterworth(5, FilterKind::Bandpass, &[0.2, 10.0], 1000.0).unwrap();
        let input = series(1000.0, &vec![1.0; 30_000]);
        let out = f.filter_stream(&input).unwrap();
        assert!(out.row(29_999)[0].abs() < 1e-6, "{}", out.row(29_999)[0]);
    }

    #[test]
    fn chunked_filtering_matches_whole() {
        let values: Vec<f64> = (0..500).map(|i| ((i * 37 % 101) as f64).sin()).collect();
        let whole = design_butterworth(5, FilterKind::Bandpass, &[0.2, 10.0], 1000.0)
            .unwrap()
            .filter_stream(&series(1000.0, &values))
            .unwrap()
            .column(0);
        for chunk in [1, 7, 64] {
            let mut f = design_butterworth(5, FilterKind::Bandpass, &[0.2, 10.0], 1000.0).unwrap();
            let mut out = Vec::new();
            for piece in values.chunks(chunk) {
                out.extend(f.filter_stream(&series(1000.0, piece)).unwrap().column(0));
            }
            assert_eq!(out, whole, "chunk size {chunk}");
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let mut f = design_butterworth(2, FilterKind::Lowpass, &[6.0], 1000.0).unwrap();
        f.process_frame(&mut [0.0, 0.0]).unwrap();
        assert_eq!(
            f.process_frame(&mut [0.0]).unwrap_err(),
            SignalError::ShapeError { expected: 2, got: 1 }
        );
    }

    #[test]
    fn transfer_function_matches_sections() {
        let f = design_butterworth(3, FilterKind::Lowpass, &[50.0], 1000.0).unwrap();
        let (b, a) = f.transfer_function();
        assert_eq!(a[0], 1.0);
        assert_eq!(b.len(), 4);
        assert_eq!(a.len(), 4);
        let dc: f64 = b.iter().sum::<f64>() / a.iter().sum::<f64>();
        assert!((dc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaler_hand_arithmetic() {
        let s = StandardScaler::fit(&Matrix::from_rows(vec![vec![1.0], vec![3.0]])).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.std, vec![1.0]);
        let t = s.transform(&Matrix::from_rows(vec![vec![2.0]])).unwrap();
        assert_eq!(t.row(0), &[0.0]);
    }

    #[test]
    fn scaler_zero_variance_maps_to_zero() {
        let rows = Matrix::from_rows(vec![vec![5.0], vec![5.0], vec![5.0]]);
        let s = StandardScaler::fit(&rows).unwrap();
        assert_eq!(s.transform(&rows).unwrap().column(0), vec![0.0; 3]);
    }

    #[test]
    fn scaler_shape_errors() {
        let s = StandardScaler::fit(&Matrix::from_rows(vec![vec![1.0, 2.0]])).unwrap();
        assert!(matches!(
            s.transform(&Matrix::from_rows(vec![vec![1.0]])),
            Err(SignalError::ShapeError { expected: 2, got: 1 })
        ));
        assert!(StandardScaler::fit(&Matrix::zeros(0, 3)).is_err());
    }
}
