//! Point probes over the running state and the frequency spectrum used as a
//! bubbling diagnostic.

use crate::fields::FieldState;
use crate::grid::{cell_of_point, GridError, GridSpec};
use std::fmt;

/// Which scalar a probe samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeQuantity {
    EpsG,
    GaugeP,
    /// Cell-centered velocity magnitude from face averages.
    Speed,
}

impl std::str::FromStr for ProbeQuantity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eps_g" => Ok(ProbeQuantity::EpsG),
            "p" => Ok(ProbeQuantity::GaugeP),
            "speed" => Ok(ProbeQuantity::Speed),
            other => Err(format!("unknown probe quantity {other:?}")),
        }
    }
}

impl fmt::Display for ProbeQuantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeQuantity::EpsG => write!(f, "eps_g"),
            ProbeQuantity::GaugeP => write!(f, "p"),
            ProbeQuantity::Speed => write!(f, "speed"),
        }
    }
}

/// A sampled time series with strictly increasing sample times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ProbeSeries {
    pub fn push(&mut self, t: f64, v: f64) {
        debug_assert!(self.times.last().map_or(true, |&last| t > last));
        self.times.push(t);
        self.values.push(v);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Nearest-cell-center sampler with a fixed physical-time cadence.
///
/// Samples are emitted by zero-order hold: every pending sample time up to
/// the newest completed step takes that step's value, so sample intervals
/// smaller than dt produce runs of equal samples.
#[derive(Debug, Clone)]
pub struct ProbeSampler {
    pub point: [f64; 3],
    pub quantity: ProbeQuantity,
    cell: usize,
    interval: f64,
    next_t: f64,
    pub series: ProbeSeries,
}

impl ProbeSampler {
    pub fn new(
        point: [f64; 3],
        quantity: ProbeQuantity,
        interval: f64,
        grid: &GridSpec,
    ) -> Result<ProbeSampler, GridError> {
        let cell = cell_of_point(point, grid)?;
        Ok(ProbeSampler {
            point,
            quantity,
            cell,
            interval,
            next_t: 0.0,
            series: ProbeSeries::default(),
        })
    }

    pub fn cell(&self) -> usize {
        self.cell
    }

    /// Defer the first sample (used when resuming from a restart).
    pub fn starting_at(mut self, t: f64) -> Self {
        self.next_t = t;
        self
    }

    /// Emit all pending samples up to `t_now` using the current state.
    pub fn sample_up_to(&mut self, t_now: f64, state: &FieldState, grid: &GridSpec) {
        let value = probe_value(state, grid, self.cell, self.quantity);
        while self.next_t <= t_now * (1.0 + 1e-12) {
            self.series.push(self.next_t, value);
            self.next_t += self.interval;
        }
    }
}

/// Scalar value of `quantity` at a stored cell.
pub fn probe_value(
    state: &FieldState,
    grid: &GridSpec,
    cell: usize,
    quantity: ProbeQuantity,
) -> f64 {
    match quantity {
        ProbeQuantity::EpsG => state.eps_g[cell],
        ProbeQuantity::GaugeP => state.p[cell],
        ProbeQuantity::Speed => {
            let [sx, sy, sz] = grid.strides();
            let uc = 0.5 * (state.u[cell - sx] + state.u[cell]);
            let vc = 0.5 * (state.v[cell - sy] + state.v[cell]);
            let wc = 0.5 * (state.w[cell - sz] + state.w[cell]);
            (uc * uc + vc * vc + wc * wc).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumError {
    TooShort { n: usize },
    NonUniform { index: usize },
}

impl fmt::Display for SpectrumError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectrumError::TooShort { n } => {
                write!(f, "series too short for a spectrum ({n} samples, need >= 64)")
            }
            SpectrumError::NonUniform { index } => {
                write!(f, "series is not uniformly sampled (at sample {index})")
            }
        }
    }
}

impl std::error::Error for SpectrumError {}

/// Magnitude spectrum over positive frequencies up to Nyquist.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub freqs_hz: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub dominant_hz: f64,
}

/// Full complex DFT, `X_k = sum_n x_n e^{-2 pi i k n / N}`.
///
/// Radix-2 path for power-of-two lengths, direct evaluation otherwise; the
/// expected series lengths make the quadratic path perfectly serviceable.
pub fn dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    if n.is_power_of_two() && n > 1 {
        return fft_radix2(x);
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut re = 0.0;
        let mut im = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * (k as f64) * (i as f64) / (n as f64);
            re += xi * phase.cos();
            im += xi * phase.sin();
        }
        out.push((re, im));
    }
    out
}

fn fft_radix2(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    let mut data: Vec<(f64, f64)> = x.iter().map(|&v| (v, 0.0)).collect();
    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i as u64).reverse_bits() >> (64 - bits) as u64;
        let j = j as usize;
        if j > i {
            data.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for off in 0..len / 2 {
                let a = data[start + off];
                let b = data[start + off + len / 2];
                let tr = b.0 * cr - b.1 * ci;
                let ti = b.0 * ci + b.1 * cr;
                data[start + off] = (a.0 + tr, a.1 + ti);
                data[start + off + len / 2] = (a.0 - tr, a.1 - ti);
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            start += len;
        }
        len <<= 1;
    }
    data
}

/// Mean-removed magnitude spectrum of a uniformly sampled series; the
/// dominant frequency is the highest-magnitude positive bin, ties resolving
/// to the lowest frequency.
pub fn spectrum(series: &ProbeSeries) -> Result<Spectrum, SpectrumError> {
    let n = series.len();
    if n < 64 {
        return Err(SpectrumError::TooShort { n });
    }
    let dt0 = series.times[1] - series.times[0];
    for i in 1..n - 1 {
        let dt = series.times[i + 1] - series.times[i];
        if (dt - dt0).abs() > 1e-9 * dt0.abs() {
            return Err(SpectrumError::NonUniform { index: i });
        }
    }
    let mean = series.values.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.values.iter().map(|&v| v - mean).collect();
    let bins = dft(&centered);
    let fs = 1.0 / dt0;
    let half = n / 2;
    let mut freqs_hz = Vec::with_capacity(half);
    let mut magnitudes = Vec::with_capacity(half);
    for k in 1..=half {
        let f = k as f64 * fs / n as f64;
        let (re, im) = bins[k];
        freqs_hz.push(f);
        magnitudes.push((re * re + im * im).sqrt());
    }
    let dominant_hz = freqs_hz[dominant_bin(&magnitudes)];
    Ok(Spectrum { freqs_hz, magnitudes, dominant_hz })
}

/// Index of the largest magnitude; exact ties resolve to the lowest bin
/// (strictly-greater comparison keeps the first maximum).
pub fn dominant_bin(magnitudes: &[f64]) -> usize {
    let mut best = 0usize;
    for (k, &m) in magnitudes.iter().enumerate() {
        if m > magnitudes[best] {
            best = k;
        }
    }
    best
}
