//! Phase extraction and lock diagnostics.
//!
//! Phase is defined from upward zero crossings: it is `2πk` at the k-th
//! crossing and linear in between. Everything downstream (phase differences,
//! lock verdicts, bit decoding) works on that piecewise-linear function.

use crate::error::{Error, Result};
use crate::model::Vec2;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

pub const NOISE_FLOOR: f64 = 0.01;
pub const DEFAULT_SPREAD_TOL: f64 = 0.2;
pub const DEFAULT_DRIFT_TOL: f64 = 0.01;
pub const DEFAULT_WINDOW: f64 = 20.0;
pub const MIN_WINDOW: f64 = 5.0;
pub const DEFAULT_GUARD: f64 = 0.3;
pub const DEFAULT_ROTATION_THRESHOLD: f64 = 1e-9;
/// Lissajous figures with aspect below this count as a line.
pub const LINE_ASPECT: f64 = 0.25;

/// Wraps an angle into (−π, π].
#[inline]
pub fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

/// Unwrapped phase of one oscillating signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeries {
    pub source: String,
    pub sample_rate: f64,
    /// Upward zero-crossing instants.
    pub crossings: Vec<f64>,
    /// Original sample instants inside `[first crossing, last crossing]`.
    pub times: Vec<f64>,
    pub phase: Vec<f64>,
}

impl PhaseSeries {
    pub fn support(&self) -> (f64, f64) {
        (self.crossings[0], *self.crossings.last().unwrap())
    }

    /// Phase at `t`, or `None` outside the support.
    pub fn phase_at(&self, t: f64) -> Option<f64> {
        let (a, b) = self.support();
        if t < a || t > b {
            return None;
        }
        let k = self.crossings.partition_point(|&c| c <= t).saturating_sub(1);
        let k = k.min(self.crossings.len() - 2);
        let (c0, c1) = (self.crossings[k], self.crossings[k + 1]);
        Some(TAU * (k as f64 + (t - c0) / (c1 - c0)))
    }

    /// Average frequency over the support, Hz.
    pub fn mean_frequency(&self) -> f64 {
        let (a, b) = self.support();
        (self.crossings.len() - 1) as f64 / (b - a)
    }
}

/// Upward zero crossings of `samples` (taken at `t0 + j/rate`), located by
/// linear interpolation.
pub fn zero_crossings(samples: &[f64], t0: f64, sample_rate: f64) -> Vec<f64> {
    let h = 1.0 / sample_rate;
    samples
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] <= 0.0 && w[1] > 0.0)
        .map(|(j, w)| t0 + (j as f64 + (-w[0]) / (w[1] - w[0])) * h)
        .collect()
}

/// Phase of a uniformly sampled signal with the default noise floor.
pub fn zero_cross_phase(samples: &[f64], t0: f64, sample_rate: f64, source: impl Into<String>) -> Result<PhaseSeries> {
    zero_cross_phase_with_floor(samples, t0, sample_rate, source, NOISE_FLOOR)
}

pub fn zero_cross_phase_with_floor(
    samples: &[f64],
    t0: f64,
    sample_rate: f64,
    source: impl Into<String>,
    floor: f64,
) -> Result<PhaseSeries> {
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(peak > floor) {
        return Err(Error::BelowNoiseFloor { peak });
    }
    let crossings = zero_crossings(samples, t0, sample_rate);
    if crossings.len() < 3 {
        return Err(Error::TooFewCrossings {
            found: crossings.len(),
            required: 3,
        });
    }
    let mut series = PhaseSeries {
        source: source.into(),
        sample_rate,
        crossings,
        times: Vec::new(),
        phase: Vec::new(),
    };
    let (a, b) = series.support();
    let j0 = ((a - t0) * sample_rate).ceil().max(0.0) as usize;
    for j in j0..samples.len() {
        let t = t0 + j as f64 / sample_rate;
        if t > b {
            break;
        }
        if let Some(p) = series.phase_at(t) {
            series.times.push(t);
            series.phase.push(p);
        }
    }
    Ok(series)
}

/// Integer multipliers in `Δ = a·φ_a − b·φ_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarmonicRatio {
    pub a: u32,
    pub b: u32,
}

impl HarmonicRatio {
    pub const ONE_TO_ONE: Self = Self { a: 1, b: 1 };
    /// A 1 Hz oscillator against a 2 Hz reference: `Δ = 2φ_slow − φ_fast`.
    pub const TWO_TO_ONE: Self = Self { a: 2, b: 1 };
}

/// A phase difference wrapped into (−π, π] on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrappedSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub ratio: HarmonicRatio,
}

impl WrappedSeries {
    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Continuous version with 2π jumps removed.
    pub fn unwrapped(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        let mut offset = 0.0;
        for (j, &v) in self.values.iter().enumerate() {
            if j > 0 {
                let d = v - self.values[j - 1];
                offset -= TAU * (d / TAU).round();
            }
            out.push(v + offset);
        }
        out
    }

    /// Sub-series with `from <= t <= to`.
    pub fn slice(&self, from: f64, to: f64) -> WrappedSeries {
        let a = self.times.partition_point(|&t| t < from);
        let b = self.times.partition_point(|&t| t <= to);
        WrappedSeries {
            times: self.times[a..b].to_vec(),
            values: self.values[a..b].to_vec(),
            ratio: self.ratio,
        }
    }
}

/// `wrap(ratio.a·φ_a − ratio.b·φ_b)` on the common support, sampled at the
/// coarser of the two rates.
pub fn phase_difference(a: &PhaseSeries, b: &PhaseSeries, ratio: HarmonicRatio) -> Result<WrappedSeries> {
    let (a0, a1) = a.support();
    let (b0, b1) = b.support();
    let start = a0.max(b0);
    let end = a1.min(b1);
    if !(end > start) {
        return Err(Error::EmptyOverlap);
    }
    let rate = a.sample_rate.min(b.sample_rate);
    let n = ((end - start) * rate).floor() as usize + 1;
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for j in 0..n {
        let t = (start + j as f64 / rate).min(end);
        let (pa, pb) = match (a.phase_at(t), b.phase_at(t)) {
            (Some(x), Some(y)) => (x, y),
            _ => continue,
        };
        times.push(t);
        values.push(wrap(ratio.a as f64 * pa - ratio.b as f64 * pb));
    }
    Ok(WrappedSeries { times, values, ratio })
}

/// Circular mean and circular standard deviation `sqrt(−2 ln R)`.
pub fn circular_stats(values: &[f64]) -> (f64, f64) {
    let (s, c) = values.iter().fold((0.0, 0.0), |(s, c), v| (s + v.sin(), c + v.cos()));
    let n = values.len() as f64;
    let r = ((s / n).powi(2) + (c / n).powi(2)).sqrt().min(1.0);
    let std = if r > 0.0 {
        (-2.0 * r.ln()).max(0.0).sqrt()
    } else {
        f64::INFINITY
    };
    (wrap(s.atan2(c)), std)
}

/// Least-squares slope of `y` against `x`.
pub fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    // Offsetting by y[0] instead of the mean keeps a constant series at
    // exactly zero slope.
    let y0 = y.first().copied().unwrap_or(0.0);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - y0);
        sxx += (a - mx) * (a - mx);
    }
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockTolerances {
    pub window: f64,
    pub drift_tol: f64,
    pub spread_tol: f64,
}

impl Default for LockTolerances {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            drift_tol: DEFAULT_DRIFT_TOL,
            spread_tol: DEFAULT_SPREAD_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockReport {
    pub locked: bool,
    /// Circular mean of the phase difference over the window.
    pub mean_offset: f64,
    pub drift_rate: f64,
    pub spread: f64,
    /// End of the analysed window.
    pub t_end: f64,
    pub window: f64,
    pub harmonic_ratio: HarmonicRatio,
    pub drift_tol: f64,
    pub spread_tol: f64,
}

/// Lock verdict over the trailing `tol.window` seconds of `diff`.
pub fn detect_lock(diff: &WrappedSeries, tol: LockTolerances) -> Result<LockReport> {
    let end = diff.times.last().copied().ok_or(Error::InsufficientData {
        needed: tol.window,
        available: 0.0,
    })?;
    detect_lock_at(diff, end, tol)
}

/// Lock verdict over the window `[t_end − window, t_end]`.
pub fn detect_lock_at(diff: &WrappedSeries, t_end: f64, tol: LockTolerances) -> Result<LockReport> {
    if tol.window < MIN_WINDOW {
        return Err(Error::InsufficientData {
            needed: MIN_WINDOW,
            available: tol.window,
        });
    }
    let start = t_end - tol.window;
    let first = diff.times.first().copied().unwrap_or(f64::INFINITY);
    // Half a sample of slack for grid alignment.
    let slack = if diff.times.len() > 1 {
        0.5 * (diff.times[1] - diff.times[0])
    } else {
        0.0
    };
    if first > start + slack || diff.times.len() < 3 {
        return Err(Error::InsufficientData {
            needed: tol.window,
            available: (t_end - first).max(0.0),
        });
    }
    let w = diff.slice(start - 1e-9, t_end + 1e-9);
    let (mean, spread) = circular_stats(&w.values);
    let drift = linear_slope(&w.times, &w.unwrapped());
    Ok(LockReport {
        locked: spread <= tol.spread_tol && drift.abs() <= tol.drift_tol,
        mean_offset: mean,
        drift_rate: drift,
        spread,
        t_end,
        window: tol.window,
        harmonic_ratio: diff.ratio,
        drift_tol: tol.drift_tol,
        spread_tol: tol.spread_tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitValue {
    Zero,
    One,
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitReading {
    pub value: BitValue,
    /// Margin (rad) inside the guarded basin; zero when undefined.
    pub confidence: f64,
    pub reference_psi0: f64,
}

/// Reads the stored bit relative to the offset `psi0` captured when the
/// latch was set.
pub fn decode_bit(report: &LockReport, psi0: f64, guard: f64) -> Result<BitReading> {
    if !report.locked {
        return Err(Error::NotLocked);
    }
    Ok(decode_offset(report.mean_offset, psi0, guard))
}

/// Differential decoding of a raw offset.
pub fn decode_offset(psi: f64, psi0: f64, guard: f64) -> BitReading {
    let half = FRAC_PI_2 - guard;
    let d0 = wrap(psi - psi0).abs();
    let d1 = wrap(psi - psi0 - PI).abs();
    let (value, d) = if d0 < half {
        (BitValue::Zero, d0)
    } else if d1 < half {
        (BitValue::One, d1)
    } else {
        (BitValue::Undefined, d0.min(d1))
    };
    BitReading {
        value,
        confidence: (half - d).max(0.0),
        reference_psi0: psi0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lissajous {
    pub points: Vec<Vec2>,
    /// `sqrt(λ_min/λ_max)` of the covariance.
    pub aspect: f64,
    /// Principal axis angle in (−π/2, π/2].
    pub major_axis_angle: f64,
    pub closure: f64,
}

impl Lissajous {
    pub fn is_line(&self) -> bool {
        self.aspect < LINE_ASPECT
    }
}

/// Angle between two undirected axes, in [0, π/2].
pub fn axis_separation(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

pub fn lissajous(xa: &[f64], xb: &[f64]) -> Result<Lissajous> {
    if xa.len() != xb.len() {
        return Err(Error::Degenerate(format!(
            "series lengths differ ({} vs {})",
            xa.len(),
            xb.len()
        )));
    }
    if xa.len() < 3 {
        return Err(Error::Degenerate("need at least three points".into()));
    }
    let n = xa.len() as f64;
    let ma = xa.iter().sum::<f64>() / n;
    let mb = xb.iter().sum::<f64>() / n;
    let (mut caa, mut cbb, mut cab) = (0.0, 0.0, 0.0);
    for (a, b) in xa.iter().zip(xb) {
        caa += (a - ma) * (a - ma);
        cbb += (b - mb) * (b - mb);
        cab += (a - ma) * (b - mb);
    }
    caa /= n;
    cbb /= n;
    cab /= n;
    if caa == 0.0 || cbb == 0.0 {
        return Err(Error::Degenerate("constant series has no Lissajous figure".into()));
    }
    let mid = 0.5 * (caa + cbb);
    let rad = (0.25 * (caa - cbb).powi(2) + cab * cab).sqrt();
    let l_max = mid + rad;
    let l_min = (mid - rad).max(0.0);
    let mut angle = 0.5 * (2.0 * cab).atan2(caa - cbb);
    if angle <= -FRAC_PI_2 {
        angle += PI;
    }

    let points: Vec<Vec2> = xa.iter().zip(xb).map(|(&a, &b)| [a, b]).collect();
    let area = 0.5
        * points
            .iter()
            .zip(points.iter().cycle().skip(1))
            .map(|(p, q)| (p[0] - ma) * (q[1] - mb) - (q[0] - ma) * (p[1] - mb))
            .sum::<f64>()
            .abs();
    let (lo_a, hi_a) = min_max(xa);
    let (lo_b, hi_b) = min_max(xb);
    let bbox = (hi_a - lo_a) * (hi_b - lo_b);
    Ok(Lissajous {
        points,
        aspect: (l_min / l_max).sqrt(),
        major_axis_angle: angle,
        closure: 1.0 - area / bbox,
    })
}

/// Lissajous figure of the two oscillators after lifting each to the common
/// harmonic and removing the mean offset: points are
/// `(cos(a·φ_a), cos(b·φ_b + ψ̄))` on `[from, to]` sampled at the coarser rate.
///
/// Raw signals at different frequencies are uncorrelated whether or not they
/// are locked, so their covariance ellipse says nothing about 2:1 locking.
/// After lifting, a steady offset collapses to the diagonal and a drifting
/// one fills the square.
pub fn harmonic_lissajous(
    a: &PhaseSeries,
    b: &PhaseSeries,
    ratio: HarmonicRatio,
    from: f64,
    to: f64,
) -> Result<Lissajous> {
    let diff = phase_difference(a, b, ratio)?.slice(from, to);
    if diff.times.len() < 3 {
        return Err(Error::EmptyOverlap);
    }
    let (mean, _) = circular_stats(&diff.values);
    let mut xa = Vec::with_capacity(diff.times.len());
    let mut xb = Vec::with_capacity(diff.times.len());
    for &t in &diff.times {
        if let (Some(pa), Some(pb)) = (a.phase_at(t), b.phase_at(t)) {
            xa.push((ratio.a as f64 * pa).cos());
            xb.push((ratio.b as f64 * pb + mean).cos());
        }
    }
    lissajous(&xa, &xb)
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chirality {
    Cw,
    Ccw,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationSense {
    pub chirality: Chirality,
    /// Mean of ½(x ẏ − y ẋ) about the orbit centroid, m²/s.
    pub signed_area_rate: f64,
}

/// Sense of rotation of a sampled planar orbit.
pub fn rotation_sense(positions: &[Vec2], sample_rate: f64, threshold: f64) -> Result<RotationSense> {
    if positions.len() < 3 {
        return Err(Error::Degenerate("need at least three orbit points".into()));
    }
    let n = positions.len() as f64;
    let cx = positions.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = positions.iter().map(|p| p[1]).sum::<f64>() / n;
    let spread = positions
        .iter()
        .map(|p| (p[0] - cx).abs().max((p[1] - cy).abs()))
        .fold(0.0, f64::max);
    if spread == 0.0 {
        return Err(Error::Degenerate("platform does not move".into()));
    }
    let swept: f64 = positions
        .windows(2)
        .map(|w| 0.5 * ((w[0][0] - cx) * (w[1][1] - cy) - (w[1][0] - cx) * (w[0][1] - cy)))
        .sum();
    let duration = (positions.len() - 1) as f64 / sample_rate;
    let rate = swept / duration;
    let chirality = if rate > threshold {
        Chirality::Ccw
    } else if rate < -threshold {
        Chirality::Cw
    } else {
        Chirality::Degenerate
    };
    Ok(RotationSense {
        chirality,
        signed_area_rate: rate,
    })
}
