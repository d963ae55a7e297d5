//! Rod-length tuning so that an isolated metronome ticks at a target rate.
//!
//! "Isolated" means alone on a fixed platform with its escapement running.
//! The frequency is the steady limit-cycle value, read from upward zero
//! crossings over the last 20 of 60 simulated cycles.

use crate::error::{Error, Result};
use crate::model::{Assembly, MetronomeParams, Mobility, PlatformParams, StateVector};
use crate::sim::{rk4_step, DEFAULT_DT};
use std::f64::consts::PI;

pub const SIMULATED_CYCLES: usize = 60;
pub const MEASURED_CYCLES: usize = 20;
pub const MAX_ITERATIONS: usize = 30;

fn small_angle_length(gravity: f64, f: f64) -> f64 {
    gravity / (2.0 * PI * f).powi(2)
}

/// Steady-state frequency of `params` swinging alone on a fixed platform.
pub fn measure_frequency(params: &MetronomeParams, gravity: f64, dt: f64) -> Result<f64> {
    let mut m = params.clone();
    m.running = true;
    m.orientation = 0.0;
    let amplitude = m.limit_cycle_amplitude();
    if amplitude <= 0.0 {
        return Err(Error::param(
            format!("metronomes[{}].escapement", m.id),
            "escapement must exceed damping to sustain a limit cycle",
        ));
    }
    let platform = PlatformParams {
        mobility: Mobility::Fixed,
        ..Default::default()
    };
    let asm = Assembly::new(vec![m], platform, gravity)?;
    let mut s = StateVector::at_rest(&asm);
    s.theta[0] = amplitude.min(1.5);

    let f_guess = (gravity / asm.metronomes()[0].length).sqrt() / (2.0 * PI);
    // Finite amplitude slows the swing, so allow for a longer run than the guess.
    let t_max = 1.5 * SIMULATED_CYCLES as f64 / f_guess;
    let mut crossings = Vec::with_capacity(SIMULATED_CYCLES + 1);
    let mut t = 0.0;
    let mut k: u64 = 0;
    while crossings.len() < SIMULATED_CYCLES && t < t_max {
        let next = rk4_step(&asm, &s, t, dt)?;
        let (a, b) = (s.theta[0], next.theta[0]);
        if a <= 0.0 && b > 0.0 {
            crossings.push(t + dt * (-a) / (b - a));
        }
        s = next;
        k += 1;
        t = k as f64 * dt;
    }
    if crossings.len() < MEASURED_CYCLES + 1 {
        return Err(Error::TooFewCrossings {
            found: crossings.len(),
            required: MEASURED_CYCLES + 1,
        });
    }
    let tail = &crossings[crossings.len() - MEASURED_CYCLES - 1..];
    Ok(MEASURED_CYCLES as f64 / (tail[MEASURED_CYCLES] - tail[0]))
}

/// Adjusts `length` by secant iteration until the isolated limit-cycle
/// frequency is within `tol` (relative) of `target`.
///
/// Parameters already within tolerance come back unchanged, so repeated
/// calibration is a fixed point.
pub fn calibrate_frequency(params: &MetronomeParams, gravity: f64, target: f64, tol: f64) -> Result<MetronomeParams> {
    calibrate_frequency_with_dt(params, gravity, target, tol, DEFAULT_DT)
}

pub fn calibrate_frequency_with_dt(
    params: &MetronomeParams,
    gravity: f64,
    target: f64,
    tol: f64,
    dt: f64,
) -> Result<MetronomeParams> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::param(
            "target_frequency_hz",
            format!("must be > 0, got {target}"),
        ));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::param("tolerance", format!("must be > 0, got {tol}")));
    }
    params.validate()?;
    let measure = |length: f64| -> Result<f64> {
        let mut m = params.clone();
        m.length = length;
        measure_frequency(&m, gravity, dt)
    };
    let done = |length: f64, f: f64| {
        let mut m = params.clone();
        m.length = length;
        m.calibrated_frequency = Some(f);
        m
    };

    let f_in = measure(params.length)?;
    if ((f_in - target) / target).abs() < tol {
        return Ok(done(params.length, f_in));
    }

    let mut l0 = small_angle_length(gravity, target);
    let mut f0 = measure(l0)?;
    if ((f0 - target) / target).abs() < tol {
        return Ok(done(l0, f0));
    }
    // Second seed from L ∝ 1/f².
    let mut l1 = l0 * (f0 / target).powi(2);
    let mut f1 = f0;
    for _ in 0..MAX_ITERATIONS {
        f1 = measure(l1)?;
        if ((f1 - target) / target).abs() < tol {
            return Ok(done(l1, f1));
        }
        let slope = (f1 - f0) / (l1 - l0);
        if !slope.is_finite() || slope == 0.0 {
            break;
        }
        let l2 = l1 - (f1 - target) / slope;
        if !(l2.is_finite() && l2 > 0.0) {
            break;
        }
        (l0, f0) = (l1, f1);
        l1 = l2;
    }
    Err(Error::CalibrationFailed {
        id: params.id.clone(),
        target,
        iterations: MAX_ITERATIONS,
        last: f1,
    })
}

/// Frequency of metronome `index` running alone on the assembly's own
/// platform, every other metronome held at rest.
pub fn measure_in_situ(assembly: &Assembly, index: usize, dt: f64) -> Result<f64> {
    let mut ms = assembly.metronomes().to_vec();
    for (j, m) in ms.iter_mut().enumerate() {
        m.running = j == index;
    }
    let amplitude = ms[index].limit_cycle_amplitude();
    if amplitude <= 0.0 {
        return Err(Error::param(
            format!("metronomes[{}].escapement", ms[index].id),
            "escapement must exceed damping to sustain a limit cycle",
        ));
    }
    let f_guess = ms[index].frequency(assembly.gravity());
    let asm = assembly.with_metronomes(ms)?;
    let mut s = StateVector::at_rest(&asm);
    for j in 0..s.len() {
        s.held[j] = j != index;
    }
    s.theta[index] = amplitude.min(1.5);
    let t_max = 1.5 * SIMULATED_CYCLES as f64 / f_guess;
    let mut crossings = Vec::with_capacity(SIMULATED_CYCLES + 1);
    let mut k: u64 = 0;
    let mut t = 0.0;
    while crossings.len() < SIMULATED_CYCLES && t < t_max {
        let next = rk4_step(&asm, &s, t, dt)?;
        let (a, b) = (s.theta[index], next.theta[index]);
        if a <= 0.0 && b > 0.0 {
            crossings.push(t + dt * (-a) / (b - a));
        }
        s = next;
        k += 1;
        t = k as f64 * dt;
    }
    if crossings.len() < MEASURED_CYCLES + 1 {
        return Err(Error::TooFewCrossings {
            found: crossings.len(),
            required: MEASURED_CYCLES + 1,
        });
    }
    let tail = &crossings[crossings.len() - MEASURED_CYCLES - 1..];
    Ok(MEASURED_CYCLES as f64 / (tail[MEASURED_CYCLES] - tail[0]))
}

/// Re-tunes rod lengths so that each listed metronome hits its target while
/// running alone on the assembly's platform.
///
/// A free platform lowers the effective inertia every pendulum swings
/// against, which raises its frequency by a few percent; this pass removes
/// that offset so that detunings stay what the caller asked for.
pub fn calibrate_in_situ(assembly: &Assembly, targets: &[(usize, f64)], tol: f64, dt: f64) -> Result<Assembly> {
    let mut asm = assembly.clone();
    for &(index, target) in targets {
        let id = asm.metronomes()[index].id.clone();
        let with_length = |asm: &Assembly, length: f64| -> Result<Assembly> {
            let mut ms = asm.metronomes().to_vec();
            ms[index].length = length;
            asm.with_metronomes(ms)
        };
        let mut l0 = asm.metronomes()[index].length;
        let mut f0 = measure_in_situ(&asm, index, dt)?;
        let mut converged = ((f0 - target) / target).abs() < tol;
        let mut l1 = l0 * (f0 / target).powi(2);
        let mut iterations = 0;
        while !converged && iterations < MAX_ITERATIONS {
            iterations += 1;
            let f1 = measure_in_situ(&with_length(&asm, l1)?, index, dt)?;
            if ((f1 - target) / target).abs() < tol {
                l0 = l1;
                f0 = f1;
                converged = true;
                break;
            }
            let slope = (f1 - f0) / (l1 - l0);
            let l2 = l1 - (f1 - target) / slope;
            if !(slope.is_finite() && slope != 0.0 && l2.is_finite() && l2 > 0.0) {
                break;
            }
            (l0, f0) = (l1, f1);
            l1 = l2;
        }
        if !converged {
            return Err(Error::CalibrationFailed {
                id,
                target,
                iterations,
                last: f0,
            });
        }
        let mut ms = asm.metronomes().to_vec();
        ms[index].length = l0;
        ms[index].calibrated_frequency = Some(f0);
        asm = asm.with_metronomes(ms)?;
    }
    Ok(asm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_targets() {
        let m = MetronomeParams::new("a", 0.25);
        assert!(calibrate_frequency(&m, 9.81, 0.0, 1e-4).is_err());
        assert!(calibrate_frequency(&m, 9.81, 1.0, 0.0).is_err());
    }

    #[test]
    fn no_limit_cycle_without_escapement() {
        let mut m = MetronomeParams::new("a", 0.25);
        m.escapement = 0.0;
        assert!(measure_frequency(&m, 9.81, 1e-3).is_err());
    }

    #[test]
    fn default_escapement_needs_shorter_rod() {
        let m = MetronomeParams::new("a", 0.25);
        let out = calibrate_frequency(&m, 9.81, 1.0, 1e-4).unwrap();
        let small = small_angle_length(9.81, 1.0);
        assert!(out.length < small, "{} vs {}", out.length, small);
        let f = out.calibrated_frequency.unwrap();
        assert!((f - 1.0).abs() < 1e-4);
    }
}
