//! Escapement-driven pendulums standing on a translating platform.
//!
//! Each metronome is a point bob of mass `m` on a massless rod of length `L`,
//! swinging in a vertical plane whose horizontal direction is
//! `u = (cos α, sin α)`. The platform carries all bobs and translates freely
//! (or along one axis, or not at all). For a running, un-held pendulum
//!
//! ```text
//! θ̈ = A − (p̈·u) cos θ / L
//! A  = −(g/L) sin θ − γ θ̇ + ε (1 − (θ/θ_ref)²) θ̇
//! ```
//!
//! and the platform obeys
//!
//! ```text
//! (M + Σm) p̈ + c ṗ = −Σ m L (θ̈ cos θ − θ̇² sin θ) u
//! ```
//!
//! Eliminating θ̈ leaves a 2×2 symmetric positive definite system for p̈,
//! which is solved directly before back-substituting.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::f64::consts::PI;

pub const DEFAULT_GRAVITY: f64 = 9.81;
pub const DEFAULT_BOB_MASS: f64 = 0.03;
pub const DEFAULT_DAMPING: f64 = 0.01;
pub const DEFAULT_ESCAPEMENT: f64 = 0.5;
pub const DEFAULT_REF_ANGLE: f64 = 30.0 * PI / 180.0;
pub const DEFAULT_PLATFORM_MASS: f64 = 0.4;
pub const DEFAULT_PLATFORM_DAMPING: f64 = 0.02;

pub type Vec2 = [f64; 2];

#[inline]
fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetronomeParams {
    pub id: String,
    /// Rod length in meters.
    pub length: f64,
    /// Bob mass in kilograms.
    pub bob_mass: f64,
    /// Linear pivot damping γ, 1/s.
    pub damping: f64,
    /// Escapement gain ε, 1/s.
    pub escapement: f64,
    /// Angle θ_ref (rad) at which the escapement switches from pumping to braking.
    pub ref_angle: f64,
    /// Swing direction angle α in the platform plane.
    pub orientation: f64,
    /// Platform-frame mount position; only used to place tips.
    pub mount_position: Vec2,
    /// Escapement engaged at t = 0.
    pub running: bool,
    /// Limit-cycle frequency recorded by calibration, if any.
    #[serde(default)]
    pub calibrated_frequency: Option<f64>,
}

impl MetronomeParams {
    /// Reference-configuration metronome with the given rod length.
    pub fn new(id: impl Into<String>, length: f64) -> Self {
        Self {
            id: id.into(),
            length,
            bob_mass: DEFAULT_BOB_MASS,
            damping: DEFAULT_DAMPING,
            escapement: DEFAULT_ESCAPEMENT,
            ref_angle: DEFAULT_REF_ANGLE,
            orientation: 0.0,
            mount_position: [0.0, 0.0],
            running: true,
            calibrated_frequency: None,
        }
    }

    pub fn swing_direction(&self) -> Vec2 {
        [self.orientation.cos(), self.orientation.sin()]
    }

    /// Calibrated frequency if known, else the small-angle estimate.
    pub fn frequency(&self, gravity: f64) -> f64 {
        self.calibrated_frequency
            .unwrap_or_else(|| (gravity / self.length).sqrt() / (2.0 * PI))
    }

    /// Amplitude of the isolated limit cycle from first-order energy balance.
    pub fn limit_cycle_amplitude(&self) -> f64 {
        if self.escapement <= self.damping {
            return 0.0;
        }
        2.0 * self.ref_angle * (1.0 - self.damping / self.escapement).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("metronomes[{}].{}", self.id, name);
        if self.id.is_empty() {
            return Err(Error::param("metronomes[].id", "must not be empty"));
        }
        positive(&field("length"), self.length)?;
        positive(&field("bob_mass"), self.bob_mass)?;
        positive(&field("ref_angle"), self.ref_angle)?;
        non_negative(&field("damping"), self.damping)?;
        non_negative(&field("escapement"), self.escapement)?;
        if !self.orientation.is_finite() {
            return Err(Error::param(field("orientation"), "must be finite"));
        }
        if !self.mount_position.iter().all(|v| v.is_finite()) {
            return Err(Error::param(field("mount_position"), "must be finite"));
        }
        Ok(())
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be > 0, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be >= 0, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mobility {
    Fixed,
    /// Rolls along one horizontal axis at angle `axis`.
    Free1d {
        axis: f64,
    },
    Free2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformParams {
    pub mass: f64,
    /// Viscous rolling resistance, kg/s.
    pub damping: f64,
    pub mobility: Mobility,
}

impl Default for PlatformParams {
    fn default() -> Self {
        Self {
            mass: DEFAULT_PLATFORM_MASS,
            damping: DEFAULT_PLATFORM_DAMPING,
            mobility: Mobility::Free2d,
        }
    }
}

impl PlatformParams {
    pub fn validate(&self) -> Result<()> {
        positive("platform.mass", self.mass)?;
        non_negative("platform.damping", self.damping)?;
        if let Mobility::Free1d { axis } = self.mobility {
            if !axis.is_finite() {
                return Err(Error::param("platform.mobility.axis", "must be finite"));
            }
        }
        Ok(())
    }
}

/// Validated, immutable physical description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assembly {
    metronomes: Vec<MetronomeParams>,
    platform: PlatformParams,
    gravity: f64,
}

impl Assembly {
    pub fn new(metronomes: Vec<MetronomeParams>, platform: PlatformParams, gravity: f64) -> Result<Self> {
        if metronomes.is_empty() {
            return Err(Error::EmptyAssembly);
        }
        positive("gravity", gravity)?;
        platform.validate()?;
        let mut seen = HashSet::new();
        for m in &metronomes {
            m.validate()?;
            if !seen.insert(m.id.as_str()) {
                return Err(Error::DuplicateId(m.id.clone()));
            }
        }
        Ok(Self {
            metronomes,
            platform,
            gravity,
        })
    }

    pub fn metronomes(&self) -> &[MetronomeParams] {
        &self.metronomes
    }

    pub fn platform(&self) -> &PlatformParams {
        &self.platform
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    pub fn len(&self) -> usize {
        self.metronomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metronomes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.metronomes
            .iter()
            .position(|m| m.id == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.metronomes.iter().map(|m| m.id.clone()).collect()
    }

    /// Total mass carried by the platform, bobs included.
    pub fn total_mass(&self) -> f64 {
        self.platform.mass + self.metronomes.iter().map(|m| m.bob_mass).sum::<f64>()
    }

    /// Copy with one field changed; used by sweeps and overrides.
    pub fn with_platform(&self, platform: PlatformParams) -> Result<Self> {
        Self::new(self.metronomes.clone(), platform, self.gravity)
    }

    pub fn with_metronomes(&self, metronomes: Vec<MetronomeParams>) -> Result<Self> {
        Self::new(metronomes, self.platform, self.gravity)
    }

    /// Tip position of metronome `i` in the platform frame.
    pub fn tip(&self, i: usize, theta: f64) -> Vec2 {
        let m = &self.metronomes[i];
        let u = m.swing_direction();
        let s = m.length * theta.sin();
        [m.mount_position[0] + s * u[0], m.mount_position[1] + s * u[1]]
    }
}

/// Dynamic state. Continuous fields are integrated; `held`, `running` and
/// `hold_until` are switched by events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub platform_pos: Vec2,
    pub platform_vel: Vec2,
    pub held: Vec<bool>,
    pub running: Vec<bool>,
    /// Scheduled auto-release time of a timed hold.
    pub hold_until: Vec<Option<f64>>,
}

impl StateVector {
    /// Everything at rest, escapements as configured.
    pub fn at_rest(assembly: &Assembly) -> Self {
        let n = assembly.len();
        Self {
            theta: vec![0.0; n],
            theta_dot: vec![0.0; n],
            platform_pos: [0.0; 2],
            platform_vel: [0.0; 2],
            held: vec![false; n],
            running: assembly.metronomes().iter().map(|m| m.running).collect(),
            hold_until: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn check_dims(&self, assembly: &Assembly) -> Result<()> {
        let n = assembly.len();
        for got in [
            self.theta.len(),
            self.theta_dot.len(),
            self.held.len(),
            self.running.len(),
            self.hold_until.len(),
        ] {
            if got != n {
                return Err(Error::DimensionMismatch { expected: n, got });
            }
        }
        Ok(())
    }

    pub fn check_finite(&self, t: f64, assembly: &Assembly) -> Result<()> {
        for (i, m) in assembly.metronomes().iter().enumerate() {
            if !self.theta[i].is_finite() {
                return Err(non_finite(t, format!("{}.theta", m.id)));
            }
            if !self.theta_dot[i].is_finite() {
                return Err(non_finite(t, format!("{}.theta_dot", m.id)));
            }
        }
        for k in 0..2 {
            if !self.platform_pos[k].is_finite() {
                return Err(non_finite(t, format!("platform.pos[{k}]")));
            }
            if !self.platform_vel[k].is_finite() {
                return Err(non_finite(t, format!("platform.vel[{k}]")));
            }
        }
        Ok(())
    }

    /// Re-imposes the hold constraint and the platform mobility constraint.
    pub fn enforce_constraints(&mut self, assembly: &Assembly) {
        for (w, &h) in self.theta_dot.iter_mut().zip(&self.held) {
            if h {
                *w = 0.0;
            }
        }
        match assembly.platform().mobility {
            Mobility::Fixed => {
                self.platform_pos = [0.0; 2];
                self.platform_vel = [0.0; 2];
            }
            Mobility::Free1d { axis } => {
                let a = [axis.cos(), axis.sin()];
                let s = dot(self.platform_pos, a);
                let v = dot(self.platform_vel, a);
                self.platform_pos = [s * a[0], s * a[1]];
                self.platform_vel = [v * a[0], v * a[1]];
            }
            Mobility::Free2d => {}
        }
    }
}

fn non_finite(time: f64, component: String) -> Error {
    Error::NonFinite { time, component }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub theta_dot: Vec<f64>,
    pub theta_ddot: Vec<f64>,
    pub platform_vel: Vec2,
    pub platform_acc: Vec2,
}

/// Pendulum acceleration in the platform frame, excluding the pivot term.
fn own_acceleration(m: &MetronomeParams, running: bool, g: f64, theta: f64, omega: f64) -> f64 {
    let mut a = -(g / m.length) * theta.sin() - m.damping * omega;
    if running {
        let r = theta / m.ref_angle;
        a += m.escapement * (1.0 - r * r) * omega;
    }
    a
}

/// Platform mass matrix `(M+Σm) I − Σ' m cos²θ u uᵀ` and the right-hand side.
fn platform_system(assembly: &Assembly, state: &StateVector) -> ([[f64; 2]; 2], Vec2) {
    let g = assembly.gravity();
    let total = assembly.total_mass();
    let mut k = [[total, 0.0], [0.0, total]];
    let c = assembly.platform().damping;
    let mut r = [-c * state.platform_vel[0], -c * state.platform_vel[1]];
    for (i, m) in assembly.metronomes().iter().enumerate() {
        if state.held[i] {
            continue;
        }
        let u = m.swing_direction();
        let (s, co) = state.theta[i].sin_cos();
        let w = state.theta_dot[i];
        let a = own_acceleration(m, state.running[i], g, state.theta[i], w);
        let kc = m.bob_mass * co * co;
        k[0][0] -= kc * u[0] * u[0];
        k[0][1] -= kc * u[0] * u[1];
        k[1][0] -= kc * u[1] * u[0];
        k[1][1] -= kc * u[1] * u[1];
        let f = m.bob_mass * m.length * (a * co - w * w * s);
        r[0] -= f * u[0];
        r[1] -= f * u[1];
    }
    (k, r)
}

/// Right-hand side of the coupled equations of motion.
pub fn derivatives(assembly: &Assembly, state: &StateVector, t: f64) -> Result<StateDerivative> {
    state.check_dims(assembly)?;
    state.check_finite(t, assembly)?;
    let g = assembly.gravity();

    let platform_acc = match assembly.platform().mobility {
        Mobility::Fixed => [0.0, 0.0],
        mobility => {
            let (k, r) = platform_system(assembly, state);
            let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
            if !(det > 0.0 && k[0][0] > 0.0) {
                return Err(Error::MassMatrixNotPositive { det });
            }
            match mobility {
                Mobility::Free1d { axis } => {
                    let a = [axis.cos(), axis.sin()];
                    let ka = [k[0][0] * a[0] + k[0][1] * a[1], k[1][0] * a[0] + k[1][1] * a[1]];
                    let s = dot(a, r) / dot(a, ka);
                    [s * a[0], s * a[1]]
                }
                _ => [
                    (k[1][1] * r[0] - k[0][1] * r[1]) / det,
                    (k[0][0] * r[1] - k[1][0] * r[0]) / det,
                ],
            }
        }
    };

    let n = assembly.len();
    let mut theta_dot = Vec::with_capacity(n);
    let mut theta_ddot = Vec::with_capacity(n);
    for (i, m) in assembly.metronomes().iter().enumerate() {
        if state.held[i] {
            theta_dot.push(0.0);
            theta_ddot.push(0.0);
            continue;
        }
        let th = state.theta[i];
        let w = state.theta_dot[i];
        let a = own_acceleration(m, state.running[i], g, th, w);
        let pivot = dot(platform_acc, m.swing_direction()) * th.cos() / m.length;
        theta_dot.push(w);
        theta_ddot.push(a - pivot);
    }

    let platform_vel = match assembly.platform().mobility {
        Mobility::Fixed => [0.0, 0.0],
        _ => state.platform_vel,
    };

    Ok(StateDerivative {
        theta_dot,
        theta_ddot,
        platform_vel,
        platform_acc,
    })
}

/// Relative residuals of the two original (un-eliminated) equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub pendulum: f64,
    pub platform: f64,
}

/// Plugs a derivative back into the pendulum and platform equations.
///
/// For a one-axis platform only the component along the axis is checked;
/// the transverse part is carried by the rails.
pub fn equation_residuals(assembly: &Assembly, state: &StateVector, d: &StateDerivative) -> Residuals {
    let g = assembly.gravity();
    let mut pend = 0.0f64;
    let mut reaction = [0.0, 0.0];
    let mut reaction_scale = 0.0f64;
    for (i, m) in assembly.metronomes().iter().enumerate() {
        if state.held[i] {
            continue;
        }
        let th = state.theta[i];
        let w = state.theta_dot[i];
        let u = m.swing_direction();
        let a = own_acceleration(m, state.running[i], g, th, w);
        let pivot = dot(d.platform_acc, u) * th.cos() / m.length;
        let scale = a.abs() + pivot.abs() + d.theta_ddot[i].abs() + f64::MIN_POSITIVE;
        pend = pend.max((d.theta_ddot[i] - a + pivot).abs() / scale);

        let (s, co) = th.sin_cos();
        let f1 = m.bob_mass * m.length * d.theta_ddot[i] * co;
        let f2 = m.bob_mass * m.length * w * w * s;
        reaction[0] += (f1 - f2) * u[0];
        reaction[1] += (f1 - f2) * u[1];
        reaction_scale += f1.abs() + f2.abs();
    }

    let platform = match assembly.platform().mobility {
        Mobility::Fixed => 0.0,
        mobility => {
            let total = assembly.total_mass();
            let c = assembly.platform().damping;
            let mut res = [0.0; 2];
            let mut scale = reaction_scale;
            for k in 0..2 {
                let inertial = total * d.platform_acc[k];
                let drag = c * state.platform_vel[k];
                res[k] = inertial + drag + reaction[k];
                scale += inertial.abs() + drag.abs();
            }
            let norm = match mobility {
                Mobility::Free1d { axis } => dot(res, [axis.cos(), axis.sin()]).abs(),
                _ => res[0].abs().max(res[1].abs()),
            };
            norm / (scale + f64::MIN_POSITIVE)
        }
    };

    Residuals {
        pendulum: pend,
        platform,
    }
}

/// Bob velocity (horizontal vector, vertical scalar) of metronome `i`.
fn bob_velocity(assembly: &Assembly, state: &StateVector, i: usize) -> (Vec2, f64) {
    let m = &assembly.metronomes()[i];
    let u = m.swing_direction();
    let (s, co) = state.theta[i].sin_cos();
    let w = state.theta_dot[i];
    let h = m.length * w * co;
    (
        [state.platform_vel[0] + h * u[0], state.platform_vel[1] + h * u[1]],
        m.length * w * s,
    )
}

/// Kinetic plus gravitational potential energy, zero at rest.
pub fn mechanical_energy(assembly: &Assembly, state: &StateVector) -> f64 {
    let g = assembly.gravity();
    let v = state.platform_vel;
    let mut e = 0.5 * assembly.platform().mass * dot(v, v);
    for (i, m) in assembly.metronomes().iter().enumerate() {
        let (vh, vz) = bob_velocity(assembly, state, i);
        e += 0.5 * m.bob_mass * (dot(vh, vh) + vz * vz);
        e += m.bob_mass * g * m.length * (1.0 - state.theta[i].cos());
    }
    e
}

/// Total horizontal momentum of platform plus bobs.
pub fn horizontal_momentum(assembly: &Assembly, state: &StateVector) -> Vec2 {
    let total = assembly.total_mass();
    let mut p = [total * state.platform_vel[0], total * state.platform_vel[1]];
    for (i, m) in assembly.metronomes().iter().enumerate() {
        let u = m.swing_direction();
        let h = m.bob_mass * m.length * state.theta_dot[i] * state.theta[i].cos();
        p[0] += h * u[0];
        p[1] += h * u[1];
    }
    p
}
