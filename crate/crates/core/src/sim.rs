//! Fixed-step RK4 integration with experimenter events.
//!
//! Events snap to the nearest step boundary. At a boundary the order is:
//! timed hold releases, then scheduled events in list order, then constraint
//! re-enforcement. Samples are linearly interpolated between the post-event
//! state at one boundary and the pre-event state at the next.

use crate::error::{Error, Result};
use crate::model::{derivatives, Assembly, StateDerivative, StateVector, Vec2};
use serde::{Deserialize, Serialize};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_SAMPLE_RATE: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Start,
    Stop,
    /// Clamp the pendulum at its current angle for `duration` seconds.
    Hold {
        duration: f64,
    },
    /// Clamp the pendulum until an explicit `Release`.
    Grab,
    Release,
    /// Instant (θ, θ̇) → (−θ, −θ̇).
    Mirror,
    /// Hold for `fraction` of the metronome's own period.
    Delay {
        fraction: f64,
    },
    Impulse {
        d_theta_dot: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub target: String,
    pub kind: EventKind,
}

impl Event {
    pub fn new(time: f64, target: impl Into<String>, kind: EventKind) -> Self {
        Self {
            time,
            target: target.into(),
            kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time.is_finite() && self.time >= 0.0) {
            return Err(Error::InvalidEvent(format!(
                "event time must be >= 0, got {}",
                self.time
            )));
        }
        match self.kind {
            EventKind::Hold { duration } if !(duration.is_finite() && duration > 0.0) => Err(Error::InvalidEvent(
                format!("hold duration must be > 0, got {duration}"),
            )),
            EventKind::Delay { fraction } if !(fraction > 0.0 && fraction < 1.0) => Err(Error::InvalidEvent(format!(
                "delay fraction must be in (0, 1), got {fraction}"
            ))),
            EventKind::Impulse { d_theta_dot } if !d_theta_dot.is_finite() => {
                Err(Error::InvalidEvent("impulse must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Time-ordered events; simultaneous events keep their insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSchedule {
    events: Vec<Event>,
}

impl EventSchedule {
    pub fn new(mut events: Vec<Event>) -> Result<Self> {
        for e in &events {
            e.validate()?;
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self { events })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn push(&mut self, event: Event) -> Result<()> {
        event.validate()?;
        let at = self.events.partition_point(|e| e.time <= event.time);
        self.events.insert(at, event);
        Ok(())
    }
}

/// Applies one event instantaneously. `event.time` is taken as the current
/// time; it is only used to set the auto-release time of a hold.
pub fn apply_event(assembly: &Assembly, state: &StateVector, event: &Event) -> Result<StateVector> {
    event.validate()?;
    let i = assembly.index_of(&event.target)?;
    let mut s = state.clone();
    match event.kind {
        EventKind::Start => s.running[i] = true,
        EventKind::Stop => s.running[i] = false,
        EventKind::Hold { duration } => hold(&mut s, i, event, Some(duration))?,
        EventKind::Grab => hold(&mut s, i, event, None)?,
        EventKind::Delay { fraction } => {
            let f = assembly.metronomes()[i].frequency(assembly.gravity());
            hold(&mut s, i, event, Some(fraction / f))?;
        }
        EventKind::Release => {
            if !s.held[i] {
                return Err(Error::InvalidEvent(format!(
                    "release on `{}` which is not held",
                    event.target
                )));
            }
            s.held[i] = false;
            s.hold_until[i] = None;
        }
        EventKind::Mirror => {
            s.theta[i] = -s.theta[i];
            s.theta_dot[i] = -s.theta_dot[i];
        }
        EventKind::Impulse { d_theta_dot } => {
            if !s.held[i] {
                s.theta_dot[i] += d_theta_dot;
            }
        }
    }
    s.enforce_constraints(assembly);
    Ok(s)
}

fn hold(s: &mut StateVector, i: usize, event: &Event, duration: Option<f64>) -> Result<()> {
    if s.held[i] {
        return Err(Error::InvalidEvent(format!(
            "hold on `{}` which is already held",
            event.target
        )));
    }
    s.held[i] = true;
    s.theta_dot[i] = 0.0;
    s.hold_until[i] = duration.map(|d| event.time + d);
    Ok(())
}

fn advanced(state: &StateVector, k: &StateDerivative, h: f64) -> StateVector {
    let mut s = state.clone();
    for i in 0..s.theta.len() {
        s.theta[i] += h * k.theta_dot[i];
        s.theta_dot[i] += h * k.theta_ddot[i];
    }
    for j in 0..2 {
        s.platform_pos[j] += h * k.platform_vel[j];
        s.platform_vel[j] += h * k.platform_acc[j];
    }
    s
}

/// One classical four-stage Runge–Kutta step.
pub fn rk4_step(assembly: &Assembly, state: &StateVector, t: f64, dt: f64) -> Result<StateVector> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidRequest(format!("dt must be > 0, got {dt}")));
    }
    let k1 = derivatives(assembly, state, t)?;
    let k2 = derivatives(assembly, &advanced(state, &k1, 0.5 * dt), t + 0.5 * dt)?;
    let k3 = derivatives(assembly, &advanced(state, &k2, 0.5 * dt), t + 0.5 * dt)?;
    let k4 = derivatives(assembly, &advanced(state, &k3, dt), t + dt)?;

    let mut s = state.clone();
    let w = dt / 6.0;
    for i in 0..s.theta.len() {
        s.theta[i] += w * (k1.theta_dot[i] + 2.0 * k2.theta_dot[i] + 2.0 * k3.theta_dot[i] + k4.theta_dot[i]);
        s.theta_dot[i] += w * (k1.theta_ddot[i] + 2.0 * k2.theta_ddot[i] + 2.0 * k3.theta_ddot[i] + k4.theta_ddot[i]);
    }
    for j in 0..2 {
        s.platform_pos[j] +=
            w * (k1.platform_vel[j] + 2.0 * k2.platform_vel[j] + 2.0 * k3.platform_vel[j] + k4.platform_vel[j]);
        s.platform_vel[j] +=
            w * (k1.platform_acc[j] + 2.0 * k2.platform_acc[j] + 2.0 * k3.platform_acc[j] + k4.platform_acc[j]);
    }
    s.enforce_constraints(assembly);
    s.check_finite(t + dt, assembly)?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: StateVector,
    /// Platform-frame tip coordinates per metronome.
    pub tips: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub sample_rate: f64,
    pub t0: f64,
    pub ids: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn empty(ids: Vec<String>, t0: f64, sample_rate: f64) -> Self {
        Self {
            sample_rate,
            t0,
            ids,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn theta(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.state.theta[i]).collect()
    }

    /// Tip displacement along the metronome's own swing direction.
    pub fn swing(&self, assembly: &Assembly, i: usize) -> Vec<f64> {
        let l = assembly.metronomes()[i].length;
        self.samples.iter().map(|s| l * s.state.theta[i].sin()).collect()
    }

    pub fn tip_coord(&self, i: usize, axis: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.tips[i][axis]).collect()
    }

    pub fn platform_positions(&self) -> Vec<Vec2> {
        self.samples.iter().map(|s| s.state.platform_pos).collect()
    }

    /// Samples with `from <= t < to`.
    pub fn window(&self, from: f64, to: f64) -> &[Sample] {
        let a = self.samples.partition_point(|s| s.t < from);
        let b = self.samples.partition_point(|s| s.t < to);
        &self.samples[a..b.max(a)]
    }
}

fn lerp_sample(assembly: &Assembly, a: &StateVector, b: &StateVector, w: f64, t: f64) -> Sample {
    let mix = |x: f64, y: f64| {
        if w == 0.0 {
            x
        } else if w == 1.0 {
            y
        } else {
            x + w * (y - x)
        }
    };
    let mut state = if w == 1.0 { b.clone() } else { a.clone() };
    for i in 0..state.theta.len() {
        state.theta[i] = mix(a.theta[i], b.theta[i]);
        state.theta_dot[i] = mix(a.theta_dot[i], b.theta_dot[i]);
    }
    for j in 0..2 {
        state.platform_pos[j] = mix(a.platform_pos[j], b.platform_pos[j]);
        state.platform_vel[j] = mix(a.platform_vel[j], b.platform_vel[j]);
    }
    let tips = (0..state.theta.len())
        .map(|i| assembly.tip(i, state.theta[i]))
        .collect();
    Sample { t, state, tips }
}

/// Stepping engine shared by batch integration and the live session.
///
/// Time is `t0 + step·dt`, computed by multiplication so that batch and live
/// runs land on identical grids.
#[derive(Debug, Clone)]
pub struct Simulator {
    assembly: Assembly,
    state: StateVector,
    t0: f64,
    dt: f64,
    step: u64,
    sample_rate: f64,
    next_sample: u64,
}

impl Simulator {
    pub fn new(assembly: Assembly, initial: StateVector, t0: f64, dt: f64, sample_rate: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidRequest(format!("dt must be > 0, got {dt}")));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidRequest(format!(
                "sample rate must be > 0, got {sample_rate}"
            )));
        }
        if dt > 0.5 / sample_rate {
            return Err(Error::InvalidRequest(format!(
                "dt = {dt} exceeds half the sample period ({})",
                0.5 / sample_rate
            )));
        }
        initial.check_dims(&assembly)?;
        initial.check_finite(t0, &assembly)?;
        let mut state = initial;
        state.enforce_constraints(&assembly);
        Ok(Self {
            assembly,
            state,
            t0,
            dt,
            step: 0,
            sample_rate,
            next_sample: 0,
        })
    }

    pub fn assembly(&self) -> &Assembly {
        &self.assembly
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.time_at(self.step)
    }

    pub fn time_at(&self, step: u64) -> f64 {
        self.t0 + step as f64 * self.dt
    }

    /// Step boundary nearest to `t`.
    pub fn snap(&self, t: f64) -> u64 {
        ((t - self.t0) / self.dt).round().max(0.0) as u64
    }

    fn sample_time(&self, j: u64) -> f64 {
        self.t0 + j as f64 / self.sample_rate
    }

    /// Releases timed holds whose release time has been reached.
    fn release_due(&mut self) {
        let now = self.time();
        let half = 0.5 * self.dt;
        for i in 0..self.state.len() {
            if let Some(until) = self.state.hold_until[i] {
                if now >= until - half {
                    self.state.held[i] = false;
                    self.state.hold_until[i] = None;
                }
            }
        }
    }

    /// Applies an event at the current step boundary.
    pub fn apply(&mut self, kind: EventKind, target: &str) -> Result<f64> {
        let now = self.time();
        let ev = Event::new(now.max(0.0), target, kind);
        self.state = apply_event(&self.assembly, &self.state, &ev)?;
        Ok(now)
    }

    /// Emits the sample at t0 if it has not been emitted yet.
    pub fn initial_sample(&mut self) -> Option<Sample> {
        if self.next_sample == 0 && self.step == 0 {
            self.next_sample = 1;
            Some(lerp_sample(&self.assembly, &self.state, &self.state, 0.0, self.t0))
        } else {
            None
        }
    }

    /// Advances one step and returns the samples falling in `(t_k, t_{k+1}]`,
    /// skipping any past `t_end`.
    pub fn advance(&mut self, t_end: f64) -> Result<Vec<Sample>> {
        let t = self.time();
        let next = rk4_step(&self.assembly, &self.state, t, self.dt)?;
        let t_next = self.time_at(self.step + 1);
        let mut out = Vec::new();
        let tol = 1e-9 * self.dt;
        loop {
            let ts = self.sample_time(self.next_sample);
            if ts > t_next + tol || ts > t_end + tol {
                break;
            }
            let w = ((ts - t) / self.dt).clamp(0.0, 1.0);
            out.push(lerp_sample(&self.assembly, &self.state, &next, w, ts));
            self.next_sample += 1;
        }
        self.state = next;
        self.step += 1;
        self.release_due();
        Ok(out)
    }
}

/// Integrates from `t0` to `t1` with fixed step `dt`, sampling at
/// `sample_rate` Hz.
pub fn integrate(
    assembly: &Assembly,
    initial: &StateVector,
    schedule: &EventSchedule,
    t0: f64,
    t1: f64,
    dt: f64,
    sample_rate: f64,
) -> Result<Trajectory> {
    if !(t1 > t0) {
        return Err(Error::InvalidRequest(format!("t1 = {t1} must exceed t0 = {t0}")));
    }
    for e in schedule.events() {
        if e.time < t0 || e.time > t1 {
            return Err(Error::InvalidEvent(format!(
                "event at t = {} lies outside [{t0}, {t1}]",
                e.time
            )));
        }
        assembly.index_of(&e.target)?;
    }
    let mut sim = Simulator::new(assembly.clone(), initial.clone(), t0, dt, sample_rate)?;
    let n_steps = ((t1 - t0) / dt - 1e-9).ceil() as u64;
    let n_samples = ((t1 - t0) * sample_rate + 1e-9).floor() as usize + 1;

    let snapped: Vec<(u64, &Event)> = schedule.events().iter().map(|e| (sim.snap(e.time), e)).collect();
    let mut cursor = 0;
    let mut samples = Vec::with_capacity(n_samples);

    loop {
        let k = sim.step_index();
        while cursor < snapped.len() && snapped[cursor].0 <= k {
            let ev = snapped[cursor].1;
            sim.apply(ev.kind, &ev.target)?;
            cursor += 1;
        }
        if let Some(s) = sim.initial_sample() {
            samples.push(s);
        }
        if k >= n_steps {
            break;
        }
        samples.extend(sim.advance(t1)?);
    }
    debug_assert_eq!(samples.len(), n_samples);

    Ok(Trajectory {
        sample_rate,
        t0,
        ids: assembly.ids(),
        samples,
    })
}
