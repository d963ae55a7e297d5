//! Canned scenarios: two-metronome sync, 2:1 locking, the three-metronome
//! latch, and lock-range sweeps.
//!
//! Every scenario takes an explicit seed. Reports carry pass/fail checks
//! with the numbers behind them instead of panicking on a failed stage.

use crate::config::{self, build_assembly_with_dt, AssemblyConfig, PlatformConfig};
use crate::error::{Error, Result};
use crate::model::{Assembly, Mobility, StateVector};
use crate::phase::{
    axis_separation, circular_stats, decode_bit, detect_lock_at, harmonic_lissajous, lissajous, phase_difference,
    rotation_sense, wrap, zero_cross_phase, BitReading, BitValue, HarmonicRatio, Lissajous, LockReport, LockTolerances,
    PhaseSeries, RotationSense, WrappedSeries, DEFAULT_GUARD, DEFAULT_ROTATION_THRESHOLD, MIN_WINDOW,
};
use crate::sim::{Event, EventKind, Sample, Simulator, Trajectory, DEFAULT_DT, DEFAULT_SAMPLE_RATE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::path::PathBuf;

/// Spacing of the lock evaluations used to build the segment timeline.
pub const EVAL_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Drift,
    #[serde(rename = "locked_bit_0")]
    Bit0,
    #[serde(rename = "locked_bit_1")]
    Bit1,
    Transient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: f64,
    pub end: f64,
    /// Lock offset at the last evaluation inside the segment, if locked there.
    pub psi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitEvent {
    pub t: f64,
    pub reading: BitReading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeled<T> {
    pub label: String,
    pub value: T,
}

fn labeled<T>(label: impl Into<String>, value: T) -> Labeled<T> {
    Labeled {
        label: label.into(),
        value,
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub seed: u64,
    pub segments: Vec<Segment>,
    pub bits: Vec<BitEvent>,
    pub psi0: Option<f64>,
    pub recovery_cycles: Option<f64>,
    pub locks: Vec<Labeled<LockReport>>,
    /// Lissajous metrics; point clouds are dropped to keep reports small.
    pub lissajous: Vec<Labeled<LissajousSummary>>,
    pub rotation: Vec<Labeled<RotationSense>>,
    /// Events as applied, on the integration grid. Replaying them through
    /// `integrate` reproduces the run.
    pub events: Vec<Event>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub artifacts: Vec<PathBuf>,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
    #[serde(skip)]
    pub assembly: Option<Assembly>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn lock(&self, label: &str) -> Option<&LockReport> {
        self.locks.iter().find(|l| l.label == label).map(|l| &l.value)
    }

    /// Segment kinds in order, transients included.
    pub fn segment_kinds(&self) -> Vec<SegmentKind> {
        self.segments.iter().map(|s| s.kind).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LissajousSummary {
    pub aspect: f64,
    pub major_axis_angle: f64,
    pub closure: f64,
}

impl From<&Lissajous> for LissajousSummary {
    fn from(l: &Lissajous) -> Self {
        Self {
            aspect: l.aspect,
            major_axis_angle: l.major_axis_angle,
            closure: l.closure,
        }
    }
}

/// Running metronomes start on their limit cycle at seeded random phases;
/// stopped ones start at rest and held.
pub fn seeded_start(assembly: &Assembly, seed: u64) -> StateVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = assembly.metronomes().iter().map(|_| rng.gen_range(0.0..TAU)).collect();
    start_with_phases(assembly, &phases)
}

pub fn start_with_phases(assembly: &Assembly, phases: &[f64]) -> StateVector {
    let mut s = StateVector::at_rest(assembly);
    for (i, m) in assembly.metronomes().iter().enumerate() {
        if m.running {
            let a = m.limit_cycle_amplitude();
            let w = TAU * m.frequency(assembly.gravity());
            s.theta[i] = a * phases[i].cos();
            s.theta_dot[i] = -a * w * phases[i].sin();
        } else {
            s.held[i] = true;
        }
    }
    s
}

/// Drives a `Simulator` through a scripted run and records what it applied.
struct Runner {
    sim: Simulator,
    samples: Vec<Sample>,
    events: Vec<Event>,
    t_end: f64,
    n_steps: u64,
    rate: f64,
}

impl Runner {
    fn new(assembly: Assembly, initial: StateVector, t_end: f64, dt: f64, rate: f64) -> Result<Self> {
        let mut sim = Simulator::new(assembly, initial, 0.0, dt, rate)?;
        let n_steps = (t_end / dt - 1e-9).ceil() as u64;
        let samples = sim.initial_sample().into_iter().collect();
        Ok(Self {
            sim,
            samples,
            events: Vec::new(),
            t_end,
            n_steps,
            rate,
        })
    }

    fn step(&mut self) -> Result<bool> {
        if self.sim.step_index() >= self.n_steps {
            return Ok(false);
        }
        let out = self.sim.advance(self.t_end)?;
        self.samples.extend(out);
        Ok(true)
    }

    fn run_until(&mut self, t: f64) -> Result<()> {
        let target = self.sim.snap(t).min(self.n_steps);
        while self.sim.step_index() < target {
            self.step()?;
        }
        Ok(())
    }

    /// Steps until the angular velocity of `index` changes sign, at most
    /// `max_wait` seconds.
    fn run_to_turning_point(&mut self, index: usize, max_wait: f64) -> Result<()> {
        let limit = self.sim.time() + max_wait;
        let mut prev = self.sim.state().theta_dot[index];
        while self.sim.time() < limit {
            if !self.step()? {
                break;
            }
            let now = self.sim.state().theta_dot[index];
            if prev != 0.0 && prev * now <= 0.0 {
                break;
            }
            prev = now;
        }
        Ok(())
    }

    fn apply(&mut self, kind: EventKind, target: &str) -> Result<f64> {
        let t = self.sim.apply(kind, target)?;
        self.events.push(Event::new(t, target, kind));
        Ok(t)
    }

    fn finish(mut self) -> Result<(Trajectory, Vec<Event>)> {
        while self.step()? {}
        Ok((
            Trajectory {
                sample_rate: self.rate,
                t0: 0.0,
                ids: self.sim.assembly().ids(),
                samples: self.samples,
            },
            self.events,
        ))
    }
}

fn phase_of(tr: &Trajectory, i: usize) -> Result<PhaseSeries> {
    zero_cross_phase(&tr.theta(i), tr.t0, tr.sample_rate, tr.ids[i].clone())
}

/// Phase difference between metronomes `i` and `j` of a trajectory.
pub fn pair_difference(tr: &Trajectory, i: usize, j: usize, ratio: HarmonicRatio) -> Result<WrappedSeries> {
    phase_difference(&phase_of(tr, i)?, &phase_of(tr, j)?, ratio)
}

/// Lock report over the trailing window ending at `t`, shrinking the window
/// to the available data (never below the minimum).
fn lock_at(diff: &WrappedSeries, t: f64, tol: LockTolerances) -> Option<LockReport> {
    let first = *diff.times.first()?;
    let window = tol.window.min(t - first);
    if window < MIN_WINDOW {
        return None;
    }
    detect_lock_at(diff, t, LockTolerances { window, ..tol }).ok()
}

/// First evaluation time in `[from, to]` at which the pair reads locked.
fn first_lock(diff: &WrappedSeries, from: f64, to: f64, tol: LockTolerances) -> Option<LockReport> {
    let mut t = from;
    while t <= to + 1e-9 {
        if let Some(r) = lock_at(diff, t, tol) {
            if r.locked {
                return Some(r);
            }
        }
        t += EVAL_STEP;
    }
    None
}

fn common_options(dt: f64, rate: f64) -> Result<()> {
    if !(dt > 0.0 && rate > 0.0) {
        return Err(Error::InvalidRequest(format!(
            "dt = {dt} and sample rate = {rate} must be > 0"
        )));
    }
    Ok(())
}

fn with_platform(mut cfg: AssemblyConfig, mobility: Option<Mobility>, mass: Option<f64>) -> AssemblyConfig {
    let p = cfg.platform.take().unwrap_or_default();
    cfg.platform = Some(PlatformConfig {
        mass: mass.or(p.mass),
        damping: p.damping,
        mobility: mobility.or(p.mobility),
    });
    cfg
}

// ---------------------------------------------------------------------------
// Two parallel metronomes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPhases {
    Random,
    /// Exactly opposite swings. With zero detuning this is the symmetric
    /// solution in which the platform never moves.
    AntiPhase,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyncOptions {
    pub seed: u64,
    pub detuning_split: f64,
    pub duration: f64,
    pub mobility: Option<Mobility>,
    pub platform_mass: Option<f64>,
    pub initial: InitialPhases,
    pub dt: f64,
    pub sample_rate: f64,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            detuning_split: config::DEFAULT_DETUNING_SPLIT,
            duration: 120.0,
            mobility: None,
            platform_mass: None,
            initial: InitialPhases::Random,
            dt: DEFAULT_DT,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

/// Two same-direction metronomes on a platform rolling along their swing.
pub fn run_sync_demo(opts: &SyncOptions) -> Result<ExperimentReport> {
    common_options(opts.dt, opts.sample_rate)?;
    let cfg = with_platform(
        config::classic_sync(opts.detuning_split),
        opts.mobility,
        opts.platform_mass,
    );
    let asm = build_assembly_with_dt(&cfg, opts.dt)?;
    let initial = match opts.initial {
        InitialPhases::Random => seeded_start(&asm, opts.seed),
        InitialPhases::AntiPhase => start_with_phases(&asm, &[0.0, PI]),
    };
    let fixed = asm.platform().mobility == Mobility::Fixed;
    let runner = Runner::new(asm.clone(), initial, opts.duration, opts.dt, opts.sample_rate)?;
    let (tr, events) = runner.finish()?;
    let diff = pair_difference(&tr, 0, 1, HarmonicRatio::ONE_TO_ONE)?;
    let tol = LockTolerances::default();

    let mut report = ExperimentReport {
        scenario: if fixed { "sync_fixed".into() } else { "sync".into() },
        seed: opts.seed,
        events,
        ..Default::default()
    };
    let end = lock_at(&diff, opts.duration, tol).ok_or(Error::InsufficientData {
        needed: MIN_WINDOW,
        available: diff.duration(),
    })?;
    report.locks.push(labeled("end", end));
    let first = first_lock(&diff, diff.times[0] + MIN_WINDOW, opts.duration, tol);
    if let Some(r) = first {
        report.locks.push(labeled("first", r));
    }
    let df = asm.metronomes()[0].frequency(asm.gravity()) - asm.metronomes()[1].frequency(asm.gravity());
    let overall = crate::phase::linear_slope(&diff.times, &diff.unwrapped());

    if fixed {
        let expected = TAU * df;
        let rel = if expected != 0.0 {
            (overall - expected).abs() / expected.abs()
        } else {
            overall.abs()
        };
        report.checks.push(Check::new(
            "never_locks",
            first.is_none(),
            format!("first lock: {:?}", first.map(|r| r.t_end)),
        ));
        report.checks.push(Check::new(
            "drift_matches_detuning",
            rel <= 0.05,
            format!("drift {overall:.5} rad/s vs 2πΔf {expected:.5} rad/s (rel err {rel:.3})"),
        ));
    } else {
        report.checks.push(Check::new(
            "locks_in_phase",
            end.locked && end.mean_offset.abs() < 0.3,
            format!(
                "locked {} ψ {:.3} rad at t = {:.1}",
                end.locked, end.mean_offset, end.t_end
            ),
        ));
    }
    if opts.initial == InitialPhases::AntiPhase && opts.detuning_split == 0.0 {
        report.notes.push(
            "symmetric anti-phase start with identical metronomes: the platform force cancels \
             exactly, so the anti-phase solution persists until something breaks the symmetry"
                .into(),
        );
    }
    report.segments = timeline(&diff, 0.0, opts.duration, f64::NEG_INFINITY, tol).0;
    report.trajectory = Some(tr);
    report.assembly = Some(asm);
    Ok(report)
}

// ---------------------------------------------------------------------------
// 1 Hz against 2 Hz

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShilOptions {
    pub seed: u64,
    /// Offset of the fast metronome from exactly twice the slow one, Hz.
    pub fast_detuning: f64,
    pub duration: f64,
    pub mobility: Option<Mobility>,
    pub platform_mass: Option<f64>,
    pub dt: f64,
    pub sample_rate: f64,
}

impl Default for ShilOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            fast_detuning: config::SHIL_FAST_DETUNING,
            duration: 60.0,
            mobility: None,
            platform_mass: None,
            dt: DEFAULT_DT,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

pub fn run_shil_demo(opts: &ShilOptions) -> Result<ExperimentReport> {
    common_options(opts.dt, opts.sample_rate)?;
    let cfg = with_platform(config::shil_pair(opts.fast_detuning), opts.mobility, opts.platform_mass);
    let asm = build_assembly_with_dt(&cfg, opts.dt)?;
    let fixed = asm.platform().mobility == Mobility::Fixed;
    let runner = Runner::new(
        asm.clone(),
        seeded_start(&asm, opts.seed),
        opts.duration,
        opts.dt,
        opts.sample_rate,
    )?;
    let (tr, events) = runner.finish()?;
    let slow = phase_of(&tr, 0)?;
    let fast = phase_of(&tr, 1)?;
    let diff = phase_difference(&slow, &fast, HarmonicRatio::TWO_TO_ONE)?;
    let tol = LockTolerances::default();
    let end = lock_at(&diff, opts.duration, tol).ok_or(Error::InsufficientData {
        needed: MIN_WINDOW,
        available: diff.duration(),
    })?;
    // The second half of the run: long enough for an anchored pair to drift
    // visibly, late enough for a rolling pair to have settled.
    let liss = harmonic_lissajous(&slow, &fast, HarmonicRatio::TWO_TO_ONE, 0.5 * opts.duration, end.t_end)?;

    let mut report = ExperimentReport {
        scenario: if fixed { "shil_fixed".into() } else { "shil".into() },
        seed: opts.seed,
        events,
        ..Default::default()
    };
    report.locks.push(labeled("end", end));
    report
        .lissajous
        .push(labeled("slow_vs_fast", LissajousSummary::from(&liss)));
    if fixed {
        report.checks.push(Check::new(
            "unlocked",
            !end.locked,
            format!("drift {:.4} rad/s spread {:.3} rad", end.drift_rate, end.spread),
        ));
        report.checks.push(Check::new(
            "lissajous_fills",
            liss.aspect > 0.5,
            format!("aspect {:.3}", liss.aspect),
        ));
    } else {
        report.checks.push(Check::new(
            "locked_2_to_1",
            end.locked,
            format!(
                "ψ {:.3} drift {:.4} rad/s spread {:.3} rad",
                end.mean_offset, end.drift_rate, end.spread
            ),
        ));
        report.checks.push(Check::new(
            "lissajous_line",
            liss.aspect < 0.25,
            format!("aspect {:.3}", liss.aspect),
        ));
    }
    report.segments = timeline(&diff, 0.0, opts.duration, f64::NEG_INFINITY, tol).0;
    report.trajectory = Some(tr);
    report.assembly = Some(asm);
    Ok(report)
}

// ---------------------------------------------------------------------------
// The latch

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipMethod {
    /// Hold for half a calibrated cycle, then let go.
    Hold,
    /// Instantaneous θ, θ̇ → −θ, −θ̇.
    Mirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldPhase {
    /// Grab the pendulum at its next turning point.
    TurningPoint,
    /// Grab it wherever it is at the scheduled time.
    Immediate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatchProtocol {
    pub t_start_injector: f64,
    pub t_flip: Option<f64>,
    /// A second flip, for involution tests.
    pub t_flip_again: Option<f64>,
    pub t_perturb: Option<f64>,
    pub perturb_fraction: f64,
    pub t_end: f64,
    pub detuning_split: f64,
    pub flip_method: FlipMethod,
    pub hold_phase: HoldPhase,
    /// The metronome that gets flipped and nudged.
    pub target: String,
    pub seed: u64,
    pub dt: f64,
    pub sample_rate: f64,
    pub platform_mass: Option<f64>,
}

impl Default for LatchProtocol {
    fn default() -> Self {
        Self {
            t_start_injector: 45.0,
            t_flip: Some(110.0),
            t_flip_again: None,
            t_perturb: Some(155.0),
            perturb_fraction: 0.1,
            t_end: 270.0,
            detuning_split: config::DEFAULT_DETUNING_SPLIT,
            flip_method: FlipMethod::Hold,
            hold_phase: HoldPhase::TurningPoint,
            target: "green".into(),
            seed: 1,
            dt: DEFAULT_DT,
            sample_rate: DEFAULT_SAMPLE_RATE,
            platform_mass: None,
        }
    }
}

impl LatchProtocol {
    pub fn validate(&self) -> Result<()> {
        let mut times = vec![("t_start_injector", self.t_start_injector)];
        times.extend(self.t_flip.map(|t| ("t_flip", t)));
        times.extend(self.t_flip_again.map(|t| ("t_flip_again", t)));
        times.extend(self.t_perturb.map(|t| ("t_perturb", t)));
        times.push(("t_end", self.t_end));
        if !(self.t_start_injector > 0.0) {
            return Err(Error::param("t_start_injector", "must be > 0"));
        }
        for w in times.windows(2) {
            if !(w[0].1 < w[1].1) {
                return Err(Error::param(w[1].0, format!("must come after {}", w[0].0)));
            }
        }
        if !(self.perturb_fraction >= 0.0 && self.perturb_fraction.is_finite()) {
            return Err(Error::param("perturb_fraction", "must be >= 0"));
        }
        common_options(self.dt, self.sample_rate)
    }

    fn config(&self) -> AssemblyConfig {
        with_platform(config::paper_latch(self.detuning_split), None, self.platform_mass)
    }

    /// Builds the calibrated assembly this protocol runs on.
    pub fn assembly(&self) -> Result<Assembly> {
        build_assembly_with_dt(&self.config(), self.dt)
    }
}

/// The three-metronome latch: free drift, injector start, a half-cycle flip,
/// a small delay, then free running to the end.
pub fn run_latch_experiment(protocol: &LatchProtocol) -> Result<ExperimentReport> {
    let asm = protocol.assembly()?;
    run_latch_on(&asm, protocol)
}

/// Like [`run_latch_experiment`] on an already calibrated assembly. The
/// injector is the last metronome; the pair are the first two.
pub fn run_latch_on(asm: &Assembly, protocol: &LatchProtocol) -> Result<ExperimentReport> {
    protocol.validate()?;
    if asm.len() != 3 {
        return Err(Error::InvalidRequest("the latch needs exactly three metronomes".into()));
    }
    let ids = asm.ids();
    let target = asm.index_of(&protocol.target)?;
    if target == 2 {
        return Err(Error::InvalidRequest("flip target must be one of the 1 Hz pair".into()));
    }
    let injector = ids[2].clone();
    let f_target = asm.metronomes()[target].frequency(asm.gravity());
    let mut ms = asm.metronomes().to_vec();
    ms[2].running = false;
    let asm = asm.with_metronomes(ms)?;

    let initial = seeded_start(&asm, protocol.seed);
    let mut run = Runner::new(asm.clone(), initial, protocol.t_end, protocol.dt, protocol.sample_rate)?;

    run.run_until(protocol.t_start_injector)?;
    let blue = &asm.metronomes()[2];
    let kick = blue.limit_cycle_amplitude() * TAU * blue.frequency(asm.gravity());
    let t_injector = run.apply(EventKind::Release, &injector)?;
    run.apply(EventKind::Start, &injector)?;
    run.apply(EventKind::Impulse { d_theta_dot: kick }, &injector)?;

    let flip = |run: &mut Runner, t: f64| -> Result<f64> {
        run.run_until(t)?;
        match protocol.flip_method {
            FlipMethod::Hold => {
                if protocol.hold_phase == HoldPhase::TurningPoint {
                    run.run_to_turning_point(target, 1.0 / f_target)?;
                }
                run.apply(
                    EventKind::Hold {
                        duration: 0.5 / f_target,
                    },
                    &protocol.target,
                )
            }
            FlipMethod::Mirror => run.apply(EventKind::Mirror, &protocol.target),
        }
    };
    let t_flip = protocol.t_flip.map(|t| flip(&mut run, t)).transpose()?;
    protocol.t_flip_again.map(|t| flip(&mut run, t)).transpose()?;
    let t_perturb = match protocol.t_perturb {
        Some(t) => {
            run.run_until(t)?;
            if protocol.hold_phase == HoldPhase::TurningPoint {
                run.run_to_turning_point(target, 1.0 / f_target)?;
            }
            Some(run.apply(
                EventKind::Delay {
                    fraction: protocol.perturb_fraction,
                },
                &protocol.target,
            )?)
        }
        None => None,
    };
    let (tr, events) = run.finish()?;

    let tol = LockTolerances::default();
    let diff = pair_difference(&tr, 0, 1, HarmonicRatio::ONE_TO_ONE)?;
    let (segments, psi0, bits) = timeline(&diff, 0.0, protocol.t_end, t_injector, tol);

    let mut report = ExperimentReport {
        scenario: "latch".into(),
        seed: protocol.seed,
        segments,
        bits,
        psi0: psi0.map(|r| r.mean_offset),
        events,
        ..Default::default()
    };
    if let Some(r) = psi0 {
        report.locks.push(labeled("latch_set", r));
    }
    let lock_before = |t: f64| lock_at(&diff, t, tol);
    if let Some(t) = t_flip {
        if let Some(r) = lock_before(t) {
            report.locks.push(labeled("before_flip", r));
        }
    }
    if let Some(t) = t_perturb {
        if let Some(r) = lock_before(t) {
            report.locks.push(labeled("before_perturb", r));
        }
    }
    if let Some(r) = lock_at(&diff, protocol.t_end, tol) {
        report.locks.push(labeled("end", r));
    }

    // Recovery: time from the nudge until Δ stays within the spread
    // tolerance of the pre-nudge offset for good.
    if let (Some(tp), Some(before)) = (t_perturb, report.lock("before_perturb").copied()) {
        if before.locked {
            let f_pair =
                0.5 * (asm.metronomes()[0].frequency(asm.gravity()) + asm.metronomes()[1].frequency(asm.gravity()));
            let after = diff.slice(tp, protocol.t_end);
            let mut last_out = None;
            for (t, v) in after.times.iter().zip(&after.values) {
                if wrap(v - before.mean_offset).abs() > tol.spread_tol {
                    last_out = Some(*t);
                }
            }
            let settled = last_out.unwrap_or(tp);
            let stays = after.times.last().is_some_and(|&end| end - settled >= MIN_WINDOW);
            report.recovery_cycles = stays.then(|| ((settled - tp) * f_pair).max(0.0));
        }
    }

    // Geometry of the two stored states.
    let locked_segments: Vec<&Segment> = report
        .segments
        .iter()
        .filter(|s| matches!(s.kind, SegmentKind::Bit0 | SegmentKind::Bit1))
        .collect();
    // The window ending at a segment's last locked evaluation.
    let seg_window = |s: &Segment| {
        let to = if s.end >= protocol.t_end {
            s.end
        } else {
            s.end - EVAL_STEP
        };
        ((to - tol.window).max(0.0), to)
    };
    let mut signatures: Vec<(SegmentKind, f64, Option<RotationSense>)> = Vec::new();
    for seg in &locked_segments {
        let (from, to) = seg_window(seg);
        let w = tr.window(from, to);
        let red: Vec<f64> = w.iter().map(|s| s.state.theta[0]).collect();
        let green: Vec<f64> = w.iter().map(|s| s.state.theta[1]).collect();
        if let Ok(l) = lissajous(&red, &green) {
            let label = format!("{:?}@{:.1}", seg.kind, seg.start).to_lowercase();
            report
                .lissajous
                .push(labeled(label.clone(), LissajousSummary::from(&l)));
            let plat: Vec<_> = w.iter().map(|s| s.state.platform_pos).collect();
            let rot = rotation_sense(&plat, tr.sample_rate, DEFAULT_ROTATION_THRESHOLD).ok();
            if let Some(r) = rot {
                report.rotation.push(labeled(label, r));
            }
            signatures.push((seg.kind, l.major_axis_angle, rot));
        }
    }

    // Stage checks.
    let kinds = report.segment_kinds();
    let first_drift = kinds.first() == Some(&SegmentKind::Drift);
    report.checks.push(Check::new(
        "drift_before_injector",
        first_drift && report.segments[0].end >= t_injector,
        format!("first segment {:?}", report.segments.first()),
    ));
    report.checks.push(Check::new(
        "latch_set",
        psi0.is_some(),
        match psi0 {
            Some(r) => format!("ψ0 {:.3} rad, locked at t = {:.1} s", r.mean_offset, r.t_end),
            None => "pair never locked after the injector started".into(),
        },
    ));
    let locked_kinds: Vec<SegmentKind> = locked_segments.iter().map(|s| s.kind).collect();
    let flips = protocol.t_flip.is_some() as usize + protocol.t_flip_again.is_some() as usize;
    let mut expected = vec![SegmentKind::Bit0];
    if flips >= 1 {
        expected.push(SegmentKind::Bit1);
    }
    if flips >= 2 {
        expected.push(SegmentKind::Bit0);
    }
    let mut collapsed = locked_kinds.clone();
    collapsed.dedup();
    report.checks.push(Check::new(
        "bit_sequence",
        collapsed == expected,
        format!("locked segments {collapsed:?}, expected {expected:?}"),
    ));
    let psi_of = |kind: SegmentKind| locked_segments.iter().filter(|s| s.kind == kind).find_map(|s| s.psi);
    if let (Some(p0), Some(p1)) = (psi_of(SegmentKind::Bit0), psi_of(SegmentKind::Bit1)) {
        let sep = wrap(p1 - p0).abs();
        report.checks.push(Check::new(
            "bits_separated_by_pi",
            (sep - PI).abs() <= 0.3,
            format!("ψ(bit 0) {p0:.3}, ψ(bit 1) {p1:.3}, separation {sep:.3} rad"),
        ));
        let a0 = signatures.iter().find(|s| s.0 == SegmentKind::Bit0).map(|s| s.1);
        let a1 = signatures.iter().find(|s| s.0 == SegmentKind::Bit1).map(|s| s.1);
        if let (Some(a0), Some(a1)) = (a0, a1) {
            let sep = axis_separation(a0, a1).to_degrees();
            report.checks.push(Check::new(
                "lissajous_perpendicular",
                (sep - 90.0).abs() <= 10.0,
                format!(
                    "major axes {:.1}° and {:.1}°, {sep:.1}° apart",
                    a0.to_degrees(),
                    a1.to_degrees()
                ),
            ));
        }
        let r0 = signatures.iter().find(|s| s.0 == SegmentKind::Bit0).and_then(|s| s.2);
        let r1 = signatures.iter().find(|s| s.0 == SegmentKind::Bit1).and_then(|s| s.2);
        if let (Some(r0), Some(r1)) = (r0, r1) {
            report.notes.push(format!(
                "platform orbit: bit 0 {:?} ({:.3e} m²/s), bit 1 {:?} ({:.3e} m²/s)",
                r0.chirality, r0.signed_area_rate, r1.chirality, r1.signed_area_rate
            ));
        }
    }
    if let Some(tp) = t_perturb {
        let last_bit = report.bits.last().map(|b| b.reading.value);
        let before_bit = report.bits.iter().rfind(|b| b.t <= tp).map(|b| b.reading.value);
        report.checks.push(Check::new(
            "perturbation_keeps_bit",
            last_bit.is_some() && last_bit == before_bit,
            format!("bit before nudge {before_bit:?}, at end {last_bit:?}"),
        ));
        report.checks.push(Check::new(
            "recovery_within_20_cycles",
            report.recovery_cycles.is_some_and(|c| c <= 20.0),
            format!("recovery {:?} cycles", report.recovery_cycles),
        ));
    }
    report.trajectory = Some(tr);
    report.assembly = Some(asm);
    Ok(report)
}

/// Labels the timeline from rolling lock verdicts. Before the latch is set
/// (first lock after `armed_from`) the pair is drifting; afterwards an
/// unlocked or undecodable window is a transient.
pub fn timeline(
    diff: &WrappedSeries,
    t0: f64,
    t_end: f64,
    armed_from: f64,
    tol: LockTolerances,
) -> (Vec<Segment>, Option<LockReport>, Vec<BitEvent>) {
    let mut labels: Vec<(f64, SegmentKind, Option<LockReport>, Option<BitReading>)> = Vec::new();
    let mut psi0: Option<LockReport> = None;
    let mut t = t0;
    while t <= t_end + 1e-9 {
        let rep = lock_at(diff, t, tol);
        let window_start = rep.map(|r| r.t_end - r.window).unwrap_or(f64::NEG_INFINITY);
        let kind_and_bit = match (psi0, rep) {
            (None, Some(r)) if r.locked && window_start >= armed_from - 1e-9 => {
                psi0 = Some(r);
                let b = decode_bit(&r, r.mean_offset, DEFAULT_GUARD).ok();
                (SegmentKind::Bit0, b)
            }
            (None, _) => (SegmentKind::Drift, None),
            (Some(p), Some(r)) if r.locked => {
                let b = decode_bit(&r, p.mean_offset, DEFAULT_GUARD).ok();
                let kind = match b.map(|b| b.value) {
                    Some(BitValue::Zero) => SegmentKind::Bit0,
                    Some(BitValue::One) => SegmentKind::Bit1,
                    _ => SegmentKind::Transient,
                };
                (kind, b)
            }
            (Some(_), _) => (SegmentKind::Transient, None),
        };
        labels.push((t, kind_and_bit.0, rep, kind_and_bit.1));
        t += EVAL_STEP;
    }

    let mut segments: Vec<Segment> = Vec::new();
    let mut bits = Vec::new();
    for (j, (t, kind, rep, bit)) in labels.iter().enumerate() {
        let psi = rep.filter(|r| r.locked).map(|r| r.mean_offset);
        match segments.last_mut() {
            Some(s) if s.kind == *kind => {
                s.end = *t;
                if matches!(kind, SegmentKind::Bit0 | SegmentKind::Bit1) {
                    s.psi = psi.or(s.psi);
                }
            }
            _ => {
                if let Some(prev) = segments.last_mut() {
                    prev.end = *t;
                }
                let start = if j == 0 { t0 } else { *t };
                segments.push(Segment {
                    kind: *kind,
                    start,
                    end: *t,
                    psi: if matches!(kind, SegmentKind::Bit0 | SegmentKind::Bit1) {
                        psi
                    } else {
                        None
                    },
                });
                if let Some(b) = bit {
                    if b.value != BitValue::Undefined {
                        bits.push(BitEvent { t: *t, reading: *b });
                    }
                }
            }
        }
    }
    if let Some(last) = segments.last_mut() {
        last.end = t_end;
    }
    (segments, psi0, bits)
}

/// Mean offset and spread of a wrapped series, for quick summaries.
pub fn summarize(diff: &WrappedSeries) -> (f64, f64) {
    circular_stats(&diff.values)
}

// ---------------------------------------------------------------------------
// Lock-range sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepScenario {
    /// 1 Hz against 2 Hz; detuning offsets the fast metronome.
    Shil,
    /// Full latch up to lock; detuning is the split of the pair.
    Latch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub detunings: Vec<f64>,
    pub masses: Vec<f64>,
    pub scenario: SweepScenario,
    pub seed: u64,
    pub duration: f64,
    pub dt: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            detunings: vec![-0.04, -0.02, 0.0, 0.02, 0.04],
            masses: vec![0.1, 0.2, 0.4, 0.8, 1.6],
            scenario: SweepScenario::Shil,
            seed: 1,
            duration: 90.0,
            dt: DEFAULT_DT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Locked,
    Unlocked,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub detuning: f64,
    pub mass: f64,
    pub verdict: Verdict,
    pub psi: Option<f64>,
    pub drift_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub scenario: SweepScenario,
    pub detunings: Vec<f64>,
    pub masses: Vec<f64>,
    /// Row-major: `cells[m][d]` for `masses[m]`, `detunings[d]`.
    pub cells: Vec<Vec<Cell>>,
}

impl SweepGrid {
    /// Width of the locked band in detuning for row `m`: the locked count
    /// times the mean grid spacing.
    pub fn lock_width(&self, m: usize) -> f64 {
        let n = self.detunings.len();
        let spacing = if n > 1 {
            (self.detunings[n - 1] - self.detunings[0]).abs() / (n - 1) as f64
        } else {
            1.0
        };
        self.cells[m].iter().filter(|c| c.verdict == Verdict::Locked).count() as f64 * spacing
    }

    /// Lock widths ordered from the heaviest platform to the lightest.
    pub fn widths_by_decreasing_mass(&self) -> Vec<(f64, f64)> {
        let mut rows: Vec<(f64, f64)> = (0..self.masses.len())
            .map(|m| (self.masses[m], self.lock_width(m)))
            .collect();
        rows.sort_by(|a, b| b.0.total_cmp(&a.0));
        rows
    }
}

fn sweep_cell(spec: &SweepSpec, detuning: f64, mass: f64) -> Result<(LockReport, Option<f64>)> {
    let tol = LockTolerances::default();
    match spec.scenario {
        SweepScenario::Shil => {
            let r = run_shil_demo(&ShilOptions {
                seed: spec.seed,
                fast_detuning: detuning,
                duration: spec.duration,
                platform_mass: Some(mass),
                dt: spec.dt,
                ..Default::default()
            })?;
            let end = *r.lock("end").ok_or(Error::Degenerate("no lock report".into()))?;
            Ok((end, Some(end.mean_offset)))
        }
        SweepScenario::Latch => {
            let protocol = LatchProtocol {
                t_start_injector: 10.0,
                t_flip: None,
                t_perturb: None,
                t_end: 10.0 + spec.duration,
                detuning_split: detuning,
                seed: spec.seed,
                dt: spec.dt,
                platform_mass: Some(mass),
                ..Default::default()
            };
            let asm = protocol.assembly()?;
            let mut ms = asm.metronomes().to_vec();
            ms[2].running = false;
            let asm = asm.with_metronomes(ms)?;
            let mut run = Runner::new(
                asm.clone(),
                seeded_start(&asm, spec.seed),
                protocol.t_end,
                spec.dt,
                DEFAULT_SAMPLE_RATE,
            )?;
            run.run_until(protocol.t_start_injector)?;
            let blue = &asm.metronomes()[2];
            let kick = blue.limit_cycle_amplitude() * TAU * blue.frequency(asm.gravity());
            let id = blue.id.clone();
            run.apply(EventKind::Release, &id)?;
            run.apply(EventKind::Start, &id)?;
            run.apply(EventKind::Impulse { d_theta_dot: kick }, &id)?;
            let (tr, _) = run.finish()?;
            let diff = pair_difference(&tr, 0, 1, HarmonicRatio::ONE_TO_ONE)?;
            let end = lock_at(&diff, protocol.t_end, tol).ok_or(Error::InsufficientData {
                needed: MIN_WINDOW,
                available: diff.duration(),
            })?;
            Ok((end, Some(end.mean_offset)))
        }
    }
}

/// One independent, deterministic simulation per grid cell, run in parallel.
/// A diverging cell is recorded as failed and the sweep carries on.
pub fn sweep_arnold_tongue(spec: &SweepSpec) -> Result<SweepGrid> {
    if spec.detunings.is_empty() || spec.masses.is_empty() {
        return Err(Error::InvalidRequest("sweep grid must be non-empty".into()));
    }
    if let Some(m) = spec.masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
        return Err(Error::param("masses", format!("must be > 0, got {m}")));
    }
    let jobs: Vec<(usize, usize)> = (0..spec.masses.len())
        .flat_map(|m| (0..spec.detunings.len()).map(move |d| (m, d)))
        .collect();
    let results: Vec<Cell> = jobs
        .par_iter()
        .map(|&(m, d)| {
            let (detuning, mass) = (spec.detunings[d], spec.masses[m]);
            match sweep_cell(spec, detuning, mass) {
                Ok((r, psi)) => Cell {
                    detuning,
                    mass,
                    verdict: if r.locked { Verdict::Locked } else { Verdict::Unlocked },
                    psi: if r.locked { psi } else { None },
                    drift_rate: Some(r.drift_rate),
                    error: None,
                },
                Err(e) => Cell {
                    detuning,
                    mass,
                    verdict: Verdict::Failed,
                    psi: None,
                    drift_rate: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut cells = vec![Vec::with_capacity(spec.detunings.len()); spec.masses.len()];
    for ((m, _), c) in jobs.into_iter().zip(results) {
        cells[m].push(c);
    }
    Ok(SweepGrid {
        scenario: spec.scenario,
        detunings: spec.detunings.clone(),
        masses: spec.masses.clone(),
        cells,
    })
}
