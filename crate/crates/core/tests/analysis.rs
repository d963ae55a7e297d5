use metrolatch::config::{build_assembly, classic_sync};
use metrolatch::experiments::{pair_difference, seeded_start};
use metrolatch::model::Mobility;
use metrolatch::phase::{
    decode_offset, detect_lock, lissajous, phase_difference, rotation_sense, wrap, zero_cross_phase, BitValue,
    Chirality, HarmonicRatio, LockTolerances, WrappedSeries, DEFAULT_GUARD,
};
use metrolatch::sim::{integrate, EventSchedule};
use proptest::prelude::*;
use std::f64::consts::{PI, TAU};

fn swing(f: f64, phase: f64, amp: f64, secs: f64) -> Vec<f64> {
    (0..(secs * 60.0) as usize)
        .map(|k| amp * (TAU * f * k as f64 / 60.0 + phase).sin())
        .collect()
}

proptest! {
    #[test]
    fn wrap_lands_in_half_open_interval(x in -1e4f64..1e4) {
        let w = wrap(x);
        prop_assert!(w > -PI && w <= PI);
        prop_assert!(((x - w) / TAU - ((x - w) / TAU).round()).abs() < 1e-9);
    }

    #[test]
    fn phase_ignores_amplitude(f in 0.5f64..3.0, p in 0.0f64..TAU, alpha in 0.05f64..50.0, k in -4i32..6) {
        let x = swing(f, p, 1.0, 12.0);
        let a = zero_cross_phase(&x, 0.0, 60.0, "x").unwrap();
        // Powers of two scale without rounding, so the phase is bit-identical.
        let y: Vec<f64> = x.iter().map(|v| 2f64.powi(k) * v).collect();
        let b = zero_cross_phase(&y, 0.0, 60.0, "y").unwrap();
        prop_assert!(a.phase == b.phase && a.crossings == b.crossings);
        let z: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        let c = zero_cross_phase(&z, 0.0, 60.0, "z").unwrap();
        let worst = a.phase.iter().zip(&c.phase).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        prop_assert!(a.phase.len() == c.phase.len() && worst < 1e-12, "worst {}", worst);
    }

    #[test]
    fn difference_is_antisymmetric(fa in 0.8f64..1.2, fb in 0.8f64..1.2, p in 0.0f64..TAU) {
        let a = zero_cross_phase(&swing(fa, 0.0, 1.0, 15.0), 0.0, 60.0, "a").unwrap();
        let b = zero_cross_phase(&swing(fb, p, 1.0, 15.0), 0.0, 60.0, "b").unwrap();
        let ab = phase_difference(&a, &b, HarmonicRatio::ONE_TO_ONE).unwrap();
        let ba = phase_difference(&b, &a, HarmonicRatio::ONE_TO_ONE).unwrap();
        for (x, y) in ab.values.iter().zip(&ba.values) {
            prop_assert!(wrap(x + y).abs() < 1e-9);
        }
    }

    #[test]
    fn bit_survives_a_global_phase_shift(psi in -PI..PI, psi0 in -PI..PI, shift in -PI..PI) {
        let a = decode_offset(psi, psi0, DEFAULT_GUARD);
        let b = decode_offset(wrap(psi + shift), wrap(psi0 + shift), DEFAULT_GUARD);
        prop_assert_eq!(a.value, b.value);
    }

    #[test]
    fn constant_difference_is_locked(c in -PI..PI) {
        let times: Vec<f64> = (0..1500).map(|j| j as f64 / 60.0).collect();
        let diff = WrappedSeries { values: vec![wrap(c); times.len()], times, ratio: HarmonicRatio::ONE_TO_ONE };
        let r = detect_lock(&diff, LockTolerances::default()).unwrap();
        prop_assert!(r.locked);
        prop_assert_eq!(r.drift_rate, 0.0);
        prop_assert!(wrap(r.mean_offset - c).abs() < 1e-12);
    }

    #[test]
    fn chirality_flips_under_reversal_and_reflection(r in 0.001f64..0.1, w in 1.0f64..10.0) {
        let orbit: Vec<[f64; 2]> = (0..600).map(|k| {
            let t = k as f64 / 60.0;
            [r * (w * t).cos(), r * (w * t).sin()]
        }).collect();
        let forward = rotation_sense(&orbit, 60.0, 1e-12).unwrap().chirality;
        let reversed: Vec<_> = orbit.iter().rev().copied().collect();
        let reflected: Vec<_> = orbit.iter().map(|p| [p[0], -p[1]]).collect();
        prop_assert_eq!(forward, Chirality::Ccw);
        prop_assert_eq!(rotation_sense(&reversed, 60.0, 1e-12).unwrap().chirality, Chirality::Cw);
        prop_assert_eq!(rotation_sense(&reflected, 60.0, 1e-12).unwrap().chirality, Chirality::Cw);
    }

    #[test]
    fn lissajous_aspect_is_a_ratio(fa in 0.5f64..2.0, fb in 0.5f64..2.0, p in 0.0f64..TAU) {
        let l = lissajous(&swing(fa, 0.0, 1.0, 10.0), &swing(fb, p, 0.7, 10.0)).unwrap();
        prop_assert!((0.0..=1.0).contains(&l.aspect));
        prop_assert!(l.major_axis_angle > -PI / 2.0 - 1e-12 && l.major_axis_angle <= PI / 2.0 + 1e-12);
    }
}

#[test]
fn decode_boundaries() {
    let r = decode_offset(0.05, 0.0, DEFAULT_GUARD);
    assert_eq!(r.value, BitValue::Zero);
    assert!((r.confidence - (PI / 2.0 - DEFAULT_GUARD - 0.05)).abs() < 1e-12);
    assert_eq!(decode_offset(PI - 0.05, 0.0, DEFAULT_GUARD).value, BitValue::One);
    assert_eq!(decode_offset(PI / 2.0, 0.0, DEFAULT_GUARD).value, BitValue::Undefined);
}

#[test]
fn two_hz_phase_runs_twice_as_fast() {
    let p = zero_cross_phase(&swing(2.0, 0.0, 1.0, 10.0), 0.0, 60.0, "x").unwrap();
    let n = p.phase.len() - 1;
    let slope = (p.phase[n] - p.phase[0]) / (p.times[n] - p.times[0]);
    assert!((slope - 4.0 * PI).abs() < 1e-3 * 4.0 * PI);
}

#[test]
fn simulated_metronome_phase_matches_its_calibration() {
    let asm = build_assembly(&classic_sync(0.01)).unwrap();
    let fixed = asm
        .with_platform(metrolatch::model::PlatformParams {
            mobility: Mobility::Fixed,
            ..*asm.platform()
        })
        .unwrap();
    let tr_fixed = integrate(
        &fixed,
        &seeded_start(&fixed, 1),
        &EventSchedule::empty(),
        0.0,
        60.0,
        1e-3,
        60.0,
    )
    .unwrap();
    for i in 0..2 {
        let p = zero_cross_phase(&tr_fixed.theta(i), 0.0, 60.0, "m").unwrap();
        let f = asm.metronomes()[i].calibrated_frequency.unwrap();
        assert!(
            (p.mean_frequency() - f).abs() / f < 1e-3,
            "{} vs {f}",
            p.mean_frequency()
        );
    }
    // Uncoupled pair: the difference drifts at 2πΔf.
    let diff = pair_difference(&tr_fixed, 0, 1, HarmonicRatio::ONE_TO_ONE).unwrap();
    let u = diff.unwrapped();
    let n = u.len() - 1;
    let slope = (u[n] - u[0]) / (diff.times[n] - diff.times[0]);
    assert!((slope.abs() - TAU * 0.01).abs() < 0.05 * TAU * 0.01, "slope {slope}");
    let last20 = diff.slice(35.0, 60.0);
    let l = lissajous(&tr_fixed.theta(0)[2400..], &tr_fixed.theta(1)[2400..]).unwrap();
    assert!(!detect_lock(&last20, LockTolerances::default()).unwrap().locked);
    assert!(l.aspect > 0.5, "aspect {}", l.aspect);
}
