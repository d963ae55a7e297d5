//! The analysis toolkit on synthetic swings: phase extraction, lock
//! detection, bit decoding and Lissajous metrics.

use metrolatch::phase::{
    decode_bit, detect_lock, lissajous, phase_difference, zero_cross_phase, HarmonicRatio, LockTolerances,
};
use std::f64::consts::{PI, TAU};

fn swing(f: f64, phase: f64, rate: f64, secs: f64) -> Vec<f64> {
    (0..(secs * rate) as usize)
        .map(|k| (TAU * f * k as f64 / rate + phase).sin())
        .collect()
}

fn main() -> metrolatch::Result<()> {
    let rate = 60.0;
    let a = swing(1.0, 0.0, rate, 40.0);
    for (label, b) in [
        ("in phase", swing(1.0, 0.0, rate, 40.0)),
        ("anti-phase", swing(1.0, PI, rate, 40.0)),
        ("detuned", swing(1.05, 0.0, rate, 40.0)),
    ] {
        let pa = zero_cross_phase(&a, 0.0, rate, "a")?;
        let pb = zero_cross_phase(&b, 0.0, rate, "b")?;
        let diff = phase_difference(&pa, &pb, HarmonicRatio::ONE_TO_ONE)?;
        let lock = detect_lock(&diff, LockTolerances::default())?;
        let bit = decode_bit(&lock, 0.0, 0.3).map(|b| b.value).ok();
        let l = lissajous(&a, &b)?;
        println!(
            "{label:<10} locked {:<5} psi {:+.3} bit {:?}  lissajous aspect {:.3} axis {:+.1}°",
            lock.locked,
            lock.mean_offset,
            bit,
            l.aspect,
            l.major_axis_angle.to_degrees()
        );
    }
    Ok(())
}
