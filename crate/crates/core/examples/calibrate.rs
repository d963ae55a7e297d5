//! Rod lengths for a 1 Hz and a 2 Hz metronome, against the small-angle guess.

use metrolatch::calibrate::calibrate_frequency;
use metrolatch::model::MetronomeParams;
use std::f64::consts::PI;

fn main() -> metrolatch::Result<()> {
    let g = 9.81;
    for target in [1.0, 2.0] {
        let m = calibrate_frequency(&MetronomeParams::new("m", 0.2), g, target, 1e-5)?;
        let small = g / (2.0 * PI * target).powi(2);
        println!(
            "{target} Hz: L = {:.6} m (small-angle {:.6} m), measured {:.7} Hz",
            m.length,
            small,
            m.calibrated_frequency.unwrap()
        );
    }
    Ok(())
}
