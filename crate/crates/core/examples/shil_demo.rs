//! A 1 Hz metronome next to one just under 2 Hz. On a rolling platform the
//! fast one locks at twice the slow rate and the aligned Lissajous figure
//! collapses to a line; anchored, it drifts and the figure fills.

use metrolatch::experiments::{run_shil_demo, ShilOptions};
use metrolatch::model::Mobility;

fn main() -> metrolatch::Result<()> {
    for (label, mobility) in [("rolling", None), ("fixed", Some(Mobility::Fixed))] {
        let r = run_shil_demo(&ShilOptions {
            seed: 1,
            mobility,
            ..Default::default()
        })?;
        let l = &r.lissajous[0].value;
        println!(
            "{label}: aspect {:.3}, axis {:.1}°",
            l.aspect,
            l.major_axis_angle.to_degrees()
        );
        for c in &r.checks {
            println!("  {} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
        }
    }
    Ok(())
}
