//! Lock region of the 2:1 pair over fast-metronome detuning and platform mass.
//!
//! `cargo run --release --example arnold_tongue [latch]`

use metrolatch::experiments::{sweep_arnold_tongue, SweepScenario, SweepSpec, Verdict};

fn main() -> metrolatch::Result<()> {
    let scenario = match std::env::args().nth(1).as_deref() {
        Some("latch") => SweepScenario::Latch,
        _ => SweepScenario::Shil,
    };
    let grid = sweep_arnold_tongue(&SweepSpec {
        scenario,
        ..Default::default()
    })?;
    print!("{:>8}", "M \\ df");
    for d in &grid.detunings {
        print!("{d:>8.3}");
    }
    println!("   width");
    for (m, row) in grid.cells.iter().enumerate() {
        print!("{:>8.2}", grid.masses[m]);
        for c in row {
            let mark = match c.verdict {
                Verdict::Locked => "#",
                Verdict::Unlocked => ".",
                Verdict::Failed => "x",
            };
            print!("{mark:>8}");
        }
        println!("{:>8.3}", grid.lock_width(m));
    }
    Ok(())
}
