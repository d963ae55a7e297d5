//! The full three-metronome latch: drift, injector start, a half-cycle hold
//! that flips the bit, a small delay that should not. Writes CSV, plot spec
//! and report into `out/latch/`.
//!
//! `cargo run --release --example latch [seed]`

use metrolatch::experiments::{run_latch_experiment, LatchProtocol};
use metrolatch::io::write_artifacts;
use std::path::Path;

fn main() -> metrolatch::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let mut r = run_latch_experiment(&LatchProtocol {
        seed,
        ..Default::default()
    })?;
    for s in &r.segments {
        let psi = s.psi.map(|p| format!("  psi {p:+.2}")).unwrap_or_default();
        println!("{:>6.1} - {:>6.1}  {:?}{psi}", s.start, s.end, s.kind);
    }
    for c in &r.checks {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    for p in write_artifacts(&mut r, Path::new("out/latch"), "latch")? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
