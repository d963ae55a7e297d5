//! Two nearly equal metronomes: in-phase lock on a rolling platform, steady
//! drift on a fixed one.

use metrolatch::experiments::{run_sync_demo, SyncOptions};
use metrolatch::model::Mobility;

fn main() -> metrolatch::Result<()> {
    for (label, mobility) in [("rolling", None), ("fixed", Some(Mobility::Fixed))] {
        let r = run_sync_demo(&SyncOptions {
            seed: 1,
            mobility,
            ..Default::default()
        })?;
        println!("{label}:");
        for c in &r.checks {
            println!("  {} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
        }
    }
    Ok(())
}
