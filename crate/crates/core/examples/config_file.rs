//! Parsing an assembly config: preset expansion, overrides and errors.

use metrolatch::config::{build_assembly, parse_config};

fn main() -> metrolatch::Result<()> {
    let cfg = parse_config(r#"{"preset": "classic_sync", "seed": 3, "platform": {"mass": 0.8}}"#)?;
    let resolved = cfg.resolve()?;
    println!("{}", serde_json::to_string_pretty(&resolved)?);
    let asm = build_assembly(&cfg)?;
    for m in asm.metronomes() {
        println!("{}: L = {:.5} m", m.id, m.length);
    }
    for bad in [
        r#"{"metronomes": []}"#,
        r#"{"metronomes": [{"id": "a", "target_frequency_hz": 1.0, "length_m": 0.25}]}"#,
        r#"{"preset": "paper_latch", "platfrom": {}}"#,
    ] {
        let err = parse_config(bad).and_then(|c| c.resolve()).unwrap_err();
        println!("rejected: {err}");
    }
    Ok(())
}
