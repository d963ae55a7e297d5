//! With escapement, damping and rolling resistance off, energy and momentum
//! are conserved up to integration error.

use metrolatch::model::{
    horizontal_momentum, mechanical_energy, Assembly, MetronomeParams, Mobility, PlatformParams, StateVector,
};
use metrolatch::sim::rk4_step;

fn main() -> metrolatch::Result<()> {
    let ms: Vec<MetronomeParams> = [("a", 0.25, 0.0), ("b", 0.2, 1.2)]
        .iter()
        .map(|&(id, l, alpha)| {
            let mut m = MetronomeParams::new(id, l);
            m.damping = 0.0;
            m.escapement = 0.0;
            m.orientation = alpha;
            m
        })
        .collect();
    let platform = PlatformParams {
        mass: 0.3,
        damping: 0.0,
        mobility: Mobility::Free2d,
    };
    let asm = Assembly::new(ms, platform, 9.81)?;
    let mut s = StateVector::at_rest(&asm);
    s.theta = vec![0.5, -0.3];
    // Checked at step boundaries; output samples are interpolated between them.
    let e0 = mechanical_energy(&asm, &s);
    let (mut de, mut dp): (f64, f64) = (0.0, 0.0);
    for k in 0..100_000u64 {
        s = rk4_step(&asm, &s, k as f64 * 1e-3, 1e-3)?;
        de = de.max(((mechanical_energy(&asm, &s) - e0) / e0).abs());
        let p = horizontal_momentum(&asm, &s);
        dp = dp.max(p[0].abs().max(p[1].abs()));
    }
    println!("100 s: max relative energy error {de:.2e}, max |momentum| {dp:.2e}");
    Ok(())
}
