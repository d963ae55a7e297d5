//! A scripted live session, replayed through the batch integrator.
//!
//! To serve over WebSocket instead, run `metrolatch serve --port 8765`.

use metrolatch::config::{build_assembly, classic_sync};
use metrolatch::experiments::seeded_start;
use metrolatch::serve::{Action, CommandMessage, Session};
use metrolatch::sim::{integrate, EventSchedule};

fn main() -> metrolatch::Result<()> {
    let asm = build_assembly(&classic_sync(0.01))?;
    let init = seeded_start(&asm, 7);
    let mut session = Session::new(asm.clone(), init.clone(), 1e-3, 60.0)?;
    let mut frames = Vec::new();
    for n in 0..1200 {
        if n == 300 {
            let t = session.command(&CommandMessage {
                seq: Some(1),
                target: Some("a".into()),
                action: Action::Hold { duration: Some(0.5) },
            })?;
            println!("hold applied at t = {t:.3}");
        }
        frames.push(session.step_frame()?);
    }
    let t1 = frames.last().unwrap().t;
    let batch = integrate(
        &asm,
        &init,
        &EventSchedule::new(session.events().to_vec())?,
        0.0,
        t1,
        1e-3,
        60.0,
    )?;
    let worst = frames
        .iter()
        .zip(&batch.samples)
        .flat_map(|(f, s)| {
            f.metronomes
                .iter()
                .enumerate()
                .map(move |(i, m)| (m.theta - s.state.theta[i]).abs())
        })
        .fold(0.0, f64::max);
    println!(
        "{} frames, max |theta| difference against batch {worst:.1e}",
        frames.len()
    );
    let last = frames.last().unwrap();
    println!("live lock at t = {:.1}: {:?}", last.t, last.lock.map(|l| l.locked));
    Ok(())
}
