use clap::{Args, Parser, Subcommand, ValueEnum};
use metrolatch::config::{self, build_assembly_with_dt, load_config, AssemblyConfig};
use metrolatch::experiments::{
    run_latch_experiment, run_latch_on, run_shil_demo, run_sync_demo, seeded_start, sweep_arnold_tongue,
    ExperimentReport, LatchProtocol, ShilOptions, SweepScenario, SweepSpec, SyncOptions,
};
use metrolatch::io::{write_json, write_trajectory_csv, PlotSpec};
use metrolatch::model::{Assembly, Mobility};
use metrolatch::serve::{serve, Session, DEFAULT_STREAM_RATE};
use metrolatch::sim::{integrate, EventSchedule, DEFAULT_DT, DEFAULT_SAMPLE_RATE};
use metrolatch::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "metrolatch", version, about = "Metronomes on a rolling platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Assembly config (JSON). Defaults to the three-metronome latch preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE)]
    sample_rate: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Sync,
    SyncFixed,
    Shil,
    ShilFixed,
    Latch,
    LatchMirror,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Shil,
    Latch,
}

#[derive(Subcommand)]
enum Command {
    /// Free run from seeded random phases; writes trajectory CSV and plot spec.
    Simulate(Common),
    /// Run a named scenario and write its report.
    Experiment {
        #[arg(value_enum)]
        name: Experiment,
        #[command(flatten)]
        common: Common,
    },
    /// Lock region over detuning and platform mass.
    Sweep {
        #[arg(long, value_enum, default_value = "shil")]
        scenario: Scenario,
        #[command(flatten)]
        common: Common,
    },
    /// Tune rod lengths to the configured frequencies and print them.
    Calibrate(Common),
    /// Live session over WebSocket.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        common: Common,
    },
}

fn config_of(c: &Common) -> Result<AssemblyConfig> {
    match &c.config {
        Some(p) => load_config(p),
        None => Ok(config::paper_latch(config::DEFAULT_DETUNING_SPLIT)),
    }
}

fn seed_of(c: &Common, cfg: Option<&AssemblyConfig>) -> u64 {
    c.seed.or(cfg.and_then(|c| c.seed)).unwrap_or(1)
}

fn assembly_of(c: &Common) -> Result<(Assembly, u64)> {
    let cfg = config_of(c)?;
    let seed = seed_of(c, Some(&cfg));
    Ok((build_assembly_with_dt(&cfg, c.dt)?, seed))
}

fn finish_report(mut report: ExperimentReport, dir: &Path, stem: &str) -> Result<bool> {
    let paths = metrolatch::io::write_artifacts(&mut report, dir, stem)?;
    for s in &report.segments {
        let psi = s.psi.map(|p| format!(" psi {p:+.3}")).unwrap_or_default();
        println!("  {:>7.1} - {:>7.1}  {:?}{psi}", s.start, s.end, s.kind);
    }
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(report.passed())
}

fn simulate(c: &Common) -> Result<()> {
    let (asm, seed) = assembly_of(c)?;
    let duration = c.duration.unwrap_or(60.0);
    let tr = integrate(
        &asm,
        &seeded_start(&asm, seed),
        &EventSchedule::empty(),
        0.0,
        duration,
        c.dt,
        c.sample_rate,
    )?;
    std::fs::create_dir_all(&c.out_dir)?;
    let csv = c.out_dir.join("trajectory.csv");
    write_trajectory_csv(&tr, &csv)?;
    let plot = c.out_dir.join("trajectory.plot.json");
    write_json(&PlotSpec::for_trajectory("trajectory.csv", &tr.ids), &plot)?;
    println!("{} samples, wrote {} and {}", tr.len(), csv.display(), plot.display());
    Ok(())
}

fn experiment(name: Experiment, c: &Common) -> Result<bool> {
    let seed = c.seed.unwrap_or(1);
    if c.config.is_some() && !matches!(name, Experiment::Latch | Experiment::LatchMirror) {
        return Err(Error::InvalidRequest(
            "--config only applies to the latch experiments; the others use their built-in presets".into(),
        ));
    }
    let (report, stem) = match name {
        Experiment::Sync | Experiment::SyncFixed => {
            let mut o = SyncOptions {
                seed,
                dt: c.dt,
                sample_rate: c.sample_rate,
                ..Default::default()
            };
            if let Some(d) = c.duration {
                o.duration = d;
            }
            if matches!(name, Experiment::SyncFixed) {
                o.mobility = Some(Mobility::Fixed);
            }
            (run_sync_demo(&o)?, "sync")
        }
        Experiment::Shil | Experiment::ShilFixed => {
            let mut o = ShilOptions {
                seed,
                dt: c.dt,
                sample_rate: c.sample_rate,
                ..Default::default()
            };
            if let Some(d) = c.duration {
                o.duration = d;
            }
            if matches!(name, Experiment::ShilFixed) {
                o.mobility = Some(Mobility::Fixed);
            }
            (run_shil_demo(&o)?, "shil")
        }
        Experiment::Latch | Experiment::LatchMirror => {
            let mut p = LatchProtocol {
                seed,
                dt: c.dt,
                sample_rate: c.sample_rate,
                ..Default::default()
            };
            if let Some(d) = c.duration {
                p.t_end = d;
            }
            if matches!(name, Experiment::LatchMirror) {
                p.flip_method = metrolatch::experiments::FlipMethod::Mirror;
            }
            let report = match &c.config {
                Some(path) => {
                    let cfg = load_config(path)?;
                    p.seed = seed_of(c, Some(&cfg));
                    run_latch_on(&build_assembly_with_dt(&cfg, c.dt)?, &p)?
                }
                None => run_latch_experiment(&p)?,
            };
            (report, "latch")
        }
    };
    let stem = if report.scenario.is_empty() {
        stem.to_string()
    } else {
        report.scenario.clone()
    };
    finish_report(report, &c.out_dir, &stem)
}

fn sweep(scenario: Scenario, c: &Common) -> Result<()> {
    let mut spec = SweepSpec {
        scenario: match scenario {
            Scenario::Shil => SweepScenario::Shil,
            Scenario::Latch => SweepScenario::Latch,
        },
        seed: c.seed.unwrap_or(1),
        dt: c.dt,
        ..Default::default()
    };
    if let Some(d) = c.duration {
        spec.duration = d;
    }
    let grid = sweep_arnold_tongue(&spec)?;
    for (mass, width) in grid.widths_by_decreasing_mass() {
        println!("M = {mass:<6} lock width {width:.3} Hz");
    }
    std::fs::create_dir_all(&c.out_dir)?;
    let path = c.out_dir.join("sweep.json");
    write_json(&grid, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn calibrate(c: &Common) -> Result<()> {
    let (asm, _) = assembly_of(c)?;
    for m in asm.metronomes() {
        println!(
            "{:<8} L = {:.6} m  f = {:.6} Hz",
            m.id,
            m.length,
            m.calibrated_frequency.unwrap_or(f64::NAN)
        );
    }
    std::fs::create_dir_all(&c.out_dir)?;
    let path = c.out_dir.join("assembly.json");
    write_json(&asm, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_serve(host: &str, port: u16, c: &Common) -> Result<()> {
    let (asm, seed) = assembly_of(c)?;
    let init = seeded_start(&asm, seed);
    let rate = if c.sample_rate > 0.0 {
        c.sample_rate
    } else {
        DEFAULT_STREAM_RATE
    };
    let session = Session::new(asm, init, c.dt, rate)?;
    let addr = format!("{host}:{port}")
        .parse()
        .map_err(|e| Error::InvalidRequest(format!("bad address {host}:{port}: {e}")))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let (tx, rx) = tokio::sync::oneshot::channel();
        let server = tokio::spawn(serve(session, addr, Some(tx)));
        if let Ok(a) = rx.await {
            eprintln!("serving on ws://{a}");
        }
        server.await.map_err(|e| Error::InvalidRequest(e.to_string()))?
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(c) => simulate(c).map(|_| true),
        Command::Experiment { name, common } => experiment(*name, common),
        Command::Sweep { scenario, common } => sweep(*scenario, common).map(|_| true),
        Command::Calibrate(c) => calibrate(c).map(|_| true),
        Command::Serve { port, host, common } => run_serve(host, *port, common).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
