//! `mspgd`: run wavefront-sensorless AO experiments from a scenario file or
//! a bundled preset.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for numerical or
//! infeasibility failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mspgd_core::config::{ScenarioConfig, PRESETS};
use mspgd_core::experiment::{self, prepare_output};
use mspgd_core::io::{atomic_write, fmt_f64};
use mspgd_core::Error;

#[derive(Parser)]
#[command(name = "mspgd", version, about = "Wavefront-sensorless AO: M-SPGD single-mode fiber coupling through turbulence")]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled scenario: d_r0_5p4, d_r0_9p5, race_static or race_identity.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Base seed, overriding [run] seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding [run] output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for seed ensembles and grids.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Simulated seconds per run, overriding [run] duration (and [race] duration).
    #[arg(long, global = true)]
    duration: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Paired open- and closed-loop runs on matched seeds.
    Simulate,
    /// SPGD against M-SPGD on static aberrations.
    Race,
    /// Fried parameter from an angle-of-arrival record or a synthesized scenario.
    EstimateR0 {
        /// CSV of x and y tilt angles in radians (810 nm beacon).
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// Grid search over perturbation amplitude and gain.
    Autotune,
    /// List the bundled presets, or print one.
    Presets { name: Option<String> },
}

fn load(cli: &Cli, required: bool) -> Result<ScenarioConfig, Error> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => ScenarioConfig::from_file(path)?,
        (None, Some(name)) => ScenarioConfig::preset(name)?,
        (None, None) if required => {
            return Err(Error::config("no scenario given: pass --config FILE or --preset NAME"))
        }
        (None, None) => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(d) = cli.duration {
        cfg.run.duration = d;
        cfg.race.duration = d;
    }
    if let Some(out) = &cli.out {
        cfg.run.output = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn comparison_row(label: &str, simulated: f64, reference: Option<f64>) -> String {
    match reference {
        Some(p) => format!("  {label:<26}{simulated:>10.2}{p:>10.1}\n"),
        None => format!("  {label:<26}{simulated:>10.2}\n"),
    }
}

fn simulate(cli: &Cli) -> Result<(), Error> {
    let cfg = load(cli, true)?;
    let out = PathBuf::from(&cfg.run.output);
    prepare_output(&out)?;
    let sim = experiment::simulate(&cfg)?;
    sim.write(&out)?;
    let s = &sim.summary;
    let r = s.reference;
    let mut text = format!(
        "{} (D/r0 = {:.2}), {} seeds x {} s, G = {}, amplitude = {}\n  {:<26}{:>10}{:>10}\n",
        s.scenario,
        s.d_over_r0,
        s.seeds.len(),
        s.duration,
        sim.gain,
        sim.amplitude,
        "",
        "simulated",
        if r.is_some() { "reference" } else { "" }
    );
    text.push_str(&comparison_row("mean eta open", s.mean_eta_open, None));
    text.push_str(&comparison_row("mean eta closed", s.mean_eta_closed, None));
    text.push_str(&comparison_row("improvement (dB, median)", sim.median_improvement_db, r.map(|r| r.improvement_db)));
    text.push_str(&comparison_row("improvement (dB, pooled)", s.improvement_db, None));
    text.push_str(&comparison_row("RSD open (%)", s.rsd_open, r.map(|r| r.rsd_open)));
    text.push_str(&comparison_row("RSD closed (%)", s.rsd_closed, r.map(|r| r.rsd_closed)));
    text.push_str(&comparison_row(
        "RSD reduction (pp, median)",
        sim.median_rsd_reduction,
        r.map(|r| r.rsd_open - r.rsd_closed),
    ));
    text.push_str(&format!(
        "  closed RSD below open in every seed: {}\nartifacts in {}\n",
        sim.closed_rsd_below_open_in_every_seed(),
        out.display()
    ));
    print!("{text}");
    Ok(())
}

fn race(cli: &Cli) -> Result<(), Error> {
    let cfg = load(cli, true)?;
    let out = PathBuf::from(&cfg.run.output);
    prepare_output(&out)?;
    let report = experiment::race(&cfg)?;
    report.write(&out)?;
    print!("{}", report.report());
    println!("artifacts in {}", out.display());
    Ok(())
}

fn estimate_r0(cli: &Cli, series: Option<&Path>) -> Result<(), Error> {
    let cfg = load(cli, series.is_none())?;
    let report = match series {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config(format!("cannot read '{}': {e}", path.display())))?;
            let angles = experiment::read_angle_series(&text)?;
            experiment::estimate_r0_from_series(&angles, cfg.geometry.aperture, cfg.geometry.signal_wavelength)?
        }
        None => experiment::estimate_r0_from_scenario(&cfg)?,
    };
    print!("{}", report.report());
    if cli.out.is_some() || series.is_none() {
        let out = PathBuf::from(&cfg.run.output);
        prepare_output(&out)?;
        atomic_write(&out.join("r0_estimate.txt"), report.report().as_bytes())?;
        atomic_write(&out.join("r0_records.csv"), report.to_csv().as_bytes())?;
    }
    Ok(())
}

fn autotune(cli: &Cli) -> Result<(), Error> {
    let cfg = load(cli, true)?;
    let out = PathBuf::from(&cfg.run.output);
    prepare_output(&out)?;
    let report = experiment::autotune_scenario(&cfg)?;
    atomic_write(&out.join("autotune.csv"), report.to_csv().as_bytes())?;
    println!("open_loop_mean = {}", fmt_f64(report.open_loop_mean));
    for c in &report.cells {
        println!(
            "  amplitude {:>8}  gain {:>8}  mean eta {:.4}",
            fmt_f64(c.amplitude),
            fmt_f64(c.gain),
            c.mean_eta
        );
    }
    let best = report.best()?;
    println!("amplitude = {}\ngain = {}\nmean_eta = {}", fmt_f64(best.amplitude), fmt_f64(best.gain), fmt_f64(best.mean_eta));
    if report.on_boundary() {
        println!("note = winner on the grid boundary; consider extending the grid");
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

fn presets(name: Option<&str>) -> Result<(), Error> {
    match name {
        None => PRESETS.iter().for_each(|p| println!("{p}")),
        Some(n) => print!(
            "{}",
            ScenarioConfig::preset_source(n).ok_or_else(|| Error::config(format!("unknown preset '{n}'")))?
        ),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start {jobs} worker threads: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match &cli.command {
        Command::Simulate => simulate(&cli),
        Command::Race => race(&cli),
        Command::EstimateR0 { series } => estimate_r0(&cli, series.as_deref()),
        Command::Autotune => autotune(&cli),
        Command::Presets { name } => presets(name.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() || matches!(e, Error::Domain(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
