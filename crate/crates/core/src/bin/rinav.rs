//! Command-line front end: run the filter on a log, simulate a flight, or
//! score a trajectory against ground truth.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rinav::config::{Config, Mode};
use rinav::dataset::{self, read_dataset, read_points, read_trajectory, write_dataset, write_points, write_trajectory};
use rinav::eval::{ape_rmse, loop_closure_error, Alignment};
use rinav::localizer::PriorMap;
use rinav::pipeline::run;
use rinav::sim::{path_length, simulate, Scenario};
use rinav::Result;

#[derive(Parser)]
#[command(name = "rinav", version, about = "4D radar-inertial navigation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a trajectory from an IMU + radar log.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// World-frame `x y z` point list used for global localization.
        #[arg(long)]
        prior_map: Option<PathBuf>,
        /// Overrides the mode set in the config file.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: PathBuf,
        /// Per-scan event log.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Print per-stage timing statistics to stderr.
        #[arg(long)]
        timing: bool,
    },
    /// Generate a synthetic log from a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Writes the world point set, usable as a prior map.
        #[arg(long)]
        world_out: Option<PathBuf>,
        /// Writes the ground-truth trajectory.
        #[arg(long)]
        gt_out: Option<PathBuf>,
        /// Writes a run config matching the scenario's sensors.
        #[arg(long)]
        config_out: Option<PathBuf>,
    },
    /// Score an estimated trajectory.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "first")]
        align: Alignment,
    },
}

fn write_to(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut w = dataset::create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_run(
    dataset: &Path,
    config: &Path,
    prior_map: Option<&Path>,
    mode: Option<Mode>,
    out: &Path,
    events: Option<&Path>,
    timing: bool,
) -> Result<()> {
    let mut cfg = Config::load(config)?;
    if let Some(m) = mode {
        cfg.mode = m;
        cfg.finish()?;
    }
    let ds = read_dataset(dataset)?;
    let prior = prior_map.map(read_points).transpose()?.map(|p| PriorMap::new(&p));
    let result = run(&ds, &cfg, prior.as_ref())?;
    write_to(out, |w| write_trajectory(w, &result.trajectory))?;
    if let Some(path) = events {
        write_to(path, |w| Ok(w.write_all(result.event_log(cfg.mode).as_bytes())?))?;
    }
    if timing {
        eprintln!("{}", result.timing);
    }
    println!("mode {} poses {} scans {}", cfg.mode, result.trajectory.len(), ds.scans.len());
    Ok(())
}

fn cmd_simulate(scenario: &Path, out: &Path, world_out: Option<&Path>, gt_out: Option<&Path>, config_out: Option<&Path>) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let sim = simulate(&s)?;
    write_to(out, |w| write_dataset(w, &sim.dataset))?;
    if let Some(path) = world_out {
        write_to(path, |w| write_points(w, &sim.world))?;
    }
    if let Some(path) = gt_out {
        write_to(path, |w| write_trajectory(w, &sim.dataset.ground_truth))?;
    }
    if let Some(path) = config_out {
        write_to(path, |w| Ok(w.write_all(s.run_config().render().as_bytes())?))?;
    }
    println!(
        "imu {} scans {} world {} path {:.1} m",
        sim.dataset.imu.len(),
        sim.dataset.scans.len(),
        sim.world.len(),
        path_length(&sim.dataset.ground_truth)
    );
    Ok(())
}

fn cmd_eval(est: &Path, gt: &Path, align: Alignment) -> Result<()> {
    let est = read_trajectory(est)?;
    let gt = read_trajectory(gt)?;
    let ape = ape_rmse(&est, &gt, align)?;
    println!("align {align}");
    println!("pairs {}", ape.pairs());
    println!("ape_translation_rmse_m {:.6}", ape.translation_rmse);
    println!("ape_rotation_rmse_deg {:.6}", ape.rotation_rmse_deg);
    println!("path_length_m {:.3}", path_length(&gt));
    println!("loop_closure_error_m {:.6}", loop_closure_error(&est)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { dataset, config, prior_map, mode, out, events, timing } => {
            cmd_run(dataset, config, prior_map.as_deref(), *mode, out, events.as_deref(), *timing)
        }
        Command::Simulate { scenario, out, world_out, gt_out, config_out } => {
            cmd_simulate(scenario, out, world_out.as_deref(), gt_out.as_deref(), config_out.as_deref())
        }
        Command::Eval { est, gt, align } => cmd_eval(est, gt, *align),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
