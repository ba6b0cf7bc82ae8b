use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ppe_core::experiments::fits::{curves_from_aggregate, fit_collapse, fit_onset, Threshold};
use ppe_core::experiments::grid::{default_out_dir, execute_delta_grid, read_csv, AggregateRow, AGGREGATE_FILE};
use ppe_core::experiments::pop_run::execute_pop;
use ppe_core::experiments::{ExperimentConfig, Family};
use ppe_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_FIT_REFUSED: u8 = 3;
const EXIT_INTERRUPTED: u8 = 130;

#[derive(Parser)]
#[command(name = "ppe", version, about = "Partial projected ensemble experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Kicked Ising regime, used when no config is given or to override it.
    #[arg(long, global = true)]
    preset: Option<Preset>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Ergodic,
    Mbl,
    Sdki,
}

#[derive(Clone, Copy, ValueEnum)]
enum Basis {
    Z,
    X,
}

#[derive(Subcommand)]
enum Command {
    /// Fluctuation measure over (realization, L_E, t).
    DeltaGrid,
    /// PoP histograms, Mellin convolutions and KL divergences.
    Pop,
    /// Exponential fit of the onset time against L_E.
    FitOnset(FitArgs),
    /// Scaling collapse of the averaged curves.
    FitCollapse(FitArgs),
    /// Distance of the ensemble second moment from the gHS value.
    GhsDistance,
    /// Fluctuation measure for the l-bit model.
    LbitDelta {
        #[arg(long, value_enum, default_value = "z")]
        basis: Basis,
    },
}

#[derive(Args)]
struct FitArgs {
    /// Aggregate table written by `delta-grid`.
    #[arg(long)]
    table: PathBuf,
    /// Absolute threshold on the averaged curve.
    #[arg(long, conflicts_with = "relative")]
    threshold: Option<f64>,
    /// Threshold as a fraction of each curve's plateau.
    #[arg(long)]
    relative: Option<f64>,
    /// Only use rows with this L_S.
    #[arg(long)]
    l_s: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidPartition(_) | Error::SizeCap(_) => EXIT_CONFIG,
        Error::FitRefused(_) => EXIT_FIT_REFUSED,
        Error::Interrupted(_) => EXIT_INTERRUPTED,
        _ => EXIT_FAILURE,
    }
}

fn family_of(preset: Preset) -> Family {
    match preset {
        Preset::Ergodic => Family::Ergodic,
        Preset::Mbl => Family::Mbl,
        Preset::Sdki => Family::Sdki,
    }
}

fn load_config(cli: &Cli, default: Family) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(cli.preset.map(family_of).unwrap_or(default)),
    };
    if cli.config.is_some() {
        if let Some(p) = cli.preset {
            cfg.run.family = family_of(p);
        }
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(n) = cli.threads {
        cfg.run.threads = Some(n);
    }
    if let Some(out) = &cli.out {
        cfg.run.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cancel_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let handler = flag.clone();
    if let Err(e) = ctrlc::set_handler(move || handler.store(true, Ordering::Relaxed)) {
        log::warn!("no interrupt handler: {e}");
    }
    flag
}

fn run_grid(cfg: &ExperimentConfig) -> Result<(), Error> {
    let dir = default_out_dir(cfg);
    let flag = cancel_flag();
    let agg = execute_delta_grid(cfg, &dir, Some(&flag))?;
    log::info!("{} aggregate rows written to {}", agg.len(), dir.join(AGGREGATE_FILE).display());
    Ok(())
}

fn threshold(cli: &Cli, args: &FitArgs) -> Result<Threshold, Error> {
    if let Some(v) = args.threshold {
        return Ok(Threshold::Absolute(v));
    }
    if let Some(f) = args.relative {
        return Ok(Threshold::RelativeToPlateau(f));
    }
    let cfg = load_config(cli, Family::Ergodic)?;
    Ok(match cfg.absolute_threshold() {
        Some(v) => Threshold::Absolute(v),
        None => Threshold::RelativeToPlateau(cfg.fit.relative_threshold),
    })
}

fn emit(cli: &Cli, name: &str, value: serde_json::Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(&value)?;
    println!("{text}");
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), text + "\n")?;
    }
    Ok(())
}

fn read_table(path: &Path, l_s: Option<usize>) -> Result<ppe_core::experiments::Curves, Error> {
    let rows: Vec<AggregateRow> = read_csv(path)?;
    Ok(curves_from_aggregate(&rows, l_s))
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::DeltaGrid => run_grid(&load_config(cli, Family::Ergodic)?),
        Command::GhsDistance => {
            let mut cfg = load_config(cli, Family::Ergodic)?;
            cfg.output.delta_ghs = true;
            run_grid(&cfg)
        }
        Command::LbitDelta { basis } => {
            let family = match basis {
                Basis::Z => Family::LbitZ,
                Basis::X => Family::LbitX,
            };
            let mut cfg = load_config(cli, family)?;
            if cfg.run.family.is_floquet() {
                return Err(Error::Config(format!("lbit-delta needs an l-bit family, got {}", cfg.run.family.name())));
            }
            cfg.run.family = family;
            run_grid(&cfg)
        }
        Command::Pop => {
            let cfg = load_config(cli, Family::Ergodic)?;
            let dir = default_out_dir(&cfg);
            let snaps = execute_pop(&cfg, &dir)?;
            log::info!("{} PoP snapshots written to {}", snaps.len(), dir.display());
            Ok(())
        }
        Command::FitOnset(args) => {
            let fit = fit_onset(&read_table(&args.table, args.l_s)?, threshold(cli, args)?)?;
            emit(cli, "fit_onset.json", serde_json::to_value(fit)?)
        }
        Command::FitCollapse(args) => {
            let fit = fit_collapse(&read_table(&args.table, args.l_s)?, threshold(cli, args)?)?;
            emit(cli, "fit_collapse.json", serde_json::to_value(fit)?)
        }
    }
}
