use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use coalesce_core::engine::Process;
use coalesce_scale::commands;
use coalesce_scale::config::ExperimentConfig;
use coalesce_scale::experiment;
use coalesce_scale::measure_spec::MeasureSpec;
use coalesce_scale::output::{write_atomic, Table};

#[derive(Parser)]
#[command(name = "coalesce-scale", version, about = "Scaling limits of regular Ξ-coalescents")]
struct Cli {
    /// Experiment configuration (JSON). Other subcommands take their
    /// measure from it when --measure is absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; tables go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: COALESCE_SCALE_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct MeasureArg {
    /// Measure as inline JSON or a path to a JSON file.
    #[arg(long)]
    measure: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcessArg {
    Block,
    Fixation,
}

#[derive(Subcommand)]
enum Command {
    /// x, γ, γ′, γ″, xγ″ and L over a log grid.
    Rates {
        #[command(flatten)]
        measure: MeasureArg,
        #[arg(long, default_value_t = 2.0)]
        x_min: f64,
        #[arg(long, default_value_t = 1e6)]
        x_max: f64,
        #[arg(long, default_value_t = 25)]
        points: usize,
    },
    /// v and w with the closed form where one is known.
    Scaling {
        #[command(flatten)]
        measure: MeasureArg,
        #[arg(long, value_delimiter = ',', default_values_t = [1e2, 1e4, 1e6])]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 1.0])]
        t: Vec<f64>,
    },
    /// Generator matrix entries (row, col, rate).
    RatesTable {
        #[command(flatten)]
        measure: MeasureArg,
        #[arg(long, default_value_t = 12)]
        n: usize,
        #[arg(long, value_enum, default_value_t = ProcessArg::Block)]
        process: ProcessArg,
    },
    /// Siegmund duality between block counting process and fixation line.
    DualityCheck {
        #[command(flatten)]
        measure: MeasureArg,
        #[arg(long, default_value_t = 12)]
        n_max: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 1.0])]
        t: Vec<f64>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Replicates of log N_t^(n) − log v(n, t).
    Simulate {
        #[command(flatten)]
        measure: MeasureArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        /// CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Characteristic function and CDF of the limit law at time t.
    LimitCf {
        #[command(flatten)]
        measure: MeasureArg,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0])]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [-2.0, -1.0, 0.0, 1.0, 2.0])]
        q: Vec<f64>,
    },
    /// Runs the experiment described by --config.
    Experiment,
}

fn resolve_measure(arg: &MeasureArg, config: Option<&Path>) -> anyhow::Result<coalesce_core::measure::CoalescentMeasure> {
    let spec = match (&arg.measure, config) {
        (Some(m), _) => MeasureSpec::from_arg(m)?,
        (None, Some(c)) => ExperimentConfig::load(c)?.measure,
        (None, None) => bail!("--measure or --config is required"),
    };
    spec.build()
}

fn emit(table: &Table, dir: Option<&Path>, name: &str) -> anyhow::Result<()> {
    table.emit(dir.map(|d| d.join(name)).as_deref())
}

fn init_threads(cli: Option<usize>) -> anyhow::Result<()> {
    let n = match cli {
        Some(n) => Some(n),
        None => match std::env::var("COALESCE_SCALE_THREADS") {
            Ok(v) => Some(v.trim().parse().with_context(|| format!("COALESCE_SCALE_THREADS = '{v}'"))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    init_threads(cli.threads)?;
    let cfg = cli.config.as_deref();
    let out = cli.out.as_deref();
    let seed = cli.seed.unwrap_or(1);
    match cli.command {
        Command::Rates { measure, x_min, x_max, points } => {
            let m = resolve_measure(&measure, cfg)?;
            emit(&commands::rates(&m, &commands::log_grid(x_min, x_max, points)?)?, out, "rates.csv")?;
        }
        Command::Scaling { measure, x, t } => {
            let m = resolve_measure(&measure, cfg)?;
            emit(&commands::scaling(&m, &x, &t)?, out, "scaling.csv")?;
        }
        Command::RatesTable { measure, n, process } => {
            let m = resolve_measure(&measure, cfg)?;
            let p = match process {
                ProcessArg::Block => Process::Block,
                ProcessArg::Fixation => Process::Fixation,
            };
            emit(&commands::rates_table(&m, n, p)?, out, "rates_table.csv")?;
        }
        Command::DualityCheck { measure, n_max, t, tol } => {
            let m = resolve_measure(&measure, cfg)?;
            let (table, pass) = commands::duality_check(&m, n_max, &t, tol)?;
            emit(&table, out, "duality.csv")?;
            return Ok(pass);
        }
        Command::Simulate { measure, n, t, reps, out: file } => {
            let m = resolve_measure(&measure, cfg)?;
            let table = commands::simulate(&m, n, t, reps, seed)?;
            match file {
                Some(f) => table.emit(Some(&f))?,
                None => emit(&table, out, "simulate.csv")?,
            }
        }
        Command::LimitCf { measure, t, kappa, x, q } => {
            let m = resolve_measure(&measure, cfg)?;
            let (cf, cdf) = commands::limit_cf(&m, kappa, t, &x, &q)?;
            match out {
                Some(d) => {
                    cf.emit(Some(&d.join("limit_cf.csv")))?;
                    cdf.emit(Some(&d.join("limit_cdf.csv")))?;
                }
                None => {
                    cf.emit(None)?;
                    println!();
                    cdf.emit(None)?;
                }
            }
        }
        Command::Experiment => {
            let Some(path) = cfg else { bail!("experiment needs --config") };
            let mut config = ExperimentConfig::load(path)?;
            if let Some(s) = cli.seed {
                config.params.seed = s;
            }
            let report = experiment::run(&config)?;
            let dir = out.map(Path::to_path_buf).or_else(|| config.output.clone());
            match dir {
                Some(d) => {
                    let stem = report.kind.clone();
                    write_atomic(&d.join(format!("{stem}.csv")), &report.table().to_csv()?)?;
                    write_atomic(&d.join(format!("{stem}.json")), report.to_json().as_bytes())?;
                }
                None => report.table().emit(None)?,
            }
            for c in &report.checks {
                eprintln!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            eprintln!("{} ({:.1} s)", if report.pass { "PASS" } else { "FAIL" }, report.wall_clock_s);
            return Ok(report.pass);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
