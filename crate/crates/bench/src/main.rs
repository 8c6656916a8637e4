//! `flowis` command-line interface.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use flowis::mdp::read_trajectories;
use flowis::slate_ope::{read_slate_records, LoggedSlateDataset};
use flowis_bench::config::OutputFormat;
use flowis_bench::{
    diagnose, emit_results, mdp_bench, propensity, scaling, selection, slate_bench, BenchError,
    ExperimentConfig, Manifest, Table,
};

#[derive(Parser, Debug)]
#[command(
    name = "flowis",
    version,
    about = "Forward-flow off-policy evaluation experiments"
)]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.path`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write wall-clock timings to a `timing` table.
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact slate propensities by the subset DP.
    Propensity,
    /// MDP estimator benchmark, or estimates on `mdp.dataset`.
    OpeMdp,
    /// Slate estimator benchmark, or estimates on `slate.dataset`.
    OpeSlate,
    /// Rank candidate slate policies with each estimator.
    ModelSelect,
    /// Run the diagnostic named by `diagnose.operation`.
    Diagnose,
    /// Propensity cost of the DP against enumeration and Gumbel sampling.
    BenchScaling,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Propensity => "propensity",
            Command::OpeMdp => "ope-mdp",
            Command::OpeSlate => "ope-slate",
            Command::ModelSelect => "model-select",
            Command::Diagnose => "diagnose",
            Command::BenchScaling => "bench-scaling",
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.path = out.clone();
    }
    if let Some(f) = cli.format {
        cfg.output.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
    }
    cfg.output.timing |= cli.timing;
    cfg.validate()?;
    Ok(cfg)
}

/// Dataset paths are relative to the config file's directory.
fn resolve(cli: &Cli, path: &Path) -> PathBuf {
    match cli.config.as_deref().and_then(Path::parent) {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, BenchError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| BenchError::io(path, e))
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> Result<Vec<Table>, BenchError> {
    let timing = cfg.output.timing;
    let with_timing = |main: Vec<Table>, t: Table| {
        if timing {
            [main, vec![t]].concat()
        } else {
            main
        }
    };
    Ok(match cli.command {
        Command::Propensity => {
            let section = cfg.propensity.clone().unwrap_or_default();
            let out = propensity::run_propensity(&section, cfg.seed)?;
            with_timing(vec![out.propensities], out.timing)
        }
        Command::OpeMdp => match &cfg.mdp()?.dataset {
            Some(path) => {
                let path = resolve(cli, path);
                let data = read_trajectories(open(&path)?)?;
                vec![mdp_bench::evaluate_mdp_dataset(cfg, &data)?]
            }
            None => vec![mdp_bench::run_mdp_benchmark(cfg)?],
        },
        Command::OpeSlate => {
            let section = cfg.slate()?;
            match &section.dataset {
                Some(path) => {
                    let path = resolve(cli, path);
                    let records = read_slate_records(open(&path)?)?;
                    let k = records.first().map_or(0, |r| r.ordering.len());
                    let data = LoggedSlateDataset::new(section.catalog_size, k, "logged", records)?;
                    vec![slate_bench::evaluate_slate_dataset(cfg, &data)?]
                }
                None => vec![slate_bench::run_slate_benchmark(cfg)?],
            }
        }
        Command::ModelSelect => {
            let out = selection::run_model_selection(cfg)?;
            vec![out.selection, out.candidates]
        }
        Command::Diagnose => vec![diagnose::run_diagnostic(cfg)?],
        Command::BenchScaling => {
            let section = cfg.scaling.clone().unwrap_or_default();
            let contexts = cfg.slate.as_ref().map_or(1, |s| s.num_contexts);
            let out = scaling::run_scaling(&section, contexts, cfg.seed)?;
            with_timing(vec![out.scaling], out.timing)
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = (|| -> anyhow::Result<()> {
        if let Some(n) = cli.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
        }
        let cfg = load_config(&cli)?;
        let tables = run(&cli, &cfg)?;
        let manifest = Manifest::new(cli.command.name(), &cfg);
        let written = emit_results(&tables, cfg.output.format, &cfg.output.path, manifest)?;
        for path in written {
            println!("{}", path.display());
        }
        Ok(())
    })();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<BenchError>()
                .map_or(1, BenchError::exit_code);
            ExitCode::from(code)
        }
    }
}
