use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sibgxe::pipeline::{run_stages, PipelineConfig, Stage};
use sibgxe::Error;

#[derive(Parser)]
#[command(name = "sibgxe", version, about = "Sibling-comparison gene-by-environment simulation and estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the cohort and write cohort and genotype files.
    Simulate(Common),
    /// Simulate, then run the discovery association scan.
    Scan(Common),
    /// Simulate, scan and build polygenic scores.
    Score(Common),
    /// Build scores and fit every configured model.
    Fit(Common),
    /// Build scores and run randomization inference.
    Ri(Common),
    /// Build scores and write plot data.
    Report(Common),
    /// Run every stage.
    Pipeline(Common),
}

fn run(cli: Cli) -> Result<(), Error> {
    let (stages, common) = match cli.command {
        Command::Simulate(c) => (Stage::Simulate.plan(), c),
        Command::Scan(c) => (Stage::Scan.plan(), c),
        Command::Score(c) => (Stage::Score.plan(), c),
        Command::Fit(c) => (Stage::Fit.plan(), c),
        Command::Ri(c) => (Stage::Ri.plan(), c),
        Command::Report(c) => (Stage::Report.plan(), c),
        Command::Pipeline(c) => (Stage::ALL.to_vec(), c),
    };
    let mut config = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out = common
        .out
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let manifest = pool.install(|| run_stages(&config, &out, &stages))?;
    for record in &manifest.stages {
        for notice in &record.notices {
            eprintln!("[{}] {notice}", record.stage.name());
        }
    }
    eprintln!("wrote {} files to {}", manifest.outputs.len() + 1, out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_numerical() {
                3
            } else if e.is_validation() {
                2
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}
