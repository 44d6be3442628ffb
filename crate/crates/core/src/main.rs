use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use climashift::emulator::EmulatorKind;
use climashift::harness::{
    self, CellFilter, ExperimentConfig, ExperimentOutcome, HarnessError, ProtocolSet, RunOptions,
};

/// Out-of-distribution evaluation harness for climate emulators.
#[derive(Parser)]
#[command(name = "climashift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON). Defaults to the built-in desk setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of baseline,time_shift,ssp_rotation.
    #[arg(long)]
    protocols: Option<String>,
}

#[derive(Args, Clone)]
struct Filter {
    #[arg(long)]
    emulator: Option<EmulatorKind>,
    #[arg(long)]
    oracle: Option<String>,
    #[arg(long)]
    plan: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the synthetic dataset and write it to <out>/dataset.
    Generate(Common),
    /// Build and write the split plans.
    Split(Common),
    /// Train models for the selected cells.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        filter: Filter,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate trained models and write the result tables.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        filter: Filter,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Split, train, evaluate and tabulate every cell.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// (Re)generate the dataset first.
        #[arg(long)]
        generate: bool,
        /// Run this many seeds (seed, seed+1, ...) into <out>/seed-<s>.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
    /// Print the percent-change table of a run and flag large shifts.
    Report {
        /// Run directory containing results/records.csv.
        #[arg(long)]
        out: PathBuf,
        /// Flag cells whose percent change exceeds this value.
        #[arg(long, default_value_t = 20.0)]
        threshold: f64,
    },
}

fn resolve(common: &Common) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(list) = &common.protocols {
        cfg.protocols = ProtocolSet::parse_list(list)?;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn summarize(outcome: &ExperimentOutcome, out: &Path) -> i32 {
    println!(
        "{} records, {} failed cell(s) in {}",
        outcome.records.len(),
        outcome.failures.len(),
        out.display()
    );
    for f in &outcome.failures {
        println!("  FAILED {}/{}/{}: {}", f.emulator, f.oracle, f.plan, f.error);
    }
    outcome.exit_code()
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    let opts = |jobs: usize, generate: bool, filter: Option<&Filter>| RunOptions {
        jobs,
        generate,
        filter: filter
            .map(|f| CellFilter {
                emulator: f.emulator,
                oracle: f.oracle.clone(),
                plan: f.plan.clone(),
            })
            .unwrap_or_default(),
    };
    match cli.command {
        Command::Generate(common) => {
            let (cfg, out) = resolve(&common)?;
            let m = harness::cmd_generate(&cfg, &out)?;
            println!("wrote {} dataset files to {}", m.artifacts.len(), out.display());
            Ok(0)
        }
        Command::Split(common) => {
            let (cfg, out) = resolve(&common)?;
            let m = harness::cmd_split(&cfg, &out)?;
            println!("wrote {} plans to {}", m.artifacts.len(), out.join("splits").display());
            Ok(0)
        }
        Command::Train { common, filter, jobs } => {
            let (cfg, out) = resolve(&common)?;
            let o = harness::cmd_train(&cfg, &out, &opts(jobs, false, Some(&filter)))?;
            Ok(summarize(&o, &out))
        }
        Command::Eval { common, filter, jobs } => {
            let (cfg, out) = resolve(&common)?;
            let o = harness::cmd_eval(&cfg, &out, &opts(jobs, false, Some(&filter)))?;
            Ok(summarize(&o, &out))
        }
        Command::Experiment {
            common,
            jobs,
            generate,
            repeat,
        } => {
            let (cfg, out) = resolve(&common)?;
            let mut code = 0;
            for (cfg, dir) in harness::repeat_runs(&cfg, &out, repeat) {
                let o = harness::cmd_experiment(&cfg, &dir, &opts(jobs, generate, None))?;
                code = code.max(summarize(&o, &dir));
            }
            Ok(code)
        }
        Command::Report { out, threshold } => {
            let r = harness::cmd_report(&out, threshold)?;
            print!("{}", r.text);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CLIMASHIFT_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
