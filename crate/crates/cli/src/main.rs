use clap::{Parser, Subcommand};
use peano_bsde::config::{ExperimentConfig, Scenario};
use peano_bsde::exec::Execution;
use peano_bsde::experiment::{self, ExperimentError, OutputFormat, RunOptions, Verdict};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "peano-bsde", version, about = "Run BSDE experiments from INI configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write CSV tables and a JSON report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `[experiment] output`, then `out/<scenario>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads. Results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "both", value_parser = parse_format)]
        format: OutputFormat,
    },
    /// Audit the config without solving.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the scenario catalogue.
    ListScenarios {
        /// Print the built-in config of one scenario instead.
        #[arg(long)]
        show_config: Option<String>,
    },
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    s.parse()
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_verdicts(verdicts: &[Verdict]) {
    for v in verdicts {
        println!(
            "{} {}: {} {} {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.value,
            v.comparison,
            v.tolerance,
            v.invariant
        );
    }
}

fn run(cli: Cli) -> Result<i32, ExperimentError> {
    match cli.command {
        Command::Run { config, seed, out, threads, format } => {
            let cfg = load(&config, seed)?;
            let out = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(cfg.scenario.name()));
            let opts = RunOptions { out, format, exec: Execution::Parallel };
            let report = match threads {
                Some(k) => rayon::ThreadPoolBuilder::new()
                    .num_threads(k.max(1))
                    .build()
                    .map_err(|e| ExperimentError::Solver(e.to_string()))?
                    .install(|| experiment::run(&cfg, &opts))?,
                None => experiment::run(&cfg, &opts)?,
            };
            println!("scenario {} seed {} ({:.2} s)", report.scenario, report.seed, report.wall_clock_seconds);
            for (k, v) in &report.summaries {
                println!("  {k} = {v}");
            }
            print_verdicts(&report.verdicts);
            println!("wrote {} file(s) to {}", report.files.len(), opts.out.display());
            Ok(report.exit_code())
        }
        Command::Validate { config, seed } => {
            let cfg = load(&config, seed)?;
            let report = experiment::validate(&cfg)?;
            print_verdicts(&report.checks);
            println!("{}", if report.pass { "valid" } else { "invalid" });
            Ok(report.exit_code())
        }
        Command::ListScenarios { show_config } => {
            if let Some(name) = show_config {
                let s: Scenario = name.parse()?;
                print!("{}", experiment::default_config(s));
                return Ok(0);
            }
            for s in experiment::list_scenarios() {
                println!("{}\t{}\t{}", s.name, s.anchor, s.description);
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
