use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dics_core::harness::{self, ExperimentConfig, ExperimentKind, Suite};

/// Communication-sparsified decentralized optimization simulator.
#[derive(Parser)]
#[command(
    name = "dics",
    version,
    after_help = "The DICS_OUT environment variable overrides the output directory named in a config file."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Surplus consensus runs (`"kind": "consensus"`).
    Consensus(RunArgs),
    /// Optimizing runs on synthetic data (`"kind": "linreg"` or `"logreg"`).
    Optimize(RunArgs),
    /// Window block-product spectra (`"kind": "spectra"`).
    Spectra(RunArgs),
    /// Rate constants and error-recursion checks (`"kind": "theory"`);
    /// without a config the bundled desk-scale instance is used.
    Theory(TheoryArgs),
    /// Runs the bundled reproduction suites.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Replaces the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; takes precedence over DICS_OUT and the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// consensus, optimization, spectra, theory or all.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code: 1 for configuration, 2 for runtime.
struct Failure(u8, String);

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure(1, e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure(2, e.to_string())
}

fn out_dir(flag: Option<PathBuf>, configured: Option<&Path>, fallback: &str) -> PathBuf {
    flag.unwrap_or_else(|| harness::resolve_out_dir(configured, Path::new(fallback)))
}

fn load(path: &Path, common: &Common, expected: &[ExperimentKind]) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(config_err)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if !expected.contains(&cfg.kind) {
        let names: Vec<_> = expected.iter().map(|k| k.name()).collect();
        return Err(Failure(
            1,
            format!("{}: experiment kind `{}` does not match this subcommand (expected {})", path.display(), cfg.kind.name(), names.join(" or ")),
        ));
    }
    Ok(cfg)
}

fn run(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let dir = out_dir(out, cfg.out.as_deref(), "out");
    let result = harness::run_experiment_in(cfg, &dir).map_err(runtime_err)?;
    for t in &result.traces {
        println!(
            "{}: {} steps, final residual {:.3e}, {} entries sent",
            t.kind.name(),
            t.steps_run,
            t.final_residual(),
            t.comm_entries_total()
        );
    }
    if result.traces.is_empty() {
        println!("{}", serde_json::to_string(&result.summary).unwrap_or_default());
    }
    println!("wrote {} files to {}", result.files.len(), dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Consensus(a) => run(&load(&a.config, &a.common, &[ExperimentKind::Consensus])?, a.common.out),
        Command::Optimize(a) => run(
            &load(&a.config, &a.common, &[ExperimentKind::Linreg, ExperimentKind::Logreg])?,
            a.common.out,
        ),
        Command::Spectra(a) => run(&load(&a.config, &a.common, &[ExperimentKind::Spectra])?, a.common.out),
        Command::Theory(a) => {
            let cfg = match &a.config {
                Some(path) => load(path, &a.common, &[ExperimentKind::Theory])?,
                None => {
                    let mut cfg = harness::desk_theory_config();
                    if let Some(seed) = a.common.seed {
                        cfg.seed = seed;
                    }
                    cfg
                }
            };
            run(&cfg, a.common.out)
        }
        Command::Reproduce(a) => {
            let suite = Suite::parse(&a.suite).map_err(config_err)?;
            let dir = out_dir(a.out, None, "reproduce");
            let report = harness::reproduce(suite, &dir).map_err(runtime_err)?;
            for (name, took) in &report.timings {
                println!("{name}: {:.1} s", took.as_secs_f64());
            }
            println!("wrote {} files to {}", report.files.len(), dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(code)
        }
    }
}
