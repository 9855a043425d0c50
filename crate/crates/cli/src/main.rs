mod config;
mod fewshot_cmd;
mod gym_cmd;
mod manifest;
mod pipeline;
mod report_cmd;
mod upstream_cmd;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use crossfit_core::autodiff::AutodiffError;
use crossfit_core::fewshot::FewshotError;
use crossfit_core::gym::SynthConfig;
use crossfit_core::upstream::{Method, UpstreamError};

use config::RunConfig;

/// A problem with how the tool was invoked (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "crossfit", version, about = "Few-shot cross-task generalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gym root (default: $CROSSFIT_HOME).
    #[arg(long)]
    gym: Option<PathBuf>,
    /// Partition listing (JSON/JSON5).
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent jobs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Drop tasks that the partition lists in more than one set.
    #[arg(long)]
    allow_overlap: bool,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long, required_unless_present = "print_config")]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(g) = &self.gym {
            cfg.gym = Some(g.clone());
        }
        if let Some(p) = &self.partition {
            cfg.partition = Some(p.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        Ok(cfg)
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Build a task repository with few-shot splits for every seed.
    Gym {
        /// Synthetic suite config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of task files (*.jsonl) instead of a synthetic suite.
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        print_config: bool,
        #[arg(long, required_unless_present = "print_config")]
        out: Option<PathBuf>,
    },
    /// Upstream learning on the partition's training tasks.
    Upstream {
        #[command(flatten)]
        run: RunArgs,
        /// mtl, maml, fomaml or reptile.
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        /// Stop at the first checkpoint at or after this step.
        #[arg(long, hide = true)]
        halt_after: Option<usize>,
    },
    /// Few-shot fine-tuning and test scoring on the partition's test tasks.
    Fewshot {
        #[command(flatten)]
        run: RunArgs,
        /// Upstream checkpoint to start from.
        #[arg(long, conflicts_with = "direct")]
        checkpoint: Option<PathBuf>,
        /// Start from the untrained model (the baseline).
        #[arg(long)]
        direct: bool,
        /// Learning rates {1e-5, 2e-5, 5e-5}, batch sizes {2, 4, 8},
        /// 1000 updates with 100 warmup, dev evaluation every 100.
        #[arg(long)]
        paper_grid: bool,
    },
    /// Average relative gain of each method against the baseline.
    Report {
        /// Baseline results directory (`DIR` or `LABEL=DIR`).
        baseline: String,
        /// Method results directories (`DIR` or `LABEL=DIR`).
        #[arg(required = true)]
        methods: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    use std::io::Write;
    writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gym {
            config,
            tasks,
            seed,
            print_config,
            out,
        } => {
            if print_config {
                return print_json(&SynthConfig::default());
            }
            gym_cmd::run(config.as_deref(), tasks.as_deref(), seed, &out.expect("required by clap"))
        }
        Command::Upstream { run, method, halt_after } => {
            let mut cfg = run.config()?;
            if let Some(m) = method {
                cfg.method = m;
            }
            if run.print_config {
                return print_json(&cfg);
            }
            upstream_cmd::run(cfg, &run.out.expect("required by clap"), run.allow_overlap, halt_after)
        }
        Command::Fewshot {
            run,
            checkpoint,
            direct,
            paper_grid,
        } => {
            let mut cfg = run.config()?;
            if paper_grid {
                cfg.finetune = crossfit_core::fewshot::FinetuneConfig::paper();
            }
            if run.print_config {
                return print_json(&cfg);
            }
            fewshot_cmd::run(
                cfg,
                checkpoint.as_deref(),
                direct,
                paper_grid,
                &run.out.expect("required by clap"),
                run.allow_overlap,
            )
        }
        Command::Report { baseline, methods, out } => report_cmd::run(&baseline, &methods, &out),
    }
}

/// 1 usage, 2 data, 3 numeric failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<UpstreamError>() {
            if e.is_numeric() {
                return 3;
            }
        }
        if let Some(e) = cause.downcast_ref::<FewshotError>() {
            if matches!(e, FewshotError::NonFinite { .. } | FewshotError::AllCellsFailed { .. }) {
                return 3;
            }
        }
        if matches!(cause.downcast_ref::<AutodiffError>(), Some(AutodiffError::NonFinite { .. })) {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
