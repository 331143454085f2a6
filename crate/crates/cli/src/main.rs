use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use erflow_core::evaluation::UnknownRefPolicy;
use tracing_subscriber::EnvFilter;

mod batch;
mod evaluate;
mod serve;

/// Entity resolution over CSV and JSONL sources.
#[derive(Parser, Debug)]
#[command(name = "erflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured pipeline once and write profiles as JSONL.
    Batch {
        /// Runtime config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output file for entity profiles (canonical JSONL).
        #[arg(long)]
        out: PathBuf,
        /// Output file for the run report (JSON).
        #[arg(long)]
        report: PathBuf,
        /// Matcher worker threads, overriding the config.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Score predictions against ground truth; prints metrics JSON.
    Evaluate {
        /// Profiles JSONL (pairwise, ari) or candidate groups JSONL (blocking).
        #[arg(long)]
        predicted: PathBuf,
        /// Ground truth JSONL: {"pair":[a,b]} lines or {"ref":id,"label":s} lines.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum)]
        mode: EvalMode,
        /// Total reference count; required for blocking mode.
        #[arg(long)]
        references: Option<u64>,
        /// Treatment of predicted pairs naming references the truth lacks.
        #[arg(long, value_enum, default_value_t = PolicyArg::Ignore)]
        unknown_policy: PolicyArg,
    },
    /// Serve the incremental ingestion and query API.
    Serve {
        /// Runtime config with mode = incremental.
        #[arg(long)]
        config: PathBuf,
        /// Listen address.
        #[arg(long, env = "ERFLOW_LISTEN", default_value = "127.0.0.1:8080")]
        listen: String,
        /// File store directory, overriding the config's store.
        #[arg(long, env = "ERFLOW_STORE")]
        store: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Pairwise,
    Ari,
    Blocking,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Ignore,
    Fp,
}

impl From<PolicyArg> for UnknownRefPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Ignore => UnknownRefPolicy::Ignore,
            PolicyArg::Fp => UnknownRefPolicy::Fp,
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_env("ERFLOW_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .init();

    let cli = Cli::parse();
    let code = match cli.command {
        Command::Batch {
            config,
            out,
            report,
            threads,
        } => batch::run(&config, &out, &report, threads),
        Command::Evaluate {
            predicted,
            truth,
            mode,
            references,
            unknown_policy,
        } => evaluate::run(&predicted, &truth, mode, references, unknown_policy.into()),
        Command::Serve { config, listen, store } => serve::run(&config, &listen, store),
    };
    ExitCode::from(code)
}
