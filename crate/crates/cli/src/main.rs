use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fabricsim::report::Format;
use fabricsim_cli::{parse_config, run, CliError, Mode};

#[derive(Parser)]
#[command(name = "fabricsim", version, about = "Analytical LLM / DLRM performance and interconnect energy model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-point inference, speedup matrices, TP overhead, arithmetic intensity.
    Infer(Opts),
    /// One training step, or a search for the MFU-optimal plan.
    Train(Opts),
    /// Interconnect energy, electronic vs photonic.
    Power(Opts),
    /// Embedding pooling, distributed vs shared fabric.
    Dlrm(Opts),
    /// MAPE and R^2 against measured latencies.
    Validate(Opts),
    /// Inference latency over an explicit grid.
    Sweep(Opts),
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct Opts {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutFormat>,
    /// Worker threads for grid sweeps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Dotted-path override, e.g. `plan.tp=4`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn execute(mode: Mode, o: Opts) -> Result<(), CliError> {
    if o.jobs == 0 {
        return Err(CliError::Validation("--jobs must be >= 1".into()));
    }
    let cfg = parse_config(&o.config, Some(mode), &o.overrides)?;
    let format = match o.format {
        Some(OutFormat::Csv) => Format::Csv,
        Some(OutFormat::Json) => Format::Json,
        None => cfg.output.format.unwrap_or_default(),
    };
    let output = o
        .output
        .or_else(|| cfg.output.path.as_ref().map(|p| cfg.base_dir.join(p)));
    let report = run(&cfg, o.jobs)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let bytes = report
        .emit(format)
        .map_err(|e| CliError::Runtime(format!("serializing report: {e}")))?;
    match output {
        Some(p) => std::fs::write(&p, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| CliError::Runtime(format!("stdout: {e}")))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, opts) = match cli.command {
        Command::Infer(o) => (Mode::Infer, o),
        Command::Train(o) => (Mode::Train, o),
        Command::Power(o) => (Mode::Power, o),
        Command::Dlrm(o) => (Mode::Dlrm, o),
        Command::Validate(o) => (Mode::Validate, o),
        Command::Sweep(o) => (Mode::Sweep, o),
    };
    match execute(mode, opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
