mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sha2::{Digest, Sha256};

use commands::{Command, Failure};
use config::RunConfig;
use output::{Output, Report, SCHEMA_VERSION};

/// Solvers for linear first-order hyperbolic systems on [0, 1] with
/// reflection boundary conditions.
#[derive(Debug, Parser)]
#[command(name = "hyperstrip", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides `numerics.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("HYPERSTRIP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("HYPERSTRIP_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match RunConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid config {}: {e:#}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let out = match Output::create(&cli.out) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let hash = format!("{:x}", Sha256::digest(text.as_bytes()));
    let seed = cli.seed.or(cfg.numerics.seed);
    let (pass, summary, error, result, code) = match commands::run(cli.command, &cfg, seed, &out) {
        Ok(o) => {
            let code = if o.pass { 0 } else { 1 };
            (o.pass, o.summary, None, o.result, code)
        }
        Err(Failure::Condition(e)) => (false, vec![format!("failed: {e:#}")], Some(format!("{e:#}")), serde_json::Value::Null, 1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let report = Report {
        schema_version: SCHEMA_VERSION,
        tool: "hyperstrip",
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        config_sha256: &hash,
        seed,
        pass,
        summary: &summary,
        error,
        result,
    };
    let mut text = format!("hyperstrip {}: {}\n", cli.command.name(), if pass { "PASS" } else { "FAIL" });
    for line in &summary {
        text.push_str("  ");
        text.push_str(line);
        text.push('\n');
    }
    if let Err(e) = report.write(&out).and_then(|_| out.text("summary.txt", &text)) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    print!("{text}");
    ExitCode::from(code)
}
