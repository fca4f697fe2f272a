use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use smoothtail_cli::config::{Format, Seed, SEED_ENV};
use smoothtail_cli::{execute, Command, Overrides};

/// Fixed points of the smoothing transform: moments, simulation and tails.
#[derive(Debug, Parser)]
#[command(name = "smoothtail", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Decimal or 0x-prefixed hex.
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    generations: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// 0 = all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn parse_seed(s: &str) -> Result<u64, String> {
    Seed::parse(s).map(|s| s.0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ov = Overrides {
        seed: cli.seed,
        pool_size: cli.pool_size,
        generations: cli.generations,
        out_dir: cli.out_dir,
        format: cli.format,
        threads: cli.threads,
    };
    let env = std::env::var(SEED_ENV).ok();
    let out = execute(cli.command, cli.config.as_deref(), &ov, env.as_deref());
    if out.code == 0 {
        print!("{}", out.message);
    } else {
        eprintln!("error: {}", out.message);
    }
    ExitCode::from(out.code as u8)
}
