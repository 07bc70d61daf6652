use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use agetopk::experiment::{self, parse_config, parse_seed_list, SweepSpec};
use agetopk::Error;

/// Over-the-air federated learning simulator with age-aware sparsification.
///
/// Exit codes: 0 success, 1 configuration error, 2 divergence, 3 I/O error.
#[derive(Parser)]
#[command(name = "agetopk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file of `key = value` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// agetopk, topk, randomk, agek or rtopk.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Override any config field; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write per-round metrics.
    Run {
        #[command(flatten)]
        common: Common,
        /// Append a per-round wall-clock column.
        #[arg(long)]
        timing: bool,
    },
    /// Run a grid over one config field and several seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated seeds or a half-open range `a..b`.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Compare the empirical gradient norm with the convergence bound.
    BoundCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
        checkpoints: Vec<usize>,
        #[arg(long)]
        seeds: Option<String>,
    },
}

fn overrides(common: &Common, first_seed: Option<u64>) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    for item in &common.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE (got '{item}')")))?;
        out.push((k.to_string(), v.to_string()));
    }
    if let Some(s) = &common.strategy {
        out.push(("strategy".into(), s.clone()));
    }
    if let Some(t) = common.rounds {
        out.push(("rounds".into(), t.to_string()));
    }
    if let Some(s) = common.seed.or(first_seed) {
        out.push(("seed".into(), s.to_string()));
    }
    out.push(("out".into(), common.out.display().to_string()));
    Ok(out)
}

fn configure_threads(common: &Common) -> Result<(), Error> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("cannot set thread count: {e}")))?;
    }
    Ok(())
}

fn seeds_or_default(list: &Option<String>, fallback: Option<u64>) -> Result<Vec<u64>, Error> {
    match (list, fallback) {
        (Some(s), _) => parse_seed_list(s),
        (None, Some(s)) => Ok(vec![s]),
        (None, None) => Err(Error::config("missing seeds (--seeds or --seed)")),
    }
}

fn execute(command: Command) -> Result<bool, Error> {
    match command {
        Command::Run { common, timing } => {
            configure_threads(&common)?;
            let cfg = parse_config(common.config.as_deref(), &overrides(&common, None)?)?;
            let outcome = experiment::run_single(&cfg, timing)?;
            if let Some(a) = &outcome.aborted {
                eprintln!("diverged at round {}: {}", a.round, a.reason);
                return Ok(false);
            }
            Ok(true)
        }
        Command::Sweep { common, axis, values, seeds } => {
            configure_threads(&common)?;
            let listed = seeds.as_deref().map(parse_seed_list).transpose()?;
            let first = listed.as_ref().and_then(|s| s.first().copied());
            let base = parse_config(common.config.as_deref(), &overrides(&common, first)?)?;
            let seeds = seeds_or_default(&seeds, base.seed)?;
            let spec = SweepSpec { base, axis, values, seeds };
            let summary = experiment::run_sweep(&spec, &common.out)?;
            let aborted: usize = summary.rows.iter().map(|r| r.aborted).sum();
            if aborted > 0 {
                eprintln!("{aborted} sweep run(s) diverged");
                return Ok(false);
            }
            Ok(true)
        }
        Command::BoundCheck { common, checkpoints, seeds } => {
            configure_threads(&common)?;
            let listed = seeds.as_deref().map(parse_seed_list).transpose()?;
            let first = listed.as_ref().and_then(|s| s.first().copied());
            let mut over = overrides(&common, first)?;
            let horizon = checkpoints.iter().copied().max().unwrap_or(0);
            if common.rounds.is_none() {
                over.insert(0, ("rounds".into(), horizon.to_string()));
            }
            let cfg = parse_config(common.config.as_deref(), &over)?;
            let seeds = seeds_or_default(&seeds, cfg.seed)?;
            let report = experiment::run_bound_check(&cfg, &checkpoints, &seeds, &common.out)?;
            for cp in &report.checkpoints {
                println!(
                    "T={} mean={:.6e} se={:.6e} rhs={:.6e} {}",
                    cp.rounds,
                    cp.empirical_mean,
                    cp.standard_error,
                    cp.rhs,
                    if cp.pass { "pass" } else { "fail" }
                );
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
