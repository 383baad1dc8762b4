//! `chisq-rl`: train, sweep, ablate, verify-bound, tuning-report.
//!
//! Settings resolve in order: config file, `CHISQRL_*` environment
//! variables, `--set key=value`, then the dedicated flags.

use std::path::PathBuf;
use std::process::ExitCode;

use chisq_rl::envs::EnvId;
use chisq_rl::harness::{self, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chisq-rl", version, about = "Std-penalized distributional RL harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train QR-DQN (cartpole) or TQC (pendulum); writes checkpoint, logs and resolved config.
    Train(Common),
    /// Evaluate a checkpoint across a grid of physics multipliers.
    Sweep(SweepArgs),
    /// Train and sweep under the four penalize_train/penalize_test modes.
    Ablate(Common),
    /// Certify the closed-form worst-case value against the numerical oracle.
    VerifyBound(VerifyArgs),
    /// Mean/variance ratio of the final returns in one or more log CSVs.
    TuningReport(TuningArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    env: Option<EnvId>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    multiplier: Option<String>,
    /// Comma-separated multiplier values.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    penalize_train: Option<bool>,
    #[arg(long)]
    penalize_test: Option<bool>,
    /// Any config key, e.g. `--set qrdqn.lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Defaults to `<out>/checkpoint.bin`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    cases: Option<usize>,
    #[arg(long)]
    infeasible_cases: Option<usize>,
    /// Shifts the closed form before comparison; for testing the failure path.
    #[arg(long, hide = true)]
    corrupt_offset: Option<f64>,
}

#[derive(Args)]
struct TuningArgs {
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Trailing episodes taken from each log.
    #[arg(long, default_value_t = 20)]
    window: usize,
}

fn resolve(c: &Common) -> chisq_rl::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| chisq_rl::Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set_key(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(a) = c.alpha {
        cfg.set_alpha(a)?;
    }
    if let Some(e) = c.env {
        cfg.env = e;
    }
    if let Some(n) = c.steps {
        cfg.total_steps = n;
    }
    if let Some(m) = &c.multiplier {
        cfg.sweep.multiplier = m.clone();
    }
    if let Some(g) = &c.grid {
        cfg.sweep.grid = g.clone();
    }
    if let Some(n) = c.episodes {
        cfg.sweep.episodes = n;
        cfg.eval_episodes = n;
    }
    if let Some(b) = c.penalize_train {
        cfg.qrdqn.penalize_train = b;
    }
    if let Some(b) = c.penalize_test {
        cfg.qrdqn.penalize_test = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> chisq_rl::Result<ExitCode> {
    match cli.command {
        Command::Train(c) => {
            let cfg = resolve(&c)?;
            let art = harness::cmd_train(&cfg)?;
            let n = art.eval_returns.len() as f64;
            println!(
                "wrote {} ({} episodes logged, eval mean {:.2} over {} episodes)",
                art.dir.display(),
                art.log.rows.len(),
                art.eval_returns.iter().sum::<f64>() / n,
                art.eval_returns.len()
            );
        }
        Command::Sweep(s) => {
            let mut cfg = resolve(&s.common)?;
            if s.checkpoint.is_some() {
                cfg.sweep.checkpoint = s.checkpoint;
            }
            let (report, path) = harness::cmd_sweep(&cfg)?;
            for r in &report.rows {
                println!("{:>6} mean {:>9.2} normalized {:.3}", r.multiplier, r.mean, r.normalized_mean);
            }
            println!("wrote {}", path.display());
        }
        Command::Ablate(c) => {
            let cfg = resolve(&c)?;
            for run in harness::cmd_ablate(&cfg)? {
                let means: Vec<String> = run.report.rows.iter().map(|r| format!("{:.1}", r.mean)).collect();
                println!(
                    "{:<10} alpha_eff_train {} alpha_eff_test {} means [{}]",
                    run.label,
                    run.alpha_eff_train,
                    run.alpha_eff_test,
                    means.join(", ")
                );
            }
            println!("wrote {}", cfg.out_dir.join("ablate").display());
        }
        Command::VerifyBound(v) => {
            let mut cfg = resolve(&v.common)?;
            if let Some(n) = v.cases {
                cfg.verify.cases = n;
            }
            if let Some(n) = v.infeasible_cases {
                cfg.verify.infeasible_cases = n;
            }
            if let Some(o) = v.corrupt_offset {
                cfg.verify.closed_form_offset = o;
            }
            let (report, path) = harness::cmd_verify_bound(&cfg)?;
            let failures = report.failures();
            println!(
                "{} cases, {} failed, {} strictly inside the lower bound; wrote {}",
                report.rows.len(),
                failures,
                report.strict_lower_bound_cases(),
                path.display()
            );
            if failures > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::TuningReport(t) => {
            print!("{}", harness::cmd_tuning_report(&t.logs, t.window)?.render());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
