//! Command-line front end: scenario generation, training, evaluation
//! sweeps, and trace replay.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aimac_core::checkpoint::load_policy;
use aimac_core::env::{build_scenario, ScenarioConfig, ScenarioKind};
use aimac_core::harness::{evaluate, train, EvalOptions, TrainOptions};
use aimac_core::metrics::EvalReport;
use aimac_core::qmix::TrainConfig;
use aimac_core::trace::replay_metrics;
use aimac_core::world::{run_episode, EpisodePolicy, TraceTarget};

#[derive(Parser)]
#[command(
    name = "aimac",
    version,
    about = "Discrete-event contention MAC simulator with a learned access policy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scenario configuration tools.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCmd,
    },
    /// Run per-seed episodes and write report.csv and report.json.
    Eval(EvalArgs),
    /// Train the learned policy, keeping the best checkpoint.
    Train(TrainArgs),
    /// Recompute episode metrics from a trace log.
    Replay(ReplayArgs),
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Emit a built-in scenario config as TOML.
    Gen(ScenarioGenArgs),
}

#[derive(Args)]
struct ScenarioGenArgs {
    /// Scenario kind: home, office, or mall.
    kind: String,
    /// Seed baked into the emitted config.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory for <kind>.toml; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Config file path, or a built-in kind name (home, office, mall).
    #[arg(long)]
    scenario: String,
    /// Seed used when --scenario names a built-in kind.
    #[arg(long, default_value_t = 1)]
    scenario_seed: u64,
    /// Access policy: baseline or aimac.
    #[arg(long, default_value = "baseline")]
    policy: String,
    /// Trained parameters; required with --policy aimac.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of episodes; they run seeds --seed .. --seed + N - 1.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// First episode seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Episode length in seconds; the config's duration when omitted.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory for reports (and traces with --trace).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write trace-<seed>.log per episode into --out.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file path, or a built-in kind name (home, office, mall).
    #[arg(long)]
    scenario: String,
    /// Seed used when --scenario names a built-in kind.
    #[arg(long, default_value_t = 1)]
    scenario_seed: u64,
    /// Master seed for initialization, rollouts, and exploration.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Environment-step budget.
    #[arg(long, default_value_t = 200_000)]
    steps: u64,
    /// Rollout episode length in seconds.
    #[arg(long, default_value_t = 2.0)]
    rollout_secs: f64,
    /// Greedy evaluation cadence, in rollouts.
    #[arg(long, default_value_t = 8)]
    eval_every: usize,
    /// Episodes per greedy evaluation.
    #[arg(long, default_value_t = 3)]
    eval_episodes: u64,
    /// Greedy evaluation episode length in seconds.
    #[arg(long, default_value_t = 2.0)]
    eval_secs: f64,
    /// Output directory for best.ckpt and curve.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace log written by eval --trace.
    trace: PathBuf,
}

/// Post-parse failures, split by exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

impl From<aimac_core::SimError> for Failure {
    fn from(e: aimac_core::SimError) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Writes to stdout, treating a closed pipe as the consumer being done
/// rather than a failure, so `aimac replay ... | head` succeeds quietly.
fn emit(text: std::fmt::Arguments) -> Result<(), Failure> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_fmt(text).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print to stdout and succeed; real parse
            // errors print to stderr and exit 1.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Scenario { command: ScenarioCmd::Gen(a) } => cmd_scenario_gen(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Train(a) => cmd_train(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn load_scenario(arg: &str, scenario_seed: u64) -> Result<ScenarioConfig, Failure> {
    if let Some(kind) = ScenarioKind::from_name(arg) {
        return build_scenario(kind, scenario_seed)
            .map_err(|e| usage(format!("--scenario {arg}: {e}")));
    }
    let path = Path::new(arg);
    if path.exists() {
        return Ok(ScenarioConfig::load(path)?);
    }
    Err(usage(format!(
        "--scenario {arg}: neither a built-in kind (home, office, mall) nor a config file"
    )))
}

fn build_cli_policy(name: &str, checkpoint: Option<&Path>) -> Result<EpisodePolicy, Failure> {
    match name {
        "baseline" => {
            if checkpoint.is_some() {
                return Err(usage("--checkpoint is only meaningful with --policy aimac"));
            }
            Ok(EpisodePolicy::Baseline)
        }
        "aimac" => {
            let path = checkpoint.ok_or_else(|| usage("--policy aimac requires --checkpoint"))?;
            let nets = load_policy(path)?;
            Ok(EpisodePolicy::Aimac { nets, epsilon: 0.0 })
        }
        other => Err(usage(format!("--policy {other}: expected baseline or aimac"))),
    }
}

fn secs_to_us(secs: f64) -> Result<u64, Failure> {
    if !secs.is_finite() || secs <= 0.0 || secs > 86_400.0 {
        return Err(usage(format!("duration {secs}: expected seconds in (0, 86400]")));
    }
    Ok((secs * 1e6).round() as u64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn cmd_scenario_gen(a: ScenarioGenArgs) -> Result<(), Failure> {
    let kind = ScenarioKind::from_name(&a.kind)
        .filter(|k| *k != ScenarioKind::Custom)
        .ok_or_else(|| usage(format!("scenario kind {}: expected home, office, or mall", a.kind)))?;
    let config = build_scenario(kind, a.seed)?;
    let text = config.to_toml_string()?;
    match &a.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{}.toml", kind.name()));
            std::fs::write(&path, &text)?;
            emit(format_args!("{}\n", path.display()))?;
        }
        None => emit(format_args!("{text}"))?,
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let config = load_scenario(&a.scenario, a.scenario_seed)?;
    let policy = build_cli_policy(&a.policy, a.checkpoint.as_deref())?;
    let duration_us = a.duration.map(secs_to_us).transpose()?;
    std::fs::create_dir_all(&a.out)?;

    let report = if a.trace {
        // Tracing runs serially so each episode owns its log file.
        let mut episodes = Vec::with_capacity(a.seeds as usize);
        for i in 0..a.seeds {
            let seed = a.seed + i;
            let target = TraceTarget::File(a.out.join(format!("trace-{seed}.log")));
            episodes.push(run_episode(&config, &policy, seed, duration_us, target)?.metrics);
        }
        EvalReport {
            policy: policy.name().to_string(),
            scenario: config.kind.name().to_string(),
            episodes,
        }
    } else {
        let opts = EvalOptions { episodes: a.seeds, seed_base: a.seed, duration_us };
        evaluate(&config, &policy, &opts)?
    };

    std::fs::write(a.out.join("report.csv"), report.to_csv())?;
    std::fs::write(a.out.join("report.json"), report.to_json() + "\n")?;
    let agg = report.aggregate();
    emit(format_args!(
        "{} on {} ({} episodes): latency {} ms, jitter {} ms, loss {}, tail {}\n",
        report.policy,
        report.scenario,
        agg.episodes,
        fmt_opt(agg.latency_ms),
        fmt_opt(agg.jitter_ms),
        fmt_opt(agg.loss_rate),
        fmt_opt(agg.tail_prob)
    ))?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let config = load_scenario(&a.scenario, a.scenario_seed)?;
    std::fs::create_dir_all(&a.out)?;
    let opts = TrainOptions {
        master_seed: a.seed,
        total_env_steps: a.steps,
        rollout_duration_us: secs_to_us(a.rollout_secs)?,
        eval_every: a.eval_every,
        eval_episodes: a.eval_episodes,
        eval_duration_us: secs_to_us(a.eval_secs)?,
        checkpoint: Some(a.out.join("best.ckpt")),
        curve: Some(a.out.join("curve.csv")),
    };
    let result = train(&config, TrainConfig::default(), &opts)?;
    emit(format_args!(
        "trained {} episodes / {} env steps; best eval score {}\n",
        result.episodes,
        result.env_steps,
        fmt_opt(result.best_score)
    ))?;
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.trace)?;
    let (_, metrics) = replay_metrics(&text)?;
    emit(format_args!(
        "{}\n",
        serde_json::to_string_pretty(&metrics).expect("metrics serialization cannot fail")
    ))?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seconds_convert_and_validate() {
        assert_eq!(secs_to_us(15.0).unwrap(), 15_000_000);
        assert_eq!(secs_to_us(0.5).unwrap(), 500_000);
        assert!(matches!(secs_to_us(0.0), Err(Failure::Usage(_))));
        assert!(matches!(secs_to_us(-1.0), Err(Failure::Usage(_))));
        assert!(matches!(secs_to_us(f64::NAN), Err(Failure::Usage(_))));
    }

    #[test]
    fn scenario_arg_resolves_kinds_and_rejects_junk() {
        assert_eq!(load_scenario("home", 1).unwrap().kind, ScenarioKind::Home);
        assert!(matches!(load_scenario("custom", 1), Err(Failure::Usage(_))));
        assert!(matches!(load_scenario("no-such-thing", 1), Err(Failure::Usage(_))));
    }

    #[test]
    fn policy_arg_enforces_checkpoint_pairing() {
        assert!(matches!(build_cli_policy("baseline", None), Ok(EpisodePolicy::Baseline)));
        assert!(matches!(build_cli_policy("aimac", None), Err(Failure::Usage(_))));
        assert!(matches!(
            build_cli_policy("baseline", Some(Path::new("x.ckpt"))),
            Err(Failure::Usage(_))
        ));
        assert!(matches!(build_cli_policy("dcf", None), Err(Failure::Usage(_))));
    }
}
