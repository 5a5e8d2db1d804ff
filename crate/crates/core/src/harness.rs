//! Drivers: multi-seed evaluation sweeps and the training loop.

use std::path::PathBuf;

use crate::checkpoint::save_learner;
use crate::env::ScenarioConfig;
use crate::error::Result;
use crate::metrics::{AggregateMetrics, EpisodeMetrics, EvalReport};
use crate::qmix::{epsilon_at, QmixLearner, ReplayBuffer, TrainConfig};
use crate::rng::RngStreams;
use crate::world::{run_episode, EpisodePolicy, EpisodeOutcome, TraceTarget};

/// Thread-count override for evaluation sweeps.
pub const THREADS_ENV: &str = "AIMAC_THREADS";

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Number of episodes; seeds run `seed_base..seed_base + episodes`.
    pub episodes: u64,
    pub seed_base: u64,
    pub duration_us: Option<u64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { episodes: 10, seed_base: 1, duration_us: None }
    }
}

fn worker_count(jobs: usize) -> usize {
    let configured = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
    let fallback =
        std::thread::available_parallelism().map(std::num::NonZeroUsize::get).unwrap_or(1);
    configured.unwrap_or(fallback).clamp(1, jobs.max(1))
}

/// Runs one episode per seed and collects the per-episode metrics, in seed
/// order regardless of scheduling.
pub fn evaluate(
    config: &ScenarioConfig,
    policy: &EpisodePolicy,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let seeds: Vec<u64> = (0..opts.episodes).map(|i| opts.seed_base + i).collect();
    let workers = worker_count(seeds.len());
    let mut slots: Vec<Option<Result<EpisodeMetrics>>> = Vec::new();
    slots.resize_with(seeds.len(), || None);

    if workers <= 1 {
        for (slot, &seed) in slots.iter_mut().zip(&seeds) {
            *slot = Some(
                run_episode(config, policy, seed, opts.duration_us, TraceTarget::Off)
                    .map(|o| o.metrics),
            );
        }
    } else {
        let jobs: Vec<(usize, u64)> = seeds.iter().copied().enumerate().collect();
        let chunks: Vec<&[(usize, u64)]> = jobs.chunks(jobs.len().div_ceil(workers)).collect();
        let mut results: Vec<(usize, Result<EpisodeMetrics>)> = Vec::with_capacity(jobs.len());
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| {
                    scope.spawn(move || {
                        chunk
                            .iter()
                            .map(|&(idx, seed)| {
                                let r = run_episode(
                                    config,
                                    policy,
                                    seed,
                                    opts.duration_us,
                                    TraceTarget::Off,
                                )
                                .map(|o| o.metrics);
                                (idx, r)
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                results.extend(h.join().expect("evaluation worker panicked"));
            }
        });
        for (idx, r) in results {
            slots[idx] = Some(r);
        }
    }

    let mut episodes = Vec::with_capacity(slots.len());
    for slot in slots {
        episodes.push(slot.expect("every seed ran")?);
    }
    Ok(EvalReport {
        policy: policy.name().to_string(),
        scenario: config.kind.name().to_string(),
        episodes,
    })
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub env_steps: u64,
    /// Mean optimizer loss over the round; absent until learning starts.
    pub loss: Option<f64>,
    pub epsilon: f64,
    /// Mean transition reward of the rollout that fed this round.
    pub mean_r_tot: f64,
}

pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,loss,epsilon,mean_r_tot\n");
    for p in curve {
        let loss = p.loss.map(|l| format!("{l:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            p.env_steps, loss, p.epsilon, p.mean_r_tot
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub master_seed: u64,
    /// Exploration-step budget: training stops once the policy has made
    /// this many access decisions across all rollouts.
    pub total_env_steps: u64,
    /// Length of each training rollout.
    pub rollout_duration_us: u64,
    /// Greedy evaluation cadence, in rollouts.
    pub eval_every: usize,
    pub eval_episodes: u64,
    pub eval_duration_us: u64,
    /// Where the best-so-far parameters go; written on every improvement.
    pub checkpoint: Option<PathBuf>,
    /// Where the training curve goes, one row per rollout.
    pub curve: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            master_seed: 1,
            total_env_steps: 200_000,
            rollout_duration_us: 2_000_000,
            eval_every: 8,
            eval_episodes: 3,
            eval_duration_us: 2_000_000,
            checkpoint: None,
            curve: None,
        }
    }
}

#[derive(Debug)]
pub struct TrainResult {
    pub learner: QmixLearner,
    pub env_steps: u64,
    pub episodes: usize,
    pub curve: Vec<CurvePoint>,
    pub best_score: Option<f64>,
    pub best_eval: Option<AggregateMetrics>,
}

/// Lower is better: mean latency plus heavy penalties for loss and tail
/// mass, so a checkpoint cannot win by dropping traffic.
pub fn eval_score(agg: &AggregateMetrics) -> f64 {
    let latency = agg.latency_ms.unwrap_or(1e6);
    let loss = agg.loss_rate.unwrap_or(1.0);
    let tail = agg.tail_prob.unwrap_or(1.0);
    latency + 1000.0 * loss + 100.0 * tail
}

/// Seeds used by in-training greedy evaluations. Kept away from the
/// reporting seed range so training never tunes on report seeds.
const TRAIN_EVAL_SEED_BASE: u64 = 900_001;

/// Alternates rollouts under the current policy with replay updates,
/// evaluating greedily between rounds and keeping the best parameters.
pub fn train(
    config: &ScenarioConfig,
    train_cfg: TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainResult> {
    let streams = RngStreams::new(opts.master_seed);
    let mut learner = QmixLearner::new(train_cfg, &mut streams.stream("init"));
    let mut replay = ReplayBuffer::new(train_cfg.replay_capacity);
    let mut sample_rng = streams.stream("replay-sample");

    let mut env_steps = 0u64;
    let mut episodes = 0usize;
    let mut curve = Vec::new();
    let mut best_score: Option<f64> = None;
    let mut best_eval: Option<AggregateMetrics> = None;

    while env_steps < opts.total_env_steps {
        let epsilon = epsilon_at(&train_cfg, env_steps);
        let policy = EpisodePolicy::Aimac { nets: learner.policy(), epsilon };
        let rollout_seed = opts.master_seed.wrapping_mul(100_000).wrapping_add(episodes as u64);
        let out: EpisodeOutcome = run_episode(
            config,
            &policy,
            rollout_seed,
            Some(opts.rollout_duration_us),
            TraceTarget::Off,
        )?;
        episodes += 1;
        env_steps += out.env_steps;
        let new_experiences = out.experiences.len();
        let mean_r_tot = if new_experiences == 0 {
            0.0
        } else {
            out.experiences.iter().map(|e| e.reward).sum::<f64>() / new_experiences as f64
        };
        for e in out.experiences {
            replay.push(e);
        }

        let mut loss_sum = 0.0;
        let mut loss_rounds = 0usize;
        if replay.len() >= train_cfg.learn_start {
            let updates =
                (new_experiences as f64 * train_cfg.td_steps_per_experience).ceil() as usize;
            for _ in 0..updates {
                let batch = replay.sample(train_cfg.batch_size, &mut sample_rng);
                loss_sum += learner.td_step(&batch)?;
                loss_rounds += 1;
            }
        }
        curve.push(CurvePoint {
            env_steps,
            loss: (loss_rounds > 0).then(|| loss_sum / loss_rounds as f64),
            epsilon,
            mean_r_tot,
        });

        let finished = env_steps >= opts.total_env_steps;
        if episodes % opts.eval_every.max(1) == 0 || finished {
            let greedy = EpisodePolicy::Aimac { nets: learner.policy(), epsilon: 0.0 };
            let report = evaluate(
                config,
                &greedy,
                &EvalOptions {
                    episodes: opts.eval_episodes,
                    seed_base: TRAIN_EVAL_SEED_BASE,
                    duration_us: Some(opts.eval_duration_us),
                },
            )?;
            let agg = report.aggregate();
            let score = eval_score(&agg);
            if best_score.is_none_or(|b| score < b) {
                best_score = Some(score);
                best_eval = Some(agg);
                if let Some(path) = &opts.checkpoint {
                    save_learner(path, &learner)?;
                }
            }
        }
    }

    if let Some(path) = &opts.curve {
        std::fs::write(path, curve_to_csv(&curve))?;
    }
    // A checkpoint must exist even if no evaluation round improved on the
    // first; the first round always sets one, but guard the degenerate
    // zero-budget case.
    if let Some(path) = &opts.checkpoint {
        if best_score.is_none() {
            save_learner(path, &learner)?;
        }
    }

    Ok(TrainResult { learner, env_steps, episodes, curve, best_score, best_eval })
}

// ---------------------------------------------------------------------------
