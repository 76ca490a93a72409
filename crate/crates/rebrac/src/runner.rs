//! Training and evaluation of agents on offline datasets, one run per seed,
//! with seed-level parallelism.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rebrac_core::agent::GreedyPolicy;
use rebrac_core::dataset::OfflineDataset;
use rebrac_core::envs::{normalized_score, rollout, AnyEnv, EnvKind, Policy, RefScores};
use rebrac_core::{AgentConfig, AgentState};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::error::{Error, Result};
use crate::tables::{self, MetricsRow};

/// Seed of the evaluation episodes for a run; fixed across evaluations so
/// that learning curves compare like with like.
pub fn eval_seed(run_seed: u64) -> u64 {
    run_seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(0xE7A1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub normalized_score: f64,
}

impl EvalSummary {
    pub fn from_returns(returns: Vec<f64>, refs: &RefScores) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
        Ok(EvalSummary {
            episodes: returns.len(),
            normalized_score: normalized_score(mean_return, refs),
            mean_return,
            returns,
        })
    }
}

/// Returns of `episodes` evaluation episodes of `policy` on a fresh `env`.
pub fn evaluate_policy<P: Policy + ?Sized>(
    env: EnvKind,
    policy: &mut P,
    episodes: usize,
    seed: u64,
    refs: &RefScores,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Config("eval_episodes must be at least 1".into()));
    }
    let returns = rollout(&mut AnyEnv::new(env), policy, seed, episodes)?;
    EvalSummary::from_returns(returns, refs)
}

/// Deterministic-actor evaluation of a trained agent.
pub fn evaluate_agent(
    agent: &AgentState<f32>,
    cfg: &AgentConfig,
    env: EnvKind,
    state_stats: Option<(&[f32], &[f32])>,
    episodes: usize,
    seed: u64,
    refs: &RefScores,
) -> Result<EvalSummary> {
    let mut policy = GreedyPolicy {
        agent,
        cfg,
        state_stats: if cfg.state_normalization { state_stats } else { None },
    };
    evaluate_policy(env, &mut policy, episodes, seed, refs)
}

pub fn evaluate_checkpoint(ck: &Checkpoint, episodes: usize, seed: u64, refs: &RefScores) -> Result<EvalSummary> {
    let stats = ck.state_stats.as_ref().map(|(m, s)| (m.as_slice(), s.as_slice()));
    evaluate_agent(&ck.agent, &ck.config, ck.env, stats, episodes, seed, refs)
}

/// What one training run needs besides its seed.
#[derive(Debug, Clone)]
pub struct TrainSpec<'a> {
    pub env: EnvKind,
    pub agent: &'a AgentConfig,
    pub dataset: &'a OfflineDataset,
    pub refs: &'a RefScores,
    pub steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Keep one metrics row per step; otherwise only evaluation rows.
    pub record_every_step: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub metrics: Vec<MetricsRow>,
    pub final_eval: EvalSummary,
    pub checkpoint: Checkpoint,
}

pub fn train_seed(spec: &TrainSpec, seed: u64) -> Result<RunResult> {
    spec.agent.validate()?;
    if spec.eval_episodes == 0 {
        return Err(Error::Config("eval_episodes must be at least 1".into()));
    }
    let ds = spec.dataset;
    if ds.meta.env != spec.env {
        return Err(Error::Config(format!(
            "dataset was collected on {} but the run targets {}",
            ds.meta.env.name(),
            spec.env.name()
        )));
    }
    let stats = (ds.meta.state_mean.as_slice(), ds.meta.state_std.as_slice());
    let mut agent = AgentState::<f32>::new(spec.agent, seed)?;
    let mut metrics = Vec::new();
    let mut last_eval = None;
    for step in 1..=spec.steps {
        let m = agent.train_step(spec.agent, ds)?;
        let evaluate = step == spec.steps || (spec.eval_every > 0 && step % spec.eval_every == 0);
        let eval_return = if evaluate {
            let e = evaluate_agent(&agent, spec.agent, spec.env, Some(stats), spec.eval_episodes, eval_seed(seed), spec.refs)?;
            let r = e.mean_return;
            last_eval = Some(e);
            Some(r)
        } else {
            None
        };
        if spec.record_every_step || evaluate {
            metrics.push(MetricsRow {
                step: m.step,
                critic_loss: m.critic_loss,
                actor_loss: m.actor.map(|a| a.loss),
                q_mean: m.q_mean,
                bc_mse: m.actor.map(|a| a.bc_mse),
                eval_return,
            });
        }
    }
    let final_eval = last_eval.ok_or_else(|| Error::Config("train.steps must be at least 1".into()))?;
    Ok(RunResult {
        seed,
        metrics,
        final_eval,
        checkpoint: Checkpoint {
            config: spec.agent.clone(),
            env: spec.env,
            state_stats: Some((ds.meta.state_mean.clone(), ds.meta.state_std.clone())),
            agent,
        },
    })
}

/// Per-seed output files under `dir/seed_<seed>/`.
pub fn write_run(dir: &Path, run: &RunResult) -> Result<PathBuf> {
    let d = dir.join(format!("seed_{}", run.seed));
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    checkpoint::save(&run.checkpoint, &d.join("checkpoint.rbac"))?;
    tables::write_rows(&d.join("metrics.csv"), &run.metrics)?;
    let eval = d.join("eval.json");
    fs::write(&eval, serde_json::to_string_pretty(&run.final_eval)? + "\n").map_err(|e| Error::io(&eval, e))?;
    Ok(d)
}

/// Runs `task(i)` for `i in 0..n` on up to `jobs` threads; results keep
/// index order.
pub fn run_parallel<T, F>(n: usize, jobs: usize, task: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(task).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = task(i);
                *slots[i].lock().expect("no panics while holding the lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("no poisoned slots").expect("every index ran"))
        .collect()
}

/// Seed mean and population std of final normalised scores.
pub fn score_summary(runs: &[RunResult]) -> (f64, f64) {
    let s: Vec<f64> = runs.iter().map(|r| r.final_eval.normalized_score).collect();
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / s.len() as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rebrac_core::dataset::{generate, BehaviorPolicy};
    use rebrac_core::envs::{ReachEnv, ScriptedPolicy};

    use crate::config::{desk_agent, Algorithm};
    use crate::refs;

    #[test]
    fn parallel_results_keep_order() {
        let out = run_parallel(9, 3, |i| Ok(i * i));
        let v: Vec<usize> = out.into_iter().map(|r| r.unwrap()).collect();
        assert_eq!(v, (0..9).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn expert_wrapper_scores_one_hundred() {
        for env in [EnvKind::Reach, EnvKind::Maze] {
            let r = refs::pinned(env);
            let e = evaluate_policy(env, &mut ScriptedPolicy::expert(), 50, 11, &r).unwrap();
            assert!((e.normalized_score - 100.0).abs() < 15.0, "{}: {}", env.name(), e.normalized_score);
        }
    }

    #[test]
    fn short_run_counts_actor_updates() {
        let ds = generate(&mut ReachEnv::default(), &BehaviorPolicy::medium(), "medium", 400, 0).unwrap();
        let mut cfg = desk_agent(EnvKind::Reach, Algorithm::ReBrac).with_width(8);
        cfg.batch_size = 32;
        let r = refs::pinned(EnvKind::Reach);
        let spec = TrainSpec {
            env: EnvKind::Reach,
            agent: &cfg,
            dataset: &ds,
            refs: &r,
            steps: 100,
            eval_every: 0,
            eval_episodes: 1,
            record_every_step: true,
        };
        let run = train_seed(&spec, 0).unwrap();
        assert_eq!(run.metrics.len(), 100);
        assert_eq!(run.metrics.iter().filter(|m| m.actor_loss.is_some()).count(), 50);
        assert_eq!(run.checkpoint.agent.actor_updates, 50);
        assert!(run.metrics[99].eval_return.is_some());

        let spec0 = TrainSpec { eval_episodes: 0, ..spec.clone() };
        assert!(train_seed(&spec0, 0).is_err());
        let wrong_env = TrainSpec { env: EnvKind::Maze, ..spec };
        assert!(train_seed(&wrong_env, 0).is_err());
    }
}
