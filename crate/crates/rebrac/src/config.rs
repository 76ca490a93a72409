//! Run configuration: per-environment profiles plus flat dotted-key
//! overrides from JSON files and `--set key=value` flags.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rebrac_core::envs::{EnvKind, ACTION_DIM, MAX_ACTION, STATE_DIM};
use rebrac_core::AgentConfig;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Training steps of the desk-scale protocol.
pub const DESK_STEPS: u64 = 50_000;
pub const DESK_SEEDS: [u64; 4] = [0, 1, 2, 3];
/// Transitions in a desk-scale dataset.
pub const DESK_DATASET_SIZE: usize = 20_000;
/// Hidden width of the desk-scale networks.
pub const DESK_WIDTH: usize = 32;

pub const PAPER_STEPS: u64 = 1_000_000;
pub const PAPER_WIDTH: usize = 256;

/// Actor penalty grid of the sensitivity sweep.
pub const SWEEP_BETA1: [f64; 4] = [0.001, 0.01, 0.05, 0.1];
/// Critic penalty grid of the sensitivity sweep.
pub const SWEEP_BETA2: [f64; 5] = [0.0, 0.001, 0.01, 0.1, 0.5];
/// TD3+BC sweeps its single coefficient over the actor grid plus its default.
pub const SWEEP_TD3BC_BETA1: [f64; 5] = [0.001, 0.01, 0.05, 0.1, 0.4];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    ReBrac,
    Td3Bc,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ReBrac => "rebrac",
            Algorithm::Td3Bc => "td3bc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rebrac" => Some(Algorithm::ReBrac),
            "td3bc" | "td3+bc" => Some(Algorithm::Td3Bc),
            _ => None,
        }
    }
}

/// Agent hyperparameters of the desk-scale profile for `env`.
pub fn desk_agent(env: EnvKind, algorithm: Algorithm) -> AgentConfig {
    let mut cfg = match algorithm {
        Algorithm::ReBrac => AgentConfig::new(STATE_DIM, ACTION_DIM, MAX_ACTION),
        Algorithm::Td3Bc => AgentConfig::td3_bc(STATE_DIM, ACTION_DIM, MAX_ACTION, 0.4),
    }
    .with_width(DESK_WIDTH);
    cfg.batch_size = 256;
    match (env, algorithm) {
        (env, Algorithm::ReBrac) => {
            cfg.gamma = if env == EnvKind::Maze { 0.999 } else { 0.99 };
            cfg.actor_lr = 1e-3;
            cfg.critic_lr = 1e-3;
            cfg.beta1_actor = 1.0;
            cfg.beta2_critic = 0.01;
        }
        (_, Algorithm::Td3Bc) => {
            cfg.gamma = 0.99;
            cfg.actor_lr = 3e-4;
            cfg.critic_lr = 3e-4;
        }
    }
    cfg
}

/// `(β₁, β₂)` pairs of the sensitivity sweep for `algorithm`.
pub fn sweep_grid(algorithm: Algorithm) -> Vec<(f64, f64)> {
    match algorithm {
        Algorithm::ReBrac => SWEEP_BETA1
            .iter()
            .flat_map(|&b1| SWEEP_BETA2.iter().map(move |&b2| (b1, b2)))
            .collect(),
        Algorithm::Td3Bc => SWEEP_TD3BC_BETA1.iter().map(|&b1| (b1, 0.0)).collect(),
    }
}

/// The large-scale protocol: width 256, batch 1024 on the dense task.
pub fn paper_agent(env: EnvKind, algorithm: Algorithm) -> AgentConfig {
    let mut cfg = desk_agent(env, algorithm).with_width(PAPER_WIDTH);
    if env == EnvKind::Reach && algorithm == Algorithm::ReBrac {
        cfg.batch_size = 1024;
    }
    cfg
}

/// Evaluation episodes per checkpoint; the sparse task needs more.
pub fn default_eval_episodes(env: EnvKind, paper_protocol: bool) -> usize {
    match (env, paper_protocol) {
        (EnvKind::Reach, _) => 10,
        (EnvKind::Maze, false) => 20,
        (EnvKind::Maze, true) => 100,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub algorithm: Algorithm,
    pub dataset: PathBuf,
    pub agent: AgentConfig,
    pub train_steps: u64,
    /// Evaluate every this many steps; 0 evaluates only at the end.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn desk(env: EnvKind, algorithm: Algorithm, dataset: PathBuf) -> Self {
        RunConfig {
            env,
            algorithm,
            dataset,
            agent: desk_agent(env, algorithm),
            train_steps: DESK_STEPS,
            eval_every: 5_000,
            eval_episodes: default_eval_episodes(env, false),
            seeds: DESK_SEEDS.to_vec(),
            out_dir: PathBuf::from("runs"),
        }
    }

    pub fn paper(env: EnvKind, algorithm: Algorithm, dataset: PathBuf) -> Self {
        RunConfig {
            agent: paper_agent(env, algorithm),
            train_steps: PAPER_STEPS,
            eval_every: 50_000,
            eval_episodes: default_eval_episodes(env, true),
            seeds: (0..10).collect(),
            ..Self::desk(env, algorithm, dataset)
        }
    }

    /// The resolved configuration as a flat JSON object, written next to
    /// run outputs.
    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "env": self.env.name(),
            "algorithm": self.algorithm.name(),
            "dataset": self.dataset,
            "out_dir": self.out_dir,
            "train.steps": self.train_steps,
            "train.eval_every": self.eval_every,
            "train.eval_episodes": self.eval_episodes,
            "train.seeds": self.seeds,
            "agent": self.agent,
        })
    }

    /// Applies one dotted-key override.
    pub fn set(&mut self, key: &str, value: &Value) -> Result<()> {
        let a = &mut self.agent;
        match key {
            "dataset" => self.dataset = PathBuf::from(as_str(key, value)?),
            "out_dir" => self.out_dir = PathBuf::from(as_str(key, value)?),
            "train.steps" => self.train_steps = as_u64(key, value)?,
            "train.eval_every" => self.eval_every = as_u64(key, value)?,
            "train.eval_episodes" => self.eval_episodes = as_u64(key, value)? as usize,
            "train.seeds" => {
                self.seeds = value
                    .as_array()
                    .ok_or_else(|| bad(key, "a list of integers"))?
                    .iter()
                    .map(|v| as_u64(key, v))
                    .collect::<Result<_>>()?
            }
            "agent.gamma" => a.gamma = as_f64(key, value)?,
            "agent.tau" => a.tau = as_f64(key, value)?,
            "agent.beta1_actor" => a.beta1_actor = as_f64(key, value)?,
            "agent.beta2_critic" => a.beta2_critic = as_f64(key, value)?,
            "agent.batch_size" => a.batch_size = as_u64(key, value)? as usize,
            "agent.lr" => {
                a.actor_lr = as_f64(key, value)?;
                a.critic_lr = a.actor_lr;
            }
            "agent.actor_lr" => a.actor_lr = as_f64(key, value)?,
            "agent.critic_lr" => a.critic_lr = as_f64(key, value)?,
            "agent.policy_noise" => a.policy_noise = as_f64(key, value)?,
            "agent.noise_clip" => a.noise_clip = as_f64(key, value)?,
            "agent.policy_delay" => a.policy_delay = as_u64(key, value)?,
            "agent.q_normalization" => a.q_normalization = as_bool(key, value)?,
            "agent.state_normalization" => a.state_normalization = as_bool(key, value)?,
            "agent.hidden_width" => {
                let w = as_u64(key, value)? as usize;
                *a = a.clone().with_width(w);
            }
            "agent.actor_depth" => a.actor = a.actor.clone().with_depth(as_u64(key, value)? as usize),
            "agent.critic_depth" => a.critic = a.critic.clone().with_depth(as_u64(key, value)? as usize),
            "agent.actor_layer_norm" => a.actor.layer_norm = as_bool(key, value)?,
            "agent.critic_layer_norm" => a.critic.layer_norm = as_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every key of a flat JSON object. `env` and `algorithm` are
    /// handled by the caller because they select the profile.
    pub fn apply_map(&mut self, map: &Map<String, Value>) -> Result<()> {
        for (k, v) in map {
            if k == "env" || k == "algorithm" {
                continue;
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies a `key=value` flag; the value is parsed as JSON and falls back
    /// to a plain string.
    pub fn apply_flag(&mut self, flag: &str) -> Result<()> {
        let (k, v) = flag
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {flag:?}")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
        self.set(k.trim(), &value)
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        if self.train_steps == 0 {
            return Err(Error::Config("train.steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Reads a flat JSON config file into a map.
pub fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match serde_json::from_str(&text)? {
        Value::Object(map) => Ok(map),
        _ => Err(Error::Config(format!("{}: expected a JSON object", path.display()))),
    }
}

fn bad(key: &str, what: &str) -> Error {
    Error::Config(format!("{key} expects {what}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| bad(key, "a number"))
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    v.as_u64().ok_or_else(|| bad(key, "a non-negative integer"))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, "true or false"))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, "a string"))
}
