//! Offline transition datasets: generation with scripted behaviour policies,
//! state statistics and uniform minibatch sampling.
//!
//! Storage is columnar `f32`. Each row carries the dataset's next action
//! `â'`; at the last row of an episode `â'` is the row's own action.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{AgentRng, Batch, BatchSampler};
use crate::envs::{Env, EnvKind, Policy, ScriptedPolicy, State, UniformPolicy};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Lower bound applied to every per-dimension state std.
pub const STD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum BehaviorPolicy {
    UniformRandom,
    PController { skill: f64, noise_sigma: f64 },
    /// One component is drawn per episode with the given probabilities.
    Mixture { components: Vec<(BehaviorPolicy, f64)> },
}

impl BehaviorPolicy {
    pub fn expert() -> Self {
        BehaviorPolicy::PController {
            skill: 1.0,
            noise_sigma: 0.05,
        }
    }

    pub fn medium() -> Self {
        BehaviorPolicy::PController {
            skill: 0.5,
            noise_sigma: 0.3,
        }
    }

    /// Random, medium and expert episodes mixed 30/40/30.
    pub fn replay() -> Self {
        BehaviorPolicy::Mixture {
            components: alloc::vec![
                (BehaviorPolicy::UniformRandom, 0.3),
                (BehaviorPolicy::medium(), 0.4),
                (BehaviorPolicy::expert(), 0.3),
            ],
        }
    }

    /// Named presets: `random`, `medium`, `expert`, `replay`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "random" => Some(BehaviorPolicy::UniformRandom),
            "medium" => Some(Self::medium()),
            "expert" => Some(Self::expert()),
            "replay" => Some(Self::replay()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BehaviorPolicy::UniformRandom => Ok(()),
            BehaviorPolicy::PController { skill, noise_sigma } => {
                if (0.0..=1.0).contains(skill) && *noise_sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig("skill must be in [0, 1] and noise non-negative".into()))
                }
            }
            BehaviorPolicy::Mixture { components } => {
                let total: f64 = components.iter().map(|(_, w)| *w).sum();
                if components.is_empty() || (total - 1.0).abs() > 1e-9 || components.iter().any(|(_, w)| *w < 0.0) {
                    return Err(Error::InvalidConfig("mixture weights must be non-negative and sum to 1".into()));
                }
                components.iter().try_for_each(|(p, _)| p.validate())
            }
        }
    }

    /// Resolves mixtures to a concrete per-episode policy.
    fn instantiate(&self, rng: &mut ChaCha8Rng, seed: u64) -> EpisodePolicy {
        match self {
            BehaviorPolicy::UniformRandom => EpisodePolicy::Uniform(UniformPolicy::new(seed)),
            BehaviorPolicy::PController { skill, noise_sigma } => {
                EpisodePolicy::Scripted(ScriptedPolicy::new(*skill, *noise_sigma, seed))
            }
            BehaviorPolicy::Mixture { components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (p, w) in components {
                    acc += w;
                    if u < acc {
                        return p.instantiate(rng, seed);
                    }
                }
                components.last().expect("validated non-empty").0.instantiate(rng, seed)
            }
        }
    }
}

enum EpisodePolicy {
    Uniform(UniformPolicy),
    Scripted(ScriptedPolicy),
}

impl Policy for EpisodePolicy {
    fn act(&mut self, env: &dyn Env, state: &State) -> [f64; 2] {
        match self {
            EpisodePolicy::Uniform(p) => p.act(env, state),
            EpisodePolicy::Scripted(p) => p.act(env, state),
        }
    }

    fn reset(&mut self, seed: u64) {
        match self {
            EpisodePolicy::Uniform(p) => p.reset(seed),
            EpisodePolicy::Scripted(p) => p.reset(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetMeta {
    pub env: EnvKind,
    pub policy_id: String,
    pub policy: BehaviorPolicy,
    pub size: u64,
    pub seed: u64,
    pub state_mean: Vec<f32>,
    pub state_std: Vec<f32>,
    /// Exclusive end row of every episode, ascending; the last equals `size`.
    pub episode_ends: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_states: Vec<f32>,
    pub next_actions: Vec<f32>,
    /// 1 where the transition ends in a true terminal state.
    pub dones: Vec<u8>,
    pub meta: DatasetMeta,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f32] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f32] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn next_action(&self, i: usize) -> &[f32] {
        &self.next_actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    /// Column lengths agree and every episode chains `â'` correctly.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let (s, a) = (self.state_dim, self.action_dim);
        let lens = [
            (self.states.len(), n * s),
            (self.next_states.len(), n * s),
            (self.actions.len(), n * a),
            (self.next_actions.len(), n * a),
            (self.dones.len(), n),
            (self.meta.state_mean.len(), s),
            (self.meta.state_std.len(), s),
        ];
        for (got, want) in lens {
            if got != want {
                return Err(Error::shape("dataset column", want, got));
            }
        }
        if self.meta.size != n as u64 || self.meta.episode_ends.last() != Some(&(n as u64)) {
            return Err(Error::InvalidConfig("dataset meta does not match its columns".into()));
        }
        Ok(())
    }

    /// Recomputes mean and std and stores them in the metadata.
    pub fn refresh_stats(&mut self) -> Result<()> {
        let (mean, std) = state_stats(&self.states, self.state_dim)?;
        self.meta.state_mean = mean.iter().map(|&v| v as f32).collect();
        self.meta.state_std = std.iter().map(|&v| v as f32).collect();
        Ok(())
    }

    /// Applies the stored normalisation to one state.
    pub fn normalize_state(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.meta.state_mean.iter().zip(&self.meta.state_std))
            .map(|(&v, (&m, &sd))| (v - m as f64) / sd as f64)
            .collect()
    }

    /// Gathers rows into a batch, optionally normalising both state columns.
    pub fn gather<T: Real>(&self, idx: &[usize], normalize_states: bool) -> Result<Batch<T>> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let b = idx.len();
        let (sd, ad) = (self.state_dim, self.action_dim);
        let pick = |col: &[f32], width: usize, norm: bool| -> Result<Tensor<T>> {
            let mut out = Vec::with_capacity(b * width);
            for &i in idx {
                let row = &col[i * width..(i + 1) * width];
                if norm {
                    for (j, &v) in row.iter().enumerate() {
                        let z = (v as f64 - self.meta.state_mean[j] as f64) / self.meta.state_std[j] as f64;
                        out.push(T::from_f64(z));
                    }
                } else {
                    out.extend(row.iter().map(|&v| T::from_f64(v as f64)));
                }
            }
            Tensor::matrix(b, width, out)
        };
        Ok(Batch {
            states: pick(&self.states, sd, normalize_states)?,
            actions: pick(&self.actions, ad, false)?,
            rewards: Tensor::vector(idx.iter().map(|&i| T::from_f64(self.rewards[i] as f64)).collect()),
            next_states: pick(&self.next_states, sd, normalize_states)?,
            next_actions: pick(&self.next_actions, ad, false)?,
            dones: Tensor::vector(idx.iter().map(|&i| T::from_f64(self.dones[i] as f64)).collect()),
        })
    }
}

/// `batch_size` i.i.d. uniform row indices in `0..n`, with replacement.
pub fn sample_indices(n: usize, batch_size: usize, rng: &mut AgentRng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    Ok((0..batch_size).map(|_| rng.random_range(0..n)).collect())
}

impl<T: Real> BatchSampler<T> for OfflineDataset {
    fn sample(&self, batch_size: usize, rng: &mut AgentRng, normalize_states: bool) -> Result<Batch<T>> {
        let idx = sample_indices(self.len(), batch_size, rng)?;
        self.gather(&idx, normalize_states)
    }
}

/// Per-dimension population mean and std of row-major `states`, with the
/// std floored at [`STD_FLOOR`].
pub fn state_stats(states: &[f32], dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if dim == 0 || states.is_empty() || states.len() % dim != 0 {
        return Err(Error::EmptyDataset);
    }
    let n = (states.len() / dim) as f64;
    let mut mean = alloc::vec![0.0; dim];
    for row in states.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = alloc::vec![0.0; dim];
    for row in states.chunks_exact(dim) {
        for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v as f64 - m) * (v as f64 - m);
        }
    }
    let std = var.iter().map(|s| libm::sqrt(s / n).max(STD_FLOOR)).collect();
    Ok((mean, std))
}

/// Rolls episodes of `policy` in `env` until `n` transitions are collected.
pub fn generate<E: Env>(env: &mut E, policy: &BehaviorPolicy, policy_id: &str, n: usize, seed: u64) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be >= 1".into()));
    }
    policy.validate()?;
    let (sd, ad) = (env.state_dim(), env.action_dim());
    let mut states = Vec::with_capacity(n * sd);
    let mut actions = Vec::with_capacity(n * ad);
    let mut rewards = Vec::with_capacity(n);
    let mut next_states = Vec::with_capacity(n * sd);
    let mut next_actions = Vec::with_capacity(n * ad);
    let mut dones = Vec::with_capacity(n);
    let mut episode_ends = Vec::new();

    let mut mix_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    while rewards.len() < n {
        let ep_seed: u64 = seeds.random();
        let mut pol = policy.instantiate(&mut mix_rng, ep_seed);
        pol.reset(ep_seed);
        let mut s = env.reset(ep_seed);
        let start = rewards.len();
        loop {
            let a = pol.act(&*env, &s);
            let step = env.step(&a)?;
            states.extend(s.iter().map(|&v| v as f32));
            actions.extend(a.iter().map(|&v| v as f32));
            rewards.push(step.reward as f32);
            next_states.extend(step.state.iter().map(|&v| v as f32));
            dones.push(step.terminal as u8);
            s = step.state;
            if step.done || rewards.len() == n {
                break;
            }
        }
        let end = rewards.len();
        // â' chains to the following row inside the episode, self-anchors at its end
        for i in start..end {
            let src = if i + 1 < end { i + 1 } else { i };
            let row: Vec<f32> = actions[src * ad..(src + 1) * ad].to_vec();
            next_actions.extend(row);
        }
        episode_ends.push(end as u64);
    }

    let mut ds = OfflineDataset {
        state_dim: sd,
        action_dim: ad,
        states,
        actions,
        rewards,
        next_states,
        next_actions,
        dones,
        meta: DatasetMeta {
            env: env.kind(),
            policy_id: policy_id.into(),
            policy: policy.clone(),
            size: n as u64,
            seed,
            state_mean: Vec::new(),
            state_std: Vec::new(),
            episode_ends,
        },
    };
    ds.refresh_stats()?;
    Ok(ds)
}

/// Number of episodes and how many reached a terminal state.
pub fn episode_outcomes(ds: &OfflineDataset) -> (usize, usize) {
    let mut start = 0usize;
    let mut successes = 0;
    for &end in &ds.meta.episode_ends {
        let end = end as usize;
        if ds.dones[start..end].contains(&1) {
            successes += 1;
        }
        start = end;
    }
    (ds.meta.episode_ends.len(), successes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{MazeEnv, ReachEnv};

    #[test]
    fn uniform_reach_actions_are_centred() {
        let ds = generate(&mut ReachEnv::default(), &BehaviorPolicy::UniformRandom, "random", 1000, 0).unwrap();
        assert_eq!(ds.len(), 1000);
        assert!(ds.actions.iter().all(|a| a.abs() <= 1.0));
        for d in 0..2 {
            let mean: f64 = (0..1000).map(|i| ds.action(i)[d] as f64).sum::<f64>() / 1000.0;
            assert!(mean.abs() < 0.1, "dim {d}: {mean}");
        }
    }

    #[test]
    fn expert_maze_episodes_mostly_succeed() {
        let ds = generate(&mut MazeEnv::default(), &BehaviorPolicy::expert(), "expert", 20_000, 3).unwrap();
        let (episodes, successes) = episode_outcomes(&ds);
        // the final episode may be cut short by the size limit
        let complete = episodes - 1;
        assert!(successes as f64 >= 0.8 * complete as f64, "{successes}/{complete}");
        assert!(ds.rewards.iter().all(|&r| r == 0.0 || r == 100.0));
    }

    #[test]
    fn single_transition_self_anchors() {
        let ds = generate(&mut ReachEnv::default(), &BehaviorPolicy::expert(), "expert", 1, 0).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.action(0), ds.next_action(0));
        ds.validate().unwrap();
    }

    #[test]
    fn next_actions_chain_within_episodes() {
        let ds = generate(&mut MazeEnv::default(), &BehaviorPolicy::replay(), "replay", 3000, 11).unwrap();
        ds.validate().unwrap();
        let mut start = 0usize;
        for &end in &ds.meta.episode_ends {
            let end = end as usize;
            for i in start..end - 1 {
                assert_eq!(ds.next_action(i), ds.action(i + 1));
            }
            assert_eq!(ds.next_action(end - 1), ds.action(end - 1));
            start = end;
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&mut MazeEnv::default(), &BehaviorPolicy::replay(), "replay", 2000, 5).unwrap();
        let b = generate(&mut MazeEnv::default(), &BehaviorPolicy::replay(), "replay", 2000, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stats_examples() {
        let (mean, std) = state_stats(&[3.0, 3.0, 3.0], 1).unwrap();
        assert_eq!((mean[0], std[0]), (3.0, STD_FLOOR));
        let (mean, std) = state_stats(&[0.0, 2.0], 1).unwrap();
        assert_eq!((mean[0], std[0]), (1.0, 1.0));
        assert_eq!(state_stats(&[], 1).unwrap_err(), Error::EmptyDataset);
    }

    #[test]
    fn normalised_states_are_standardised() {
        let ds = generate(&mut ReachEnv::default(), &BehaviorPolicy::medium(), "medium", 2000, 2).unwrap();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let b: Batch<f64> = ds.gather(&idx, true).unwrap();
        let flat: Vec<f32> = b.states.data().iter().map(|&v| v as f32).collect();
        let (mean, std) = state_stats(&flat, 4).unwrap();
        for d in 0..4 {
            assert!(mean[d].abs() < 1e-4, "{mean:?}");
            assert!((std[d] - 1.0).abs() < 1e-4, "{std:?}");
        }
    }

    #[test]
    fn one_row_batch_repeats() {
        let ds = generate(&mut ReachEnv::default(), &BehaviorPolicy::UniformRandom, "random", 1, 0).unwrap();
        let mut rng = AgentRng::seed_from_u64(0);
        let b: Batch<f32> = ds.sample(7, &mut rng, false).unwrap();
        for r in 0..7 {
            assert_eq!(b.states.row(r), ds.state(0));
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_indices(50, 64, &mut AgentRng::seed_from_u64(9)).unwrap();
        let b = sample_indices(50, 64, &mut AgentRng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(sample_indices(0, 4, &mut AgentRng::seed_from_u64(9)).unwrap_err(), Error::EmptyDataset);
    }

    #[test]
    fn sampling_is_uniform_chi_square() {
        let mut rng = AgentRng::seed_from_u64(2024);
        let idx = sample_indices(10, 100_000, &mut rng).unwrap();
        let mut counts = [0f64; 10];
        idx.iter().for_each(|&i| counts[i] += 1.0);
        let expected = 10_000.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // upper 0.001 quantile of chi-square with 9 degrees of freedom
        assert!(chi2 < 27.877, "chi2 = {chi2}");
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        let bad = BehaviorPolicy::Mixture {
            components: alloc::vec![(BehaviorPolicy::UniformRandom, 0.5)],
        };
        assert!(bad.validate().is_err());
        assert!(BehaviorPolicy::replay().validate().is_ok());
        assert!(BehaviorPolicy::preset("nope").is_none());
    }
}
