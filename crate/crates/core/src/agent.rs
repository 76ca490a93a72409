//! The ReBRAC agent: TD3-style twin critics and deterministic actor with
//! decoupled behavioural-cloning penalties on the actor and the critic.
//!
//! Actor loss, minimised:
//! `-mean(Q_a(s, π(s))) / λ + β₁ · mean((π(s) - a)²)`
//! with `λ = mean|Q_a(s, π(s))|` held constant when Q normalisation is on.
//!
//! Critic target, shared by both critics:
//! `y = r + γ (1 - done) (min(Q̄_a, Q̄_b)(s', a') - β₂ · mean((a' - â')²))`
//! where `a'` is the smoothed target-actor action and `â'` the dataset's next
//! action. Squared action differences are averaged over action dimensions.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::{Env, Policy, State};
use crate::error::{Error, Result};
use crate::nn::{MlpConfig, MlpParams, OutputActivation, Parameters};
use crate::optim::{polyak_update, Adam};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Random stream owned by an agent (batch indices and smoothing noise).
pub type AgentRng = ChaCha8Rng;

/// Position of an [`AgentRng`], enough to resume the stream exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &AgentRng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> AgentRng {
        let mut rng = AgentRng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Std of the Gaussian added by [`AgentState::select_action`] when not
/// deterministic, as a fraction of `max_action`.
pub const EXPLORATION_NOISE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    pub beta1_actor: f64,
    pub beta2_critic: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Std of target-policy smoothing noise, absolute units.
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: u64,
    pub q_normalization: bool,
    pub max_action: f64,
    pub state_normalization: bool,
    pub actor: MlpConfig,
    pub critic: MlpConfig,
}

impl AgentConfig {
    /// Defaults: γ = 0.99, τ = 5e-3, batch 256, learning rate 1e-3, three
    /// hidden layers of 256 units, LayerNorm in the critics only.
    pub fn new(state_dim: usize, action_dim: usize, max_action: f64) -> Self {
        AgentConfig {
            gamma: 0.99,
            tau: 5e-3,
            beta1_actor: 0.01,
            beta2_critic: 0.01,
            batch_size: 256,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            policy_noise: 0.2 * max_action,
            noise_clip: 0.5 * max_action,
            policy_delay: 2,
            q_normalization: true,
            max_action,
            state_normalization: true,
            actor: MlpConfig::new(state_dim, action_dim).activation(OutputActivation::TanhScaled(max_action)),
            critic: MlpConfig::new(state_dim + action_dim, 1).layer_norm(true),
        }
    }

    /// The TD3+BC configuration expressed in ReBRAC terms: no critic penalty,
    /// no critic LayerNorm, two hidden layers, batch 256. `beta1` plays the
    /// role of TD3+BC's inverse trade-off.
    pub fn td3_bc(state_dim: usize, action_dim: usize, max_action: f64, beta1: f64) -> Self {
        let mut cfg = Self::new(state_dim, action_dim, max_action);
        cfg.beta1_actor = beta1;
        cfg.beta2_critic = 0.0;
        cfg.batch_size = 256;
        cfg.critic.layer_norm = false;
        cfg.actor = cfg.actor.with_depth(2);
        cfg.critic = cfg.critic.with_depth(2);
        cfg
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim
    }

    /// Sets the width of every hidden layer of both networks, keeping depths.
    pub fn with_width(mut self, width: usize) -> Self {
        self.actor.hidden_dims.iter_mut().for_each(|h| *h = width);
        self.critic.hidden_dims.iter_mut().for_each(|h| *h = width);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.beta1_actor >= 0.0 && self.beta2_critic >= 0.0) {
            return bad("penalty weights must be non-negative");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.max_action > 0.0) || self.policy_noise < 0.0 || self.noise_clip < 0.0 {
            return bad("max_action must be positive and noise settings non-negative");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        self.actor.validate()?;
        self.critic.validate()?;
        if self.critic.input_dim != self.actor.input_dim + self.actor.output_dim || self.critic.output_dim != 1 {
            return bad("critic must map (state, action) to a scalar");
        }
        if self.actor.output_activation != OutputActivation::TanhScaled(self.max_action) {
            return bad("actor head must be tanh scaled by max_action");
        }
        Ok(())
    }
}

/// One minibatch, row-aligned across fields. `rewards` and `dones` are
/// column vectors of length `B`; `dones` holds 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub states: Tensor<T>,
    pub actions: Tensor<T>,
    pub rewards: Tensor<T>,
    pub next_states: Tensor<T>,
    pub next_actions: Tensor<T>,
    pub dones: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, state_dim: usize, action_dim: usize, max_action: f64) -> Result<()> {
        let b = self.len();
        if b == 0 {
            return Err(Error::EmptyDataset);
        }
        let check = |t: &Tensor<T>, cols: usize, what: &'static str| {
            if t.rows() != b || t.cols() != cols {
                Err(Error::shape(what, (b, cols), t.shape()))
            } else {
                Ok(())
            }
        };
        check(&self.states, state_dim, "batch states")?;
        check(&self.next_states, state_dim, "batch next_states")?;
        check(&self.actions, action_dim, "batch actions")?;
        check(&self.next_actions, action_dim, "batch next_actions")?;
        if self.rewards.len() != b || self.dones.len() != b {
            return Err(Error::shape("batch rewards/dones", b, (self.rewards.len(), self.dones.len())));
        }
        let m = T::from_f64(max_action);
        if self.actions.data().iter().chain(self.next_actions.data()).any(|a| a.abs() > m) {
            return Err(Error::InvalidConfig("batch action outside [-max_action, max_action]".into()));
        }
        Ok(())
    }
}

/// Anything that can produce i.i.d. minibatches.
pub trait BatchSampler<T> {
    fn sample(&self, batch_size: usize, rng: &mut AgentRng, normalize_states: bool) -> Result<Batch<T>>;
}

/// Quantities reported by one [`AgentState::update_on_batch`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// Critic updates performed so far, this one included.
    pub step: u64,
    pub critic_loss: f64,
    /// Mean of the first critic on dataset `(s, a)` pairs.
    pub q_mean: f64,
    pub actor: Option<ActorStats>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorStats {
    pub loss: f64,
    /// Unweighted `mean((π(s) - a)²)`.
    pub bc_mse: f64,
    pub lambda: f64,
    /// True when `mean|Q|` was zero and `λ = 1` was used instead.
    pub lambda_fallback: bool,
}

/// Networks, targets, optimiser state and random stream of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState<T> {
    pub actor: MlpParams<T>,
    pub actor_target: MlpParams<T>,
    pub critic_a: MlpParams<T>,
    pub critic_b: MlpParams<T>,
    pub critic_a_target: MlpParams<T>,
    pub critic_b_target: MlpParams<T>,
    pub actor_opt: Adam<T>,
    pub critic_a_opt: Adam<T>,
    pub critic_b_opt: Adam<T>,
    pub critic_updates: u64,
    pub actor_updates: u64,
    /// Number of actor updates that hit the `λ = 0` fallback.
    pub lambda_fallbacks: u64,
    pub rng: AgentRng,
}

impl<T: Real> AgentState<T> {
    /// Fresh networks from `seed`; targets start as exact copies.
    pub fn new(cfg: &AgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = AgentRng::seed_from_u64(seed);
        let actor = MlpParams::init(&cfg.actor, &mut rng)?;
        let critic_a = MlpParams::init(&cfg.critic, &mut rng)?;
        let critic_b = MlpParams::init(&cfg.critic, &mut rng)?;
        Ok(AgentState {
            actor_target: actor.clone(),
            critic_a_target: critic_a.clone(),
            critic_b_target: critic_b.clone(),
            actor,
            critic_a,
            critic_b,
            actor_opt: Adam::new(cfg.actor_lr),
            critic_a_opt: Adam::new(cfg.critic_lr),
            critic_b_opt: Adam::new(cfg.critic_lr),
            critic_updates: 0,
            actor_updates: 0,
            lambda_fallbacks: 0,
            rng,
        })
    }

    /// Draws unclipped smoothing noise `ε ~ N(0, policy_noise²)`, `rows × action_dim`.
    pub fn smoothing_noise(&mut self, cfg: &AgentConfig, rows: usize) -> Tensor<T> {
        let n = rows * cfg.action_dim();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::from_f64(z * cfg.policy_noise)
            })
            .collect();
        Tensor::matrix(rows, cfg.action_dim(), data).expect("sized above")
    }

    /// Smoothed target action `clip(π̄(s') + clip(ε, ±c), ±max_action)`.
    pub fn target_action(&self, cfg: &AgentConfig, next_states: &Tensor<T>, noise: &Tensor<T>) -> Result<Tensor<T>> {
        let mut a = self.actor_target.predict(&cfg.actor, next_states)?;
        if noise.shape() != a.shape() {
            return Err(Error::shape("smoothing noise", a.shape(), noise.shape()));
        }
        let clip = T::from_f64(cfg.noise_clip);
        let m = T::from_f64(cfg.max_action);
        for (v, &e) in a.data_mut().iter_mut().zip(noise.data()) {
            *v = (*v + e.max(-clip).min(clip)).max(-m).min(m);
        }
        Ok(a)
    }

    /// TD targets for `batch` with the given smoothing noise. Nothing here is
    /// differentiated.
    pub fn critic_target(&self, cfg: &AgentConfig, batch: &Batch<T>, noise: &Tensor<T>) -> Result<Tensor<T>> {
        let next_a = self.target_action(cfg, &batch.next_states, noise)?;
        let sa = Tensor::hcat(&batch.next_states, &next_a)?;
        let qa = self.critic_a_target.predict(&cfg.critic, &sa)?;
        let qb = self.critic_b_target.predict(&cfg.critic, &sa)?;
        let min_q: Vec<T> = qa.data().iter().zip(qb.data()).map(|(&a, &b)| a.min(b)).collect();
        bootstrap_targets(
            batch.rewards.data(),
            batch.dones.data(),
            &min_q,
            &next_a,
            &batch.next_actions,
            cfg.gamma,
            cfg.beta2_critic,
        )
    }

    /// Regresses both critics onto the shared target; returns the summed MSE
    /// and the first critic's mean prediction.
    pub fn critic_update(&mut self, cfg: &AgentConfig, batch: &Batch<T>, noise: &Tensor<T>) -> Result<(f64, f64)> {
        let y = self.critic_target(cfg, batch, noise)?;
        let sa = Tensor::hcat(&batch.states, &batch.actions)?;
        let (loss_a, grads_a, q_mean) = critic_regression(&self.critic_a, &cfg.critic, &sa, &y)?;
        let (loss_b, grads_b, _) = critic_regression(&self.critic_b, &cfg.critic, &sa, &y)?;
        let loss = loss_a + loss_b;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                what: "critic loss",
                step: self.critic_updates,
            });
        }
        self.critic_a_opt.step(&mut self.critic_a, &grads_a)?;
        self.critic_b_opt.step(&mut self.critic_b, &grads_b)?;
        Ok((loss, q_mean))
    }

    /// Actor loss, its statistics and (optionally) the actor gradient.
    pub fn actor_objective(
        &self,
        cfg: &AgentConfig,
        batch: &Batch<T>,
        with_grad: bool,
    ) -> Result<(ActorStats, Option<MlpParams<T>>)> {
        let b = batch.len();
        let act_dim = cfg.action_dim();
        let (pi, actor_cache) = self.actor.forward(&cfg.actor, &batch.states)?;
        let sa = Tensor::hcat(&batch.states, &pi)?;
        let (q, critic_cache) = self.critic_a.forward(&cfg.critic, &sa)?;

        let q_mean = q.data().iter().map(|v| v.as_f64()).sum::<f64>() / b as f64;
        let mut lambda = 1.0;
        let mut lambda_fallback = false;
        if cfg.q_normalization {
            lambda = q.data().iter().map(|v| v.as_f64().abs()).sum::<f64>() / b as f64;
            if lambda == 0.0 {
                lambda = 1.0;
                lambda_fallback = true;
            }
        }
        let diff: Vec<f64> = pi
            .data()
            .iter()
            .zip(batch.actions.data())
            .map(|(p, a)| p.as_f64() - a.as_f64())
            .collect();
        let bc_mse = diff.iter().map(|d| d * d).sum::<f64>() / (b * act_dim) as f64;
        let loss = -q_mean / lambda + cfg.beta1_actor * bc_mse;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                what: "actor loss",
                step: self.critic_updates,
            });
        }
        let stats = ActorStats {
            loss,
            bc_mse,
            lambda,
            lambda_fallback,
        };
        if !with_grad {
            return Ok((stats, None));
        }

        let dq = Tensor::filled(&[b, 1], T::from_f64(-1.0 / (b as f64 * lambda)));
        let dsa = self.critic_a.input_grad(&cfg.critic, &critic_cache, &dq)?;
        let state_dim = cfg.state_dim();
        let bc_scale = 2.0 * cfg.beta1_actor / (b * act_dim) as f64;
        let mut dpi = dsa.col_slice(state_dim, state_dim + act_dim);
        for (g, d) in dpi.data_mut().iter_mut().zip(&diff) {
            *g += T::from_f64(bc_scale * d);
        }
        let (grads, _) = self.actor.backward(&cfg.actor, &actor_cache, &dpi)?;
        Ok((stats, Some(grads)))
    }

    /// One Adam step on the actor. Only the first critic feeds the policy
    /// gradient.
    pub fn actor_update(&mut self, cfg: &AgentConfig, batch: &Batch<T>) -> Result<ActorStats> {
        let (stats, grads) = self.actor_objective(cfg, batch, true)?;
        let grads = grads.expect("requested");
        self.actor_opt.step(&mut self.actor, &grads)?;
        if stats.lambda_fallback {
            self.lambda_fallbacks += 1;
        }
        Ok(stats)
    }

    /// Moves all three target networks towards their online counterparts.
    pub fn polyak_update(&mut self, tau: f64) -> Result<()> {
        polyak_update(&mut self.actor_target, &self.actor, tau)?;
        polyak_update(&mut self.critic_a_target, &self.critic_a, tau)?;
        polyak_update(&mut self.critic_b_target, &self.critic_b, tau)
    }

    /// Critic update, then every `policy_delay`-th call an actor update
    /// followed by Polyak averaging of the targets.
    pub fn update_on_batch(&mut self, cfg: &AgentConfig, batch: &Batch<T>, noise: &Tensor<T>) -> Result<StepMetrics> {
        batch.validate(cfg.state_dim(), cfg.action_dim(), cfg.max_action)?;
        let (critic_loss, q_mean) = self.critic_update(cfg, batch, noise)?;
        self.critic_updates += 1;
        let actor = if self.critic_updates % cfg.policy_delay == 0 {
            let stats = self.actor_update(cfg, batch)?;
            self.polyak_update(cfg.tau)?;
            self.actor_updates += 1;
            Some(stats)
        } else {
            None
        };
        Ok(StepMetrics {
            step: self.critic_updates,
            critic_loss,
            q_mean,
            actor,
        })
    }

    /// Samples a batch and smoothing noise from the agent's stream and
    /// performs [`Self::update_on_batch`].
    pub fn train_step<S: BatchSampler<T> + ?Sized>(&mut self, cfg: &AgentConfig, sampler: &S) -> Result<StepMetrics> {
        let batch = sampler.sample(cfg.batch_size, &mut self.rng, cfg.state_normalization)?;
        let noise = self.smoothing_noise(cfg, batch.len());
        self.update_on_batch(cfg, &batch, &noise)
    }

    /// Deterministic policy output for (already normalised) states.
    pub fn act(&self, cfg: &AgentConfig, states: &Tensor<T>) -> Result<Tensor<T>> {
        self.actor.predict(&cfg.actor, states)
    }

    /// `π(s)`, or `π(s)` plus clipped Gaussian exploration noise.
    pub fn select_action(&mut self, cfg: &AgentConfig, states: &Tensor<T>, deterministic: bool) -> Result<Tensor<T>> {
        let mut a = self.act(cfg, states)?;
        if !deterministic {
            let m = T::from_f64(cfg.max_action);
            for v in a.data_mut() {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *v = (*v + T::from_f64(z * EXPLORATION_NOISE * cfg.max_action)).max(-m).min(m);
            }
        }
        Ok(a)
    }

    /// Every parameter tensor of every network, in checkpoint order.
    pub fn networks(&self) -> [&MlpParams<T>; 6] {
        [
            &self.actor,
            &self.actor_target,
            &self.critic_a,
            &self.critic_b,
            &self.critic_a_target,
            &self.critic_b_target,
        ]
    }

    pub fn networks_mut(&mut self) -> [&mut MlpParams<T>; 6] {
        [
            &mut self.actor,
            &mut self.actor_target,
            &mut self.critic_a,
            &mut self.critic_b,
            &mut self.critic_a_target,
            &mut self.critic_b_target,
        ]
    }
}

/// The deterministic actor as an environment policy. Raw observations are
/// normalised with `state_stats` (mean, std) first when given.
pub struct GreedyPolicy<'a, T> {
    pub agent: &'a AgentState<T>,
    pub cfg: &'a AgentConfig,
    pub state_stats: Option<(&'a [f32], &'a [f32])>,
}

impl<T: Real> Policy for GreedyPolicy<'_, T> {
    fn act(&mut self, _env: &dyn Env, state: &State) -> [f64; 2] {
        let obs: Vec<T> = match self.state_stats {
            Some((mean, std)) => state
                .iter()
                .zip(mean.iter().zip(std))
                .map(|(&v, (&m, &s))| T::from_f64((v - m as f64) / s as f64))
                .collect(),
            None => state.iter().map(|&v| T::from_f64(v)).collect(),
        };
        let x = Tensor::matrix(1, obs.len(), obs).expect("one row");
        // a non-finite action is reported by the environment step
        match self.agent.act(self.cfg, &x) {
            Ok(a) => [a.data()[0].as_f64(), a.data()[1].as_f64()],
            Err(_) => [f64::NAN; 2],
        }
    }
}

/// Row-wise `r + γ (1 - done) (min_q - β₂ · mean((a' - â')²))`.
pub fn bootstrap_targets<T: Real>(
    rewards: &[T],
    dones: &[T],
    min_q: &[T],
    next_actions: &Tensor<T>,
    dataset_next_actions: &Tensor<T>,
    gamma: f64,
    beta2: f64,
) -> Result<Tensor<T>> {
    let b = rewards.len();
    if dones.len() != b || min_q.len() != b || next_actions.rows() != b || dataset_next_actions.shape() != next_actions.shape() {
        return Err(Error::shape("bootstrap_targets", b, (dones.len(), min_q.len(), next_actions.shape())));
    }
    let act_dim = next_actions.cols() as f64;
    let mut y = vec![T::zero(); b];
    for i in 0..b {
        let r = rewards[i].as_f64();
        if dones[i] != T::zero() {
            y[i] = rewards[i];
            continue;
        }
        let penalty = next_actions
            .row(i)
            .iter()
            .zip(dataset_next_actions.row(i))
            .map(|(a, h)| {
                let d = a.as_f64() - h.as_f64();
                d * d
            })
            .sum::<f64>()
            / act_dim;
        y[i] = T::from_f64(r + gamma * (min_q[i].as_f64() - beta2 * penalty));
    }
    let y = Tensor::matrix(b, 1, y)?;
    y.ensure_finite("critic target")?;
    Ok(y)
}

/// MSE of a critic against fixed targets: `(loss, grads, mean prediction)`.
pub fn critic_regression<T: Real>(
    critic: &MlpParams<T>,
    cfg: &MlpConfig,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<(f64, MlpParams<T>, f64)> {
    let (q, cache) = critic.forward(cfg, inputs)?;
    if targets.len() != q.len() {
        return Err(Error::shape("critic targets", q.len(), targets.len()));
    }
    let b = q.len() as f64;
    let mut loss = 0.0;
    let mut dq = Tensor::zeros(q.shape());
    for ((g, &p), &t) in dq.data_mut().iter_mut().zip(q.data()).zip(targets.data()) {
        let e = p.as_f64() - t.as_f64();
        loss += e * e;
        *g = T::from_f64(2.0 * e / b);
    }
    let q_mean = q.data().iter().map(|v| v.as_f64()).sum::<f64>() / b;
    let (grads, _) = critic.backward(cfg, &cache, &dq)?;
    Ok((loss / b, grads, q_mean))
}

/// Euclidean distance between two parameter sets.
pub fn param_distance<T: Real>(a: &MlpParams<T>, b: &MlpParams<T>) -> f64 {
    let sq: f64 = a
        .tensors()
        .iter()
        .zip(b.tensors())
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p.as_f64() - q.as_f64()) * (p.as_f64() - q.as_f64())))
        .sum();
    libm::sqrt(sq)
}
