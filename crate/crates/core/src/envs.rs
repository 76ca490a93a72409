//! Deterministic point-mass environments.
//!
//! [`ReachEnv`] has a dense distance penalty and a fixed horizon.
//! [`MazeEnv`] is a U-shaped corridor with a sparse goal reward granted once,
//! on which the episode terminates. Both share the same damped point-mass
//! dynamics: `v <- (1 - friction·dt) v + dt·a`, `p <- p + dt·v`.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;
pub const MAX_ACTION: f64 = 1.0;

/// `[x, y, vx, vy]`
pub type State = [f64; STATE_DIM];

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    /// Open interior test; touching an edge is allowed.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReachConfig {
    pub dt: f64,
    pub friction: f64,
    pub goal: [f64; 2],
    pub horizon: usize,
    pub start_half_width: f64,
    /// Positions are clamped to `[-bound, bound]²`.
    pub bound: f64,
}

impl Default for ReachConfig {
    fn default() -> Self {
        ReachConfig {
            dt: 0.05,
            friction: 0.1,
            goal: [1.0, 1.0],
            horizon: 200,
            start_half_width: 0.2,
            bound: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MazeConfig {
    /// Layout revision, bumped whenever walls or waypoints change.
    pub layout_version: u32,
    pub dt: f64,
    pub friction: f64,
    pub bound: f64,
    pub walls: Vec<Rect>,
    pub start: [f64; 2],
    pub start_half_width: f64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub reward_scale: f64,
    pub horizon: usize,
}

impl Default for MazeConfig {
    /// U-maze: a divider leaves a gap on the right; start bottom-left, goal
    /// top-left.
    fn default() -> Self {
        MazeConfig {
            layout_version: 1,
            dt: 0.05,
            friction: 0.1,
            bound: 2.0,
            walls: vec![Rect {
                x0: -2.0,
                y0: -0.4,
                x1: 1.0,
                y1: 0.4,
            }],
            start: [-1.5, -1.2],
            start_half_width: 0.1,
            goal: [-1.5, 1.2],
            goal_radius: 0.25,
            reward_scale: 100.0,
            horizon: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: State,
    pub reward: f64,
    /// Episode over: goal reached or horizon hit.
    pub done: bool,
    /// Goal reached; the only true termination (no bootstrapping past it).
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum EnvKind {
    Reach,
    Maze,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Reach => "reach",
            EnvKind::Maze => "maze",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reach" => Some(EnvKind::Reach),
            "maze" => Some(EnvKind::Maze),
            _ => None,
        }
    }
}

pub trait Env {
    fn kind(&self) -> EnvKind;
    fn horizon(&self) -> usize;
    fn reset(&mut self, seed: u64) -> State;
    fn step(&mut self, action: &[f64]) -> Result<Step>;
    /// Noise-free scripted controller output before clipping.
    fn expert_command(&self, state: &State) -> [f64; 2];
    fn state_dim(&self) -> usize {
        STATE_DIM
    }
    fn action_dim(&self) -> usize {
        ACTION_DIM
    }
}

fn clip_action(action: &[f64]) -> Result<[f64; 2]> {
    if action.len() != ACTION_DIM {
        return Err(Error::shape("env action", ACTION_DIM, action.len()));
    }
    if !action.iter().all(|a| a.is_finite()) {
        return Err(Error::NonFinite("env action"));
    }
    Ok([action[0].clamp(-MAX_ACTION, MAX_ACTION), action[1].clamp(-MAX_ACTION, MAX_ACTION)])
}

fn start_position(center: [f64; 2], half: f64, seed: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if half == 0.0 {
        return center;
    }
    let u = Uniform::new_inclusive(-half, half).expect("finite width");
    [center[0] + u.sample(&mut rng), center[1] + u.sample(&mut rng)]
}

/// Velocity-tracking controller: head for `target` at up to `v_max`, slowing
/// so that the point can stop there under unit acceleration.
fn seek(p: [f64; 2], v: [f64; 2], target: [f64; 2], v_max: f64) -> [f64; 2] {
    const GAIN: f64 = 4.0;
    let d = [target[0] - p[0], target[1] - p[1]];
    let dist = libm::hypot(d[0], d[1]);
    if dist < 1e-12 {
        return [-GAIN * v[0], -GAIN * v[1]];
    }
    let speed = v_max.min(libm::sqrt(1.6 * dist));
    [GAIN * (speed * d[0] / dist - v[0]), GAIN * (speed * d[1] / dist - v[1])]
}

#[derive(Debug, Clone)]
pub struct ReachEnv {
    pub cfg: ReachConfig,
    state: State,
    t: usize,
    done: bool,
}

impl ReachEnv {
    pub fn new(cfg: ReachConfig) -> Self {
        ReachEnv {
            cfg,
            state: [0.0; 4],
            t: 0,
            done: true,
        }
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn set_state(&mut self, state: State) {
        self.state = state;
        self.t = 0;
        self.done = false;
    }
}

impl Default for ReachEnv {
    fn default() -> Self {
        Self::new(ReachConfig::default())
    }
}

impl Env for ReachEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Reach
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, seed: u64) -> State {
        let p = start_position([0.0, 0.0], self.cfg.start_half_width, seed);
        self.set_state([p[0], p[1], 0.0, 0.0]);
        self.state
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        let a = clip_action(action)?;
        let c = &self.cfg;
        let decay = 1.0 - c.friction * c.dt;
        let [mut x, mut y, mut vx, mut vy] = self.state;
        vx = decay * vx + c.dt * a[0];
        vy = decay * vy + c.dt * a[1];
        x = (x + c.dt * vx).clamp(-c.bound, c.bound);
        y = (y + c.dt * vy).clamp(-c.bound, c.bound);
        self.state = [x, y, vx, vy];
        self.t += 1;
        let reward = -libm::hypot(x - c.goal[0], y - c.goal[1]);
        self.done = self.t >= c.horizon;
        Ok(Step {
            state: self.state,
            reward,
            done: self.done,
            terminal: false,
        })
    }

    fn expert_command(&self, s: &State) -> [f64; 2] {
        seek([s[0], s[1]], [s[2], s[3]], self.cfg.goal, 2.0)
    }
}

#[derive(Debug, Clone)]
pub struct MazeEnv {
    pub cfg: MazeConfig,
    state: State,
    t: usize,
    done: bool,
}

impl MazeEnv {
    pub fn new(cfg: MazeConfig) -> Self {
        MazeEnv {
            cfg,
            state: [0.0; 4],
            t: 0,
            done: true,
        }
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn set_state(&mut self, state: State) {
        self.state = state;
        self.t = 0;
        self.done = false;
    }

    pub fn blocked(&self, x: f64, y: f64) -> bool {
        self.cfg.walls.iter().any(|w| w.contains(x, y))
    }

    pub fn at_goal(&self, x: f64, y: f64) -> bool {
        libm::hypot(x - self.cfg.goal[0], y - self.cfg.goal[1]) <= self.cfg.goal_radius
    }

    /// Next waypoint for the scripted controller, chosen from position alone
    /// so the controller is Markov in the observation.
    fn waypoint(&self, x: f64, y: f64) -> ([f64; 2], f64) {
        let c = &self.cfg;
        let right_col = c.walls.iter().map(|w| w.x1).fold(f64::MIN, f64::max);
        let divider_top = c.walls.iter().map(|w| w.y1).fold(f64::MIN, f64::max);
        let column_x = 0.5 * (right_col + c.bound);
        if x >= right_col + 0.2 && y < c.goal[1] - 0.3 {
            ([column_x, c.goal[1]], 1.5)
        } else if y < divider_top {
            ([column_x, c.start[1]], 1.5)
        } else {
            (c.goal, 1.5)
        }
    }
}

impl Default for MazeEnv {
    fn default() -> Self {
        Self::new(MazeConfig::default())
    }
}

impl Env for MazeEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Maze
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, seed: u64) -> State {
        let p = start_position(self.cfg.start, self.cfg.start_half_width, seed);
        debug_assert!(!self.blocked(p[0], p[1]));
        self.set_state([p[0], p[1], 0.0, 0.0]);
        self.state
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        let a = clip_action(action)?;
        let c = &self.cfg;
        let decay = 1.0 - c.friction * c.dt;
        let [mut x, mut y, mut vx, mut vy] = self.state;
        vx = decay * vx + c.dt * a[0];
        vy = decay * vy + c.dt * a[1];

        let nx = x + c.dt * vx;
        if nx.abs() > c.bound {
            x = nx.clamp(-c.bound, c.bound);
            vx = 0.0;
        } else if self.blocked(nx, y) {
            vx = 0.0;
        } else {
            x = nx;
        }
        let ny = y + c.dt * vy;
        if ny.abs() > c.bound {
            y = ny.clamp(-c.bound, c.bound);
            vy = 0.0;
        } else if self.blocked(x, ny) {
            vy = 0.0;
        } else {
            y = ny;
        }

        self.state = [x, y, vx, vy];
        self.t += 1;
        let terminal = self.at_goal(x, y);
        let reward = if terminal { c.reward_scale } else { 0.0 };
        self.done = terminal || self.t >= c.horizon;
        Ok(Step {
            state: self.state,
            reward,
            done: self.done,
            terminal,
        })
    }

    fn expert_command(&self, s: &State) -> [f64; 2] {
        let (target, v_max) = self.waypoint(s[0], s[1]);
        seek([s[0], s[1]], [s[2], s[3]], target, v_max)
    }
}

/// Concrete environment selected at run time.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    Reach(ReachEnv),
    Maze(MazeEnv),
}

impl AnyEnv {
    pub fn new(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Reach => AnyEnv::Reach(ReachEnv::default()),
            EnvKind::Maze => AnyEnv::Maze(MazeEnv::default()),
        }
    }

    fn inner(&self) -> &dyn Env {
        match self {
            AnyEnv::Reach(e) => e,
            AnyEnv::Maze(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Env {
        match self {
            AnyEnv::Reach(e) => e,
            AnyEnv::Maze(e) => e,
        }
    }
}

impl Env for AnyEnv {
    fn kind(&self) -> EnvKind {
        self.inner().kind()
    }
    fn horizon(&self) -> usize {
        self.inner().horizon()
    }
    fn reset(&mut self, seed: u64) -> State {
        self.inner_mut().reset(seed)
    }
    fn step(&mut self, action: &[f64]) -> Result<Step> {
        self.inner_mut().step(action)
    }
    fn expert_command(&self, state: &State) -> [f64; 2] {
        self.inner().expert_command(state)
    }
}

/// A state-to-action map. `reset` is called at the start of every episode.
pub trait Policy {
    fn act(&mut self, env: &dyn Env, state: &State) -> [f64; 2];
    fn reset(&mut self, _seed: u64) {}
}

impl<F: FnMut(&State) -> [f64; 2]> Policy for F {
    fn act(&mut self, _env: &dyn Env, state: &State) -> [f64; 2] {
        self(state)
    }
}

/// Uniform actions in `[-1, 1]²`.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    rng: ChaCha8Rng,
}

impl UniformPolicy {
    pub fn new(seed: u64) -> Self {
        UniformPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for UniformPolicy {
    fn act(&mut self, _env: &dyn Env, _state: &State) -> [f64; 2] {
        [
            self.rng.random_range(-MAX_ACTION..=MAX_ACTION),
            self.rng.random_range(-MAX_ACTION..=MAX_ACTION),
        ]
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    }
}

/// Scripted controller with its gain scaled by `skill` and Gaussian action
/// noise of std `noise_sigma`, clipped to the action box.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub skill: f64,
    pub noise_sigma: f64,
    rng: ChaCha8Rng,
}

impl ScriptedPolicy {
    pub fn new(skill: f64, noise_sigma: f64, seed: u64) -> Self {
        ScriptedPolicy {
            skill,
            noise_sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn expert() -> Self {
        Self::new(1.0, 0.0, 0)
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, env: &dyn Env, state: &State) -> [f64; 2] {
        let u = env.expert_command(state);
        let mut a = [0.0; 2];
        for (ai, ui) in a.iter_mut().zip(u) {
            let noise = if self.noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                self.noise_sigma * z
            } else {
                0.0
            };
            *ai = (self.skill * ui + noise).clamp(-MAX_ACTION, MAX_ACTION);
        }
        a
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1B5_4A32_D192_ED03);
    }
}

/// Per-episode reset seeds derived from one run seed.
pub fn episode_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

/// Undiscounted returns of `n_episodes` episodes.
pub fn rollout<E: Env, P: Policy + ?Sized>(env: &mut E, policy: &mut P, seed: u64, n_episodes: usize) -> Result<Vec<f64>> {
    let mut returns = Vec::with_capacity(n_episodes);
    for s in episode_seeds(seed, n_episodes) {
        let mut state = env.reset(s);
        policy.reset(s);
        let mut total = 0.0;
        loop {
            let a = policy.act(&*env, &state);
            let step = env.step(&a)?;
            total += step.reward;
            state = step.state;
            if step.done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Reference returns used to normalise scores.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RefScores {
    pub random_return: f64,
    pub expert_return: f64,
}

/// Episodes used by [`RefScores::compute`].
pub const REF_EPISODES: usize = 100;

impl RefScores {
    /// Mean returns of the uniform policy and the noise-free scripted expert
    /// over [`REF_EPISODES`] seeded episodes.
    pub fn compute<E: Env>(env: &mut E, seed: u64) -> Result<Self> {
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let random_return = mean(rollout(env, &mut UniformPolicy::new(seed), seed, REF_EPISODES)?);
        let expert_return = mean(rollout(env, &mut ScriptedPolicy::expert(), seed, REF_EPISODES)?);
        Ok(RefScores {
            random_return,
            expert_return,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.expert_return > self.random_return {
            Ok(())
        } else {
            Err(Error::InvalidConfig("expert_return must exceed random_return".into()))
        }
    }
}

/// `100 · (raw - random) / (expert - random)`, unclipped.
pub fn normalized_score(raw: f64, refs: &RefScores) -> f64 {
    100.0 * (raw - refs.random_return) / (refs.expert_return - refs.random_return)
}
