use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Symmetric per-dimension action bound.
    pub action_bound: f64,
    pub horizon: usize,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Absorbing termination (bootstrapping stops).
    pub terminal: bool,
    /// Episode over: terminal or horizon reached.
    pub done: bool,
}

pub trait Environment {
    fn spec(&self) -> EnvSpec;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    /// Actions outside the bound are clamped.
    fn step(&mut self, action: &[f64], rng: &mut dyn RngCore) -> Result<Step>;
    /// Inclusive `(min, max)` of any single-step reward.
    fn reward_range(&self) -> (f64, f64);
}

fn check_action(action: &[f64], dim: usize) -> Result<()> {
    if action.len() != dim {
        return Err(Error::Dim {
            context: "action",
            expected: dim,
            actual: action.len(),
        });
    }
    if action.iter().any(|a| a.is_nan()) {
        return Err(Error::NanAction);
    }
    Ok(())
}

/// Small discrete MDP. States are one-hot observations; a one-dimensional
/// continuous action in `[-1, 1]` selects action 1 when positive, else 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `p[(s * n_actions + a) * n_states + s']`
    pub transitions: Vec<f64>,
    /// `r[s * n_actions + a]`
    pub rewards: Vec<f64>,
    pub initial: Vec<f64>,
    pub horizon: usize,
    pub gamma: f64,
    /// Seed the instance was generated from, if any.
    pub instance_seed: Option<u64>,
    state: usize,
    t: usize,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        initial: Vec<f64>,
        horizon: usize,
        gamma: f64,
    ) -> Result<Self> {
        if transitions.len() != n_states * n_actions * n_states
            || rewards.len() != n_states * n_actions
            || initial.len() != n_states
        {
            return Err(Error::InvalidEnv("tabular table sizes disagree".into()));
        }
        if n_actions != 2 {
            return Err(Error::InvalidEnv(
                "the continuous action embedding supports exactly two actions".into(),
            ));
        }
        let stochastic = |row: &[f64]| {
            row.iter().all(|&p| (0.0..=1.0).contains(&p)) && (row.iter().sum::<f64>() - 1.0).abs() < 1e-9
        };
        if !transitions.chunks(n_states).all(stochastic) || !stochastic(&initial) {
            return Err(Error::InvalidEnv("rows must be probability vectors".into()));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidEnv("rewards must be finite".into()));
        }
        if horizon == 0 || !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidEnv("need horizon >= 1 and gamma in (0, 1]".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            initial,
            horizon,
            gamma,
            instance_seed: None,
            state: 0,
            t: 0,
        })
    }

    /// Random 2x2 instance: rewards uniform in [0, 1], transition rows
    /// `[p, 1 - p]` with `p` uniform, uniform initial state.
    pub fn generate(seed: u64, horizon: usize, gamma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rewards: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
        let transitions: Vec<f64> = (0..4)
            .flat_map(|_| {
                let p: f64 = rng.random();
                [p, 1.0 - p]
            })
            .collect();
        let mut mdp = Self::new(2, 2, transitions, rewards, vec![0.5, 0.5], horizon, gamma)
            .expect("generated tables are valid");
        mdp.instance_seed = Some(seed);
        mdp
    }

    /// Deterministic instance from a successor table `next[s][a]`.
    pub fn deterministic(
        next: &[[usize; 2]],
        rewards: Vec<f64>,
        initial: Vec<f64>,
        horizon: usize,
        gamma: f64,
    ) -> Result<Self> {
        let n = next.len();
        let mut transitions = vec![0.0; n * 2 * n];
        for (s, row) in next.iter().enumerate() {
            for (a, &s2) in row.iter().enumerate() {
                if s2 >= n {
                    return Err(Error::InvalidEnv(format!("successor {s2} out of range")));
                }
                transitions[(s * 2 + a) * n + s2] = 1.0;
            }
        }
        Self::new(n, 2, transitions, rewards, initial, horizon, gamma)
    }

    pub fn prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn discrete_action(action: f64) -> usize {
        usize::from(action > 0.0)
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        v[s] = 1.0;
        v
    }

    pub fn current_state(&self) -> usize {
        self.state
    }

    fn draw(probs: &[f64], rng: &mut dyn RngCore) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left `u` above the cumulative sum; take the last
        // state with positive mass.
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

impl Environment for TabularMdp {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: self.n_states,
            action_dim: 1,
            action_bound: 1.0,
            horizon: self.horizon,
            gamma: self.gamma,
        }
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.state = Self::draw(&self.initial, rng);
        self.t = 0;
        self.one_hot(self.state)
    }

    fn step(&mut self, action: &[f64], rng: &mut dyn RngCore) -> Result<Step> {
        check_action(action, 1)?;
        let a = Self::discrete_action(action[0]);
        let reward = self.reward(self.state, a);
        let start = (self.state * self.n_actions + a) * self.n_states;
        self.state = Self::draw(&self.transitions[start..start + self.n_states], rng);
        self.t += 1;
        Ok(Step {
            state: self.one_hot(self.state),
            reward,
            terminal: false,
            done: self.t >= self.horizon,
        })
    }

    fn reward_range(&self) -> (f64, f64) {
        let lo = self.rewards.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Optimal expected discounted return from the initial distribution by value
/// iteration. `Some(h)` runs exactly `h` backups; `None` iterates to the
/// infinite-horizon fixed point (requires `gamma < 1`).
pub fn tabular_optimal_return(mdp: &TabularMdp, gamma: f64, horizon: Option<usize>) -> f64 {
    let v = tabular_optimal_values(mdp, gamma, horizon);
    mdp.initial.iter().zip(&v).map(|(p, v)| p * v).sum()
}

/// One Bellman optimality backup.
pub fn bellman_backup(mdp: &TabularMdp, gamma: f64, v: &[f64]) -> Vec<f64> {
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    let future: f64 = (0..mdp.n_states).map(|s2| mdp.prob(s, a, s2) * v[s2]).sum();
                    mdp.reward(s, a) + gamma * future
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

pub fn tabular_optimal_values(mdp: &TabularMdp, gamma: f64, horizon: Option<usize>) -> Vec<f64> {
    let mut v = vec![0.0; mdp.n_states];
    match horizon {
        Some(h) => {
            for _ in 0..h {
                v = bellman_backup(mdp, gamma, &v);
            }
        }
        None => {
            assert!(gamma < 1.0, "infinite horizon needs gamma < 1");
            loop {
                let next = bellman_backup(mdp, gamma, &v);
                let delta = next
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                v = next;
                if delta <= 1e-14 * v.iter().map(|x| x.abs()).fold(1.0, f64::max) {
                    break;
                }
            }
        }
    }
    v
}

/// Planar double integrator driven towards a goal.
///
/// Observation `[p - goal, v]`; force bounded by 1 per axis, position held in
/// `[-2, 2]^2`, velocity clamped to `[-2, 2]`. Reward
/// `-|p' - goal| - 0.01 |f|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMass {
    pub goal: [f64; 2],
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub horizon: usize,
    t: usize,
}

impl PointMass {
    pub const DT: f64 = 0.05;
    pub const BOX: f64 = 2.0;
    pub const MAX_SPEED: f64 = 2.0;
    pub const MAX_FORCE: f64 = 1.0;

    pub fn new(goal: [f64; 2], horizon: usize) -> Self {
        Self {
            goal,
            pos: [0.0; 2],
            vel: [0.0; 2],
            horizon,
            t: 0,
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![
            self.pos[0] - self.goal[0],
            self.pos[1] - self.goal[1],
            self.vel[0],
            self.vel[1],
        ]
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
    }
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new([0.0, 0.0], 100)
    }
}

impl Environment for PointMass {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 4,
            action_dim: 2,
            action_bound: Self::MAX_FORCE,
            horizon: self.horizon,
            gamma: 0.99,
        }
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.pos = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        self.vel = [0.0; 2];
        self.t = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64], _rng: &mut dyn RngCore) -> Result<Step> {
        check_action(action, 2)?;
        let mut force_sq = 0.0;
        for i in 0..2 {
            let f = action[i].clamp(-Self::MAX_FORCE, Self::MAX_FORCE);
            force_sq += f * f;
            self.vel[i] = (self.vel[i] + f * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
            self.pos[i] = (self.pos[i] + self.vel[i] * Self::DT).clamp(-Self::BOX, Self::BOX);
        }
        let dist = ((self.pos[0] - self.goal[0]).powi(2) + (self.pos[1] - self.goal[1]).powi(2)).sqrt();
        self.t += 1;
        Ok(Step {
            state: self.observation(),
            reward: -dist - 0.01 * force_sq,
            terminal: false,
            done: self.t >= self.horizon,
        })
    }

    fn reward_range(&self) -> (f64, f64) {
        let far = |g: f64| (g - Self::BOX).abs().max((g + Self::BOX).abs());
        let max_dist = far(self.goal[0]).hypot(far(self.goal[1]));
        (-max_dist - 0.01 * 2.0 * Self::MAX_FORCE.powi(2), 0.0)
    }
}

/// Torque-limited pendulum swing-up; angle 0 is upright.
///
/// Observation `[cos th, sin th, th_dot]`; reward
/// `-(th^2 + 0.1 th_dot^2 + 0.001 u^2)` on the pre-step state with `th`
/// wrapped to `[-pi, pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pendulum {
    pub theta: f64,
    pub theta_dot: f64,
    pub horizon: usize,
    t: usize,
}

pub fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub const G: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const MAX_SPEED: f64 = 8.0;

    pub fn new(horizon: usize) -> Self {
        Self {
            theta: 0.0,
            theta_dot: 0.0,
            horizon,
            t: 0,
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new(200)
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 3,
            action_dim: 1,
            action_bound: Self::MAX_TORQUE,
            horizon: self.horizon,
            gamma: 0.99,
        }
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.theta = rng.random_range(-PI..=PI);
        self.theta_dot = rng.random_range(-1.0..=1.0);
        self.t = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64], _rng: &mut dyn RngCore) -> Result<Step> {
        check_action(action, 1)?;
        let u = action[0].clamp(-Self::MAX_TORQUE, Self::MAX_TORQUE);
        let th = wrap_angle(self.theta);
        let reward = -(th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        let acc = 3.0 * Self::G / (2.0 * Self::LENGTH) * self.theta.sin()
            + 3.0 / (Self::MASS * Self::LENGTH * Self::LENGTH) * u;
        self.theta_dot = (self.theta_dot + acc * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta = wrap_angle(self.theta + self.theta_dot * Self::DT);
        self.t += 1;
        Ok(Step {
            state: self.observation(),
            reward,
            terminal: false,
            done: self.t >= self.horizon,
        })
    }

    fn reward_range(&self) -> (f64, f64) {
        let worst = PI * PI
            + 0.1 * Self::MAX_SPEED * Self::MAX_SPEED
            + 0.001 * Self::MAX_TORQUE * Self::MAX_TORQUE;
        (-worst, 0.0)
    }
}

/// Environment selected by name.
#[derive(Clone, Debug, PartialEq)]
pub enum Env {
    Tabular(TabularMdp),
    PointMass(PointMass),
    Pendulum(Pendulum),
}

impl Env {
    pub const NAMES: [&'static str; 3] = ["tabular", "pointmass", "pendulum"];

    /// `env_seed` picks the tabular instance and is ignored otherwise.
    pub fn by_name(name: &str, env_seed: u64) -> Result<Self> {
        match name {
            "tabular" => Ok(Env::Tabular(TabularMdp::generate(env_seed, 10, 0.9))),
            "pointmass" => Ok(Env::PointMass(PointMass::default())),
            "pendulum" => Ok(Env::Pendulum(Pendulum::default())),
            other => Err(Error::InvalidEnv(format!(
                "unknown environment `{other}` (expected one of {:?})",
                Self::NAMES
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Env::Tabular(_) => "tabular",
            Env::PointMass(_) => "pointmass",
            Env::Pendulum(_) => "pendulum",
        }
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            Env::Tabular(e) => e,
            Env::PointMass(e) => e,
            Env::Pendulum(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            Env::Tabular(e) => e,
            Env::PointMass(e) => e,
            Env::Pendulum(e) => e,
        }
    }
}

impl Environment for Env {
    fn spec(&self) -> EnvSpec {
        self.inner().spec()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.inner_mut().reset(rng)
    }

    fn step(&mut self, action: &[f64], rng: &mut dyn RngCore) -> Result<Step> {
        self.inner_mut().step(action, rng)
    }

    fn reward_range(&self) -> (f64, f64) {
        self.inner().reward_range()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn tabular_reset_is_one_hot() {
        let mut env = TabularMdp::generate(3, 10, 0.99);
        let s = env.reset(&mut rng(0));
        assert_eq!(s.len(), 2);
        assert_eq!(s.iter().sum::<f64>(), 1.0);
        assert!(s.iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn reset_is_deterministic() {
        for name in Env::NAMES {
            let mut a = Env::by_name(name, 5).unwrap();
            let mut b = a.clone();
            assert_eq!(a.reset(&mut rng(11)), b.reset(&mut rng(11)));
        }
    }

    #[test]
    fn pointmass_reset_in_box() {
        let mut env = PointMass::default();
        let mut r = rng(2);
        for _ in 0..1000 {
            let s = env.reset(&mut r);
            assert!(s[..2].iter().all(|x| (-1.0..=1.0).contains(x)));
            assert_eq!(&s[2..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn pointmass_at_goal_rests() {
        let mut env = PointMass::default();
        env.set_state([0.0, 0.0], [0.0, 0.0]);
        let st = env.step(&[0.0, 0.0], &mut rng(0)).unwrap();
        assert_eq!(st.reward, 0.0);
    }

    #[test]
    fn pendulum_upright_equilibrium() {
        let mut env = Pendulum::default();
        env.set_state(0.0, 0.0);
        let st = env.step(&[0.0], &mut rng(0)).unwrap();
        assert_eq!(st.reward, 0.0);
        assert_eq!(st.state, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn deterministic_table_lookup() {
        let mut env =
            TabularMdp::deterministic(&[[1, 0], [1, 1]], vec![0.0, 0.1, 1.0, 0.5], vec![1.0, 0.0], 10, 0.9)
                .unwrap();
        env.reset(&mut rng(0));
        let st = env.step(&[-0.3], &mut rng(0)).unwrap();
        assert_eq!(st.state, vec![0.0, 1.0]);
        assert_eq!(st.reward, 0.0);
        let st = env.step(&[0.7], &mut rng(0)).unwrap();
        assert_eq!(st.state, vec![0.0, 1.0]);
        assert_eq!(st.reward, 0.5);
    }

    #[test]
    fn nan_action_rejected() {
        let mut env = Pendulum::default();
        assert!(matches!(env.step(&[f64::NAN], &mut rng(0)), Err(Error::NanAction)));
    }

    #[test]
    fn episodes_end_at_horizon() {
        let mut env = Env::by_name("tabular", 1).unwrap();
        let mut r = rng(0);
        env.reset(&mut r);
        for t in 1..=10 {
            let st = env.step(&[0.5], &mut r).unwrap();
            assert_eq!(st.done, t == 10);
            assert!(!st.terminal);
        }
    }

    #[test]
    fn zero_rewards_give_zero_value() {
        let mut mdp = TabularMdp::generate(0, 10, 0.99);
        mdp.rewards = vec![0.0; 4];
        assert_eq!(tabular_optimal_return(&mdp, 0.99, None), 0.0);
        assert_eq!(tabular_optimal_return(&mdp, 0.99, Some(10)), 0.0);
    }

    #[test]
    fn self_loop_geometric_series() {
        let mdp =
            TabularMdp::deterministic(&[[0, 0], [1, 1]], vec![1.0, 1.0, 0.0, 0.0], vec![1.0, 0.0], 10, 0.9)
                .unwrap();
        let v = tabular_optimal_return(&mdp, 0.9, None);
        assert!((v - 10.0).abs() < 1e-10, "{v}");
    }

    #[test]
    fn reward_ranges() {
        let (lo, hi) = Pendulum::default().reward_range();
        assert!((lo + 16.2736044).abs() < 1e-6 && hi == 0.0);
        let (lo, _) = PointMass::default().reward_range();
        assert!((lo + (8f64.sqrt() + 0.02)).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        for x in [-10.0, -PI, 0.0, PI, 3.5, 100.0] {
            let w = wrap_angle(x);
            assert!((-PI..PI).contains(&w));
            assert!(((x - w) / (2.0 * PI)).fract().abs() < 1e-9 || ((x - w) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
    }
}
