//! Finite MDPs, exact Bellman fixed points, and the chi-square robust value.
//!
//! [`TabularMdp`] and [`TabularPolicy`] carry the transition kernel, rewards and
//! a stochastic policy. [`policy_evaluation`] and [`value_iteration`] compute the
//! fixed points of the evaluation and optimality operators, and
//! [`enumerate_return_distribution`] expands every finite-horizon rollout into a
//! [`TrajectoryDistribution`].
//!
//! The [`chi_square`] module holds the worst-case reduction over a chi-square
//! ball around a trajectory distribution; [`oracle`] minimizes the same problem
//! numerically, and [`verify`] compares the two.

pub mod chi_square;
pub mod oracle;
pub mod verify;

use rand::Rng as _;
use serde::Deserialize;

pub use chi_square::{
    alpha_max, centered_returns, chi_square_divergence, return_variance,
    worst_case_distribution, Outcome, TrajectoryDistribution,
};
pub use oracle::{robust_value_oracle, OracleConfig, OracleMethod, OracleResult};
pub use verify::{verify_chi_square_ball, ChiSquareBallResult, VerifyOptions};

use crate::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Default iteration cap for the fixed-point solvers.
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

/// Default cap on the number of enumerated rollouts.
pub const DEFAULT_OUTCOME_CAP: usize = 1_000_000;

/// Finite MDP with tabular kernel `transition[s][a][s']` and rewards `reward[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    horizon: usize,
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidMdp(format!("{what}: negative or non-finite probability")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidMdp(format!("{what}: probabilities sum to {sum}")));
    }
    Ok(())
}

impl TabularMdp {
    /// `transition` is flattened in `(s, a, s')` order, `reward` in `(s, a)` order.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        horizon: usize,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidMdp(format!(
                "transition table has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::InvalidMdp(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside (0, 1)")));
        }
        if horizon == 0 {
            return Err(Error::InvalidMdp("horizon must be at least 1".into()));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("non-finite reward".into()));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_row(row, &format!("P(.|s={}, a={})", i / n_actions, i % n_actions))?;
        }
        Ok(Self { n_states, n_actions, transition, reward, gamma, horizon })
    }

    /// Random MDP with Dirichlet(1) transition rows and rewards uniform in `[0, 1)`.
    pub fn random(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        horizon: usize,
        rng: &mut crate::rng::Rng,
    ) -> Result<Self> {
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transition.extend(random_simplex_point(n_states, rng));
        }
        let reward = (0..n_states * n_actions).map(|_| rng.gen::<f64>()).collect();
        Self::new(n_states, n_actions, transition, reward, gamma, horizon)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Parses the `[mdp]` table of a TOML document (see [`MdpFile`]).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            mdp: MdpFile,
        }
        let doc: Doc = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        doc.mdp.build()
    }
}

/// Key schema of an MDP in a TOML config:
///
/// ```toml
/// [mdp]
/// gamma = 0.9
/// horizon = 3
/// # transition[s][a][s']
/// transition = [[[0.5, 0.5]], [[0.0, 1.0]]]
/// # reward[s][a]
/// reward = [[0.0], [1.0]]
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub gamma: f64,
    pub horizon: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
}

impl MdpFile {
    pub fn build(&self) -> Result<TabularMdp> {
        let n_states = self.transition.len();
        let n_actions = self.transition.first().map_or(0, Vec::len);
        if self.transition.iter().any(|rows| rows.len() != n_actions)
            || self.reward.len() != n_states
            || self.reward.iter().any(|r| r.len() != n_actions)
        {
            return Err(Error::InvalidMdp("ragged transition or reward table".into()));
        }
        let transition: Vec<f64> = self.transition.iter().flatten().flatten().copied().collect();
        let reward: Vec<f64> = self.reward.iter().flatten().copied().collect();
        TabularMdp::new(n_states, n_actions, transition, reward, self.gamma, self.horizon)
    }
}

pub(crate) fn random_simplex_point(n: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    // Dirichlet(1): normalized exponentials.
    let mut v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
    v
}

/// Stochastic policy `probs[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions || n_actions == 0 {
            return Err(Error::InvalidArgument(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_row(row, &format!("pi(.|s={s})")).map_err(|e| match e {
                Error::InvalidMdp(m) => Error::InvalidArgument(m),
                other => other,
            })?;
        }
        Ok(Self { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self { n_states, n_actions, probs: vec![p; n_states * n_actions] }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidArgument(format!("action {a} out of range")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    pub fn random(n_states: usize, n_actions: usize, rng: &mut crate::rng::Rng) -> Self {
        let probs = (0..n_states).flat_map(|_| random_simplex_point(n_actions, rng)).collect();
        Self { n_states, n_actions, probs }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    fn check_against(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::InvalidArgument(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states, self.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(())
    }
}

/// Action-value table indexed `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `‖self − other‖∞`.
    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// One application of `T^π` (`policy = Some`) or `T*` (`policy = None`).
pub fn bellman_backup(mdp: &TabularMdp, policy: Option<&TabularPolicy>, q: &QTable) -> QTable {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let next_value: Vec<f64> = (0..ns)
        .map(|s| match policy {
            Some(pi) => (0..na).map(|a| pi.prob(s, a) * q.get(s, a)).sum(),
            None => (0..na).map(|a| q.get(s, a)).fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    let mut values = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let expected: f64 =
                mdp.transition_row(s, a).iter().zip(&next_value).map(|(p, v)| p * v).sum();
            values.push(mdp.reward(s, a) + mdp.gamma * expected);
        }
    }
    QTable { n_actions: na, values }
}

fn fixed_point(
    mdp: &TabularMdp,
    policy: Option<&TabularPolicy>,
    tol: f64,
    max_iterations: usize,
) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let mut q = QTable { n_actions: mdp.n_actions, values: vec![0.0; mdp.n_states * mdp.n_actions] };
    let mut residual = f64::INFINITY;
    for _ in 0..max_iterations {
        let next = bellman_backup(mdp, policy, &q);
        residual = next.max_abs_diff(&q);
        if !residual.is_finite() {
            break;
        }
        q = next;
        // ‖TQ' − Q'‖ ≤ γ‖Q' − Q‖
        if mdp.gamma * residual <= tol {
            return Ok(q);
        }
    }
    Err(Error::NonConvergence { iterations: max_iterations, residual })
}

/// Fixed point of `T^π Q = r + γ P π Q`, returned once `‖T^π Q − Q‖∞ ≤ tol`.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &TabularPolicy, tol: f64) -> Result<QTable> {
    policy.check_against(mdp)?;
    fixed_point(mdp, Some(policy), tol, DEFAULT_MAX_ITERATIONS)
}

/// Fixed point of `T* Q = r + γ P max_a Q`, returned once `‖T* Q − Q‖∞ ≤ tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    fixed_point(mdp, None, tol, DEFAULT_MAX_ITERATIONS)
}

/// Expected `horizon`-step truncated return `E[Σ_{t<H} γ^t r_t | s0, a0]` by backward recursion.
pub fn truncated_q(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<QTable> {
    policy.check_against(mdp)?;
    let mut q = QTable { n_actions: mdp.n_actions, values: mdp.reward.clone() };
    for _ in 1..mdp.horizon {
        q = bellman_backup(mdp, Some(policy), &q);
    }
    Ok(q)
}

/// Every rollout of length `mdp.horizon()` from `(s0, a0)` under `policy`, with its
/// probability and discounted return `Σ_{t<H} γ^t r(s_t, a_t)`.
///
/// Zero-probability branches are pruned. Fails once more than `cap` outcomes
/// are alive at any depth.
pub fn enumerate_return_distribution(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    s0: usize,
    a0: usize,
    cap: usize,
) -> Result<TrajectoryDistribution> {
    policy.check_against(mdp)?;
    if s0 >= mdp.n_states || a0 >= mdp.n_actions {
        return Err(Error::InvalidArgument(format!("start pair ({s0}, {a0}) out of range")));
    }
    // (state, action, prob, return so far)
    let mut frontier = vec![(s0, a0, 1.0_f64, mdp.reward(s0, a0))];
    let mut discount = 1.0;
    for _ in 1..mdp.horizon {
        discount *= mdp.gamma;
        let mut next = Vec::new();
        for &(s, a, p, ret) in &frontier {
            for (s2, &ps) in mdp.transition_row(s, a).iter().enumerate() {
                if ps == 0.0 {
                    continue;
                }
                for a2 in 0..mdp.n_actions {
                    let pa = policy.prob(s2, a2);
                    if pa == 0.0 {
                        continue;
                    }
                    next.push((s2, a2, p * ps * pa, ret + discount * mdp.reward(s2, a2)));
                    if next.len() > cap {
                        return Err(Error::OutcomeCapExceeded { count: next.len(), cap });
                    }
                }
            }
        }
        frontier = next;
    }
    // Products of rows summing to 1 drift from 1 only by rounding; renormalize.
    let total: f64 = frontier.iter().map(|o| o.2).sum();
    TrajectoryDistribution::new(
        frontier.into_iter().map(|(_, _, p, ret)| Outcome { prob: p / total, ret }).collect(),
    )
}
