//! Truncated-quantile actor-critic with a std-penalized actor objective.
//!
//! `C` critics each predict `M` atoms of `Z(s, a)`. Targets pool all target
//! critics' atoms at `(s′, a′)`, keep the `(M − d)·C` smallest and subtract the
//! entropy bonus. The actor maximizes the critic average of `mean − α·std`
//! plus entropy; the temperature `η` tracks an entropy target.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::envs::{Env, EnvParams};
use crate::nn::{collect_grads, Adam, Checkpoint, LrSchedule, Mlp, MlpSpec};
use crate::quantile::{standard_normal, PenaltyConfig, StdNormalization};
use crate::replay::{Batch, ReplayBuffer, Transition};
use crate::rng::{derive_seed, seeded, Rng};
use crate::{Error, Result};

const LN_2: f64 = std::f64::consts::LN_2;
const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TqcConfig {
    pub n_critics: usize,
    pub n_quantiles: usize,
    /// Atoms dropped per critic from the pooled target.
    pub drop_per_critic: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub gamma: f64,
    /// Polyak coefficient for the target critics.
    pub beta: f64,
    pub batch_size: usize,
    /// Learning rate at the first gradient step, decayed linearly to `lr_final`.
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Defaults to `−action_dim`.
    pub entropy_target: Option<f64>,
    pub buffer_capacity: usize,
    pub critic_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    /// Uniform random actions before this many environment steps.
    pub learning_starts: u64,
    pub initial_eta: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub std_normalization: StdNormalization,
}

impl Default for TqcConfig {
    fn default() -> Self {
        Self {
            n_critics: 5,
            n_quantiles: 25,
            drop_per_critic: 2,
            alpha: 0.0,
            kappa: 1.0,
            gamma: 0.99,
            beta: 0.005,
            batch_size: 256,
            lr_initial: 7.3e-4,
            lr_final: 0.0,
            entropy_target: None,
            buffer_capacity: 1_000_000,
            critic_hidden: vec![512, 512, 512],
            actor_hidden: vec![256, 256],
            learning_starts: 1000,
            initial_eta: 1.0,
            log_std_min: -20.0,
            log_std_max: 2.0,
            std_normalization: StdNormalization::MeanSquare,
        }
    }
}

impl TqcConfig {
    /// Two critics and narrower networks, sized for a single core.
    pub fn desk() -> Self {
        Self { n_critics: 2, critic_hidden: vec![128, 128], actor_hidden: vec![64, 64], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_critics == 0 || self.n_quantiles == 0 {
            return bad("n_critics and n_quantiles must be >= 1");
        }
        if self.drop_per_critic >= self.n_quantiles {
            return bad("drop_per_critic must be < n_quantiles");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta must lie in [0, 1]");
        }
        if !(self.kappa > 0.0 && self.lr_initial > 0.0 && self.lr_final >= 0.0 && self.initial_eta > 0.0) {
            return bad("kappa, lr_initial and initial_eta must be positive, lr_final >= 0");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must hold at least one batch of >= 1");
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max");
        }
        Ok(())
    }

    pub fn kept_per_critic(&self) -> usize {
        self.n_quantiles - self.drop_per_critic
    }

    pub fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig::new(self.alpha, self.std_normalization)
    }
}

/// State to `(mean, log_std)` of a Gaussian, squashed by `tanh` into
/// `[−limit, limit]` per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub action_dim: usize,
    pub action_limit: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

/// `ln(1 − tanh²(u)) = 2·(ln 2 − u − softplus(−2u))`, stable for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - crate::autodiff::softplus(-2.0 * u))
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize], action_limit: f64, cfg: &TqcConfig, rng: &mut Rng) -> Result<Self> {
        let spec = MlpSpec::new(obs_dim, hidden, 2 * action_dim)?;
        Ok(Self {
            net: Mlp::new(spec, rng),
            action_dim,
            action_limit,
            log_std_min: cfg.log_std_min,
            log_std_max: cfg.log_std_max,
        })
    }

    /// Squashed actions and their log-densities for standard-normal noise
    /// `eps` (one row per state).
    pub fn sample_with_noise(&self, states: &Tensor, eps: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let out = self.net.forward(states)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("policy output".into()));
        }
        let d = self.action_dim;
        let mut actions = Tensor::zeros(states.rows(), d);
        let mut log_probs = Vec::with_capacity(states.rows());
        for r in 0..states.rows() {
            let row = out.row(r);
            let mut lp = 0.0;
            for j in 0..d {
                let ls = row[d + j].clamp(self.log_std_min, self.log_std_max);
                let e = eps.get(r, j);
                let u = row[j] + ls.exp() * e;
                actions.set(r, j, u.tanh() * self.action_limit);
                lp += -0.5 * e * e - ls - HALF_LN_TWO_PI - self.action_limit.ln() - log_one_minus_tanh_sq(u);
            }
            log_probs.push(lp);
        }
        Ok((actions, log_probs))
    }

    /// `tanh(mean)·limit`.
    pub fn deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward(&Tensor::from_vec(1, obs.len(), obs.to_vec())?)?;
        Ok(out.data()[..self.action_dim].iter().map(|m| m.tanh() * self.action_limit).collect())
    }

    /// Records the reparameterized sample on `g`. Returns `(action n×d,
    /// log_prob n×1, parameter leaves)`.
    pub fn sample_graph(&self, g: &mut Graph, states: NodeId, eps: &Tensor, trainable: bool) -> (NodeId, NodeId, Vec<NodeId>) {
        let d = self.action_dim;
        let (out, leaves) = self.net.forward_graph(g, states, trainable);
        let mean = g.slice_cols(out, 0, d);
        let raw = g.slice_cols(out, d, 2 * d);
        let log_std = g.clamp(raw, self.log_std_min, self.log_std_max);
        let std = g.exp(log_std);
        let e = g.constant(eps.clone());
        let noise = g.mul(std, e);
        let u = g.add(mean, noise);
        let t = g.tanh(u);
        let action = g.scale(t, self.action_limit);
        let density = g.gaussian_log_density(u, mean, log_std);
        // ln(1 − tanh²u) = −2·(u + softplus(−2u)) + 2 ln 2
        let m2u = g.scale(u, -2.0);
        let sp = g.softplus(m2u);
        let s = g.add(u, sp);
        let s = g.scale(s, -2.0);
        let correction = g.shift(s, 2.0 * LN_2);
        let per_dim = g.sub(density, correction);
        let summed = g.row_sum(per_dim);
        let log_prob = g.shift(summed, -(d as f64) * self.action_limit.ln());
        (action, log_prob, leaves)
    }
}

/// One squashed-Gaussian draw at `obs` and its log-density.
pub fn sample_action(policy: &GaussianPolicy, obs: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, f64)> {
    let eps = Tensor::from_vec(1, policy.action_dim, (0..policy.action_dim).map(|_| standard_normal(rng)).collect())?;
    let (a, lp) = policy.sample_with_noise(&Tensor::from_vec(1, obs.len(), obs.to_vec())?, &eps)?;
    Ok((a.into_vec(), lp[0]))
}

fn gaussian_noise(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| standard_normal(rng)).collect()).expect("shape")
}

/// Pools the atoms of every critic, sorts them, and keeps the
/// `(M − d)·C` smallest.
pub fn pool_and_truncate(atoms: &[&[f64]], d: usize) -> Result<Vec<f64>> {
    let m = atoms.first().map_or(0, |a| a.len());
    if m == 0 || atoms.iter().any(|a| a.len() != m) {
        return Err(Error::Shape("critics must share a non-zero atom count".into()));
    }
    if d >= m {
        return Err(Error::InvalidArgument(format!("cannot drop {d} of {m} atoms")));
    }
    let mut pooled: Vec<f64> = atoms.iter().flat_map(|a| a.iter().copied()).collect();
    pooled.sort_by(f64::total_cmp);
    pooled.truncate((m - d) * atoms.len());
    Ok(pooled)
}

fn critic_input(states: &Tensor, actions: &Tensor) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = (0..states.rows())
        .map(|r| states.row(r).iter().chain(actions.row(r)).copied().collect())
        .collect();
    Tensor::from_rows(&rows)
}

/// `y_i = r + γ·(z_(i)(s′, a′) − η·log π(a′|s′))`, or `r` on terminal
/// transitions. One row of `(M − d)·C` targets per transition.
pub fn compute_targets(
    batch: &Batch,
    target_critics: &[Mlp],
    policy: &GaussianPolicy,
    eta: f64,
    cfg: &TqcConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = batch.len();
    let eps = gaussian_noise(n, policy.action_dim, rng);
    let (next_actions, next_logp) = policy.sample_with_noise(&batch.next_states, &eps)?;
    let input = critic_input(&batch.next_states, &next_actions)?;
    let outs: Vec<Tensor> = target_critics.iter().map(|c| c.forward(&input)).collect::<Result<_>>()?;
    let kept = (cfg.n_quantiles - cfg.drop_per_critic) * target_critics.len();
    let mut y = Tensor::zeros(n, kept);
    for i in 0..n {
        let rows: Vec<&[f64]> = outs.iter().map(|o| o.row(i)).collect();
        let z = pool_and_truncate(&rows, cfg.drop_per_critic)?;
        let r = batch.rewards[i];
        for (j, zj) in z.iter().enumerate() {
            let v = if batch.dones[i] { r } else { r + cfg.gamma * (zj - eta * next_logp[i]) };
            y.set(i, j, v);
        }
    }
    Ok(y)
}

/// Quantile Huber loss of one critic against `targets` and its gradients.
pub fn critic_loss(critic: &Mlp, states: &Tensor, actions: &Tensor, targets: &Tensor, kappa: f64) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let s = g.constant(states.clone());
    let a = g.constant(actions.clone());
    let x = g.concat_cols(s, a);
    let (atoms, leaves) = critic.forward_graph(&mut g, x, true);
    let loss = g.quantile_huber(atoms, targets.clone(), kappa);
    let value = g.value(loss).item();
    let mut grads = g.backward(loss)?;
    Ok((value, collect_grads(&mut grads, &leaves, critic)))
}

/// `mean − α·std` of each row of `atoms` (n×M), as an n×1 node.
fn xi_graph(g: &mut Graph, atoms: NodeId, penalty: &PenaltyConfig) -> NodeId {
    let mean = g.row_mean(atoms);
    if penalty.alpha == 0.0 {
        return mean;
    }
    let m = g.value(atoms).cols();
    let b = g.broadcast_cols(mean, m);
    let c = g.sub(atoms, b);
    let sq = g.square(c);
    let var = match penalty.std_normalization {
        StdNormalization::MeanSquare => g.row_mean(sq),
        StdNormalization::SumSquare => g.row_sum(sq),
    };
    let std = g.sqrt(var);
    let pen = g.scale(std, penalty.alpha);
    g.sub(mean, pen)
}

/// `E[η·log π(a|s) − (1/C)·Σ_c ξ_α(Z_c(s, a))]` with `a` reparameterized by
/// `eps`. Gradients are for the policy parameters only.
pub fn actor_loss(
    policy: &GaussianPolicy,
    critics: &[Mlp],
    states: &Tensor,
    eps: &Tensor,
    eta: f64,
    penalty: &PenaltyConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let s = g.constant(states.clone());
    let (action, log_prob, leaves) = policy.sample_graph(&mut g, s, eps, true);
    let x = g.concat_cols(s, action);
    let mut total: Option<NodeId> = None;
    for critic in critics {
        let (atoms, _) = critic.forward_graph(&mut g, x, false);
        let xi = xi_graph(&mut g, atoms, penalty);
        total = Some(match total {
            Some(t) => g.add(t, xi),
            None => xi,
        });
    }
    let q = g.scale(total.expect("at least one critic"), 1.0 / critics.len() as f64);
    let ent = g.scale(log_prob, eta);
    let per_row = g.sub(ent, q);
    let loss = g.mean(per_row);
    let value = g.value(loss).item();
    let mut grads = g.backward(loss)?;
    Ok((value, collect_grads(&mut grads, &leaves, &policy.net)))
}

/// `∂J/∂(log η)` with `log π` held constant: `E[−log π − H]`.
pub fn temperature_gradient(log_probs: &[f64], entropy_target: f64) -> f64 {
    log_probs.iter().map(|lp| -lp - entropy_target).sum::<f64>() / log_probs.len() as f64
}

/// One plain gradient step on `log η`.
pub fn temperature_update(eta: f64, log_probs: &[f64], entropy_target: f64, lr: f64) -> Result<f64> {
    if !(eta > 0.0) || log_probs.is_empty() {
        return Err(Error::InvalidArgument("eta must be positive and log_probs non-empty".into()));
    }
    Ok((eta.ln() - lr * temperature_gradient(log_probs, entropy_target)).exp())
}

/// `target ← beta·online + (1 − beta)·target`.
pub fn polyak_update(online: &Mlp, target: &mut Mlp, beta: f64) {
    target.polyak_from(online, beta);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct TqcAgent {
    pub cfg: TqcConfig,
    pub policy: GaussianPolicy,
    pub critics: Vec<Mlp>,
    pub target_critics: Vec<Mlp>,
    pub buffer: ReplayBuffer,
    entropy_target: f64,
    log_eta: Vec<Tensor>,
    actor_opt: Adam,
    critic_opts: Vec<Adam>,
    eta_opt: Adam,
    act_rng: Rng,
    sample_rng: Rng,
    noise_rng: Rng,
    env_steps: u64,
}

impl TqcAgent {
    /// `lr_steps` sets the length of the linear learning-rate decay.
    pub fn new(obs_dim: usize, action_dim: usize, action_limit: f64, cfg: TqcConfig, seed: u64, lr_steps: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = seeded(derive_seed(seed, 0));
        let policy = GaussianPolicy::new(obs_dim, action_dim, &cfg.actor_hidden, action_limit, &cfg, &mut init)?;
        let critic_spec = MlpSpec::new(obs_dim + action_dim, &cfg.critic_hidden, cfg.n_quantiles)?;
        let critics: Vec<Mlp> = (0..cfg.n_critics).map(|_| Mlp::new(critic_spec.clone(), &mut init)).collect();
        let schedule = LrSchedule::Linear { initial: cfg.lr_initial, final_lr: cfg.lr_final, total_steps: lr_steps };
        let log_eta = vec![Tensor::scalar(cfg.initial_eta.ln())];
        Ok(Self {
            entropy_target: cfg.entropy_target.unwrap_or(-(action_dim as f64)),
            actor_opt: Adam::new(schedule, policy.net.params()),
            critic_opts: critics.iter().map(|c| Adam::new(schedule, c.params())).collect(),
            eta_opt: Adam::new(schedule, &log_eta),
            log_eta,
            target_critics: critics.clone(),
            critics,
            policy,
            buffer: ReplayBuffer::new(cfg.buffer_capacity, obs_dim, action_dim)?,
            act_rng: seeded(derive_seed(seed, 1)),
            sample_rng: seeded(derive_seed(seed, 2)),
            noise_rng: seeded(derive_seed(seed, 4)),
            env_steps: 0,
            cfg,
        })
    }

    pub fn eta(&self) -> f64 {
        self.log_eta[0].item().exp()
    }

    pub fn entropy_target(&self) -> f64 {
        self.entropy_target
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Uniform in the action box before `learning_starts`, a policy draw after.
    pub fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        use rand::Rng as _;
        if self.env_steps < self.cfg.learning_starts {
            let lim = self.policy.action_limit;
            return Ok((0..self.policy.action_dim).map(|_| self.act_rng.gen_range(-lim..=lim)).collect());
        }
        Ok(sample_action(&self.policy, obs, &mut self.act_rng)?.0)
    }

    /// One update in the order: targets, `η`, actor, critics, target critics.
    pub fn train_step(&mut self) -> Result<TrainStats> {
        let batch = self.buffer.sample(self.cfg.batch_size, &mut self.sample_rng)?;
        let targets = compute_targets(&batch, &self.target_critics, &self.policy, self.eta(), &self.cfg, &mut self.noise_rng)?;

        let eps = gaussian_noise(batch.len(), self.policy.action_dim, &mut self.noise_rng);
        let (_, log_probs) = self.policy.sample_with_noise(&batch.states, &eps)?;
        let grad = Tensor::scalar(temperature_gradient(&log_probs, self.entropy_target));
        self.eta_opt.step(&mut self.log_eta, std::slice::from_ref(&grad))?;
        let eta = self.eta();

        let (actor_value, actor_grads) = actor_loss(&self.policy, &self.critics, &batch.states, &eps, eta, &self.cfg.penalty())?;
        self.actor_opt.step(self.policy.net.params_mut(), &actor_grads)?;

        let mut critic_total = 0.0;
        for (critic, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let (v, grads) = critic_loss(critic, &batch.states, &batch.actions, &targets, self.cfg.kappa)?;
            opt.step(critic.params_mut(), &grads)?;
            critic_total += v;
        }
        for (online, target) in self.critics.iter().zip(&mut self.target_critics) {
            polyak_update(online, target, self.cfg.beta);
        }
        let stats = TrainStats { critic_loss: critic_total / self.critics.len() as f64, actor_loss: actor_value, eta };
        if !(stats.critic_loss.is_finite() && stats.actor_loss.is_finite() && eta.is_finite()) {
            return Err(Error::NonFinite(format!("TQC update {stats:?}")));
        }
        Ok(stats)
    }

    pub fn observe(&mut self, t: &Transition) -> Result<Option<TrainStats>> {
        self.buffer.push(t)?;
        self.env_steps += 1;
        if self.env_steps >= self.cfg.learning_starts && self.buffer.len() >= self.cfg.batch_size {
            return self.train_step().map(Some);
        }
        Ok(None)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let p = &self.policy;
        let mut meta = vec![
            p.net.spec().input_dim as f64,
            p.action_dim as f64,
            p.action_limit,
            p.log_std_min,
            p.log_std_max,
        ];
        meta.extend(p.net.spec().hidden.iter().map(|&h| h as f64));
        ck.push_values("tqc.meta", meta);
        ck.push_scalar("alpha", self.cfg.alpha);
        ck.push_scalar("eta", self.eta());
        ck.push_mlp("policy", &p.net);
        for (c, net) in self.critics.iter().enumerate() {
            ck.push_mlp(&format!("critic{c}"), net);
        }
        ck
    }
}

/// Rebuilds the policy from [`TqcAgent::checkpoint`] output.
pub fn policy_from_checkpoint(ck: &Checkpoint) -> Result<GaussianPolicy> {
    let meta = &ck.section("tqc.meta")?.values;
    if meta.len() < 5 {
        return Err(Error::Checkpoint("tqc.meta too short".into()));
    }
    let hidden: Vec<usize> = meta[5..].iter().map(|&h| h as usize).collect();
    let (obs, d) = (meta[0] as usize, meta[1] as usize);
    let mut net = Mlp::zeros(MlpSpec::new(obs, &hidden, 2 * d)?);
    ck.load_mlp("policy", &mut net)?;
    Ok(GaussianPolicy { net, action_dim: d, action_limit: meta[2], log_std_min: meta[3], log_std_max: meta[4] })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TqcLogRow {
    pub step: u64,
    pub episode: u64,
    pub ret: f64,
    /// Episode means over gradient steps; NaN before learning starts.
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct TqcRun {
    pub agent: TqcAgent,
    pub log: Vec<TqcLogRow>,
}

fn continuous_action(env: &EnvParams) -> Result<f64> {
    match env {
        EnvParams::Pendulum(p) => Ok(p.torque_limit),
        EnvParams::CartPole(_) => Err(Error::InvalidArgument("TQC needs a continuous-action environment".into())),
    }
}

pub fn run_training(env_params: &EnvParams, cfg: &TqcConfig, seed: u64, total_steps: u64) -> Result<TqcRun> {
    let limit = continuous_action(env_params)?;
    let lr_steps = total_steps.saturating_sub(cfg.learning_starts);
    let mut agent = TqcAgent::new(env_params.observation_dim(), 1, limit, cfg.clone(), seed, lr_steps)?;
    let mut env = Env::new(env_params)?;
    let mut env_rng = seeded(derive_seed(seed, 3));
    let mut obs = env.reset(&mut env_rng);
    let mut log = Vec::new();
    let (mut ret, mut closs, mut aloss, mut n_updates, mut episode) = (0.0, 0.0, 0.0, 0usize, 0u64);
    for step in 0..total_steps {
        let action = agent.act(&obs)?;
        let s = env.step(&action)?;
        let t = Transition { state: obs, action, reward: s.reward, next_state: s.observation.clone(), done: s.terminal };
        if let Some(st) = agent.observe(&t)? {
            closs += st.critic_loss;
            aloss += st.actor_loss;
            n_updates += 1;
        }
        ret += s.reward;
        obs = s.observation;
        if s.done {
            let mean = |x: f64| if n_updates > 0 { x / n_updates as f64 } else { f64::NAN };
            log.push(TqcLogRow {
                step: step + 1,
                episode,
                ret,
                critic_loss: mean(closs),
                actor_loss: mean(aloss),
                eta: agent.eta(),
            });
            episode += 1;
            (ret, closs, aloss, n_updates) = (0.0, 0.0, 0.0, 0);
            obs = env.reset(&mut env_rng);
        }
    }
    Ok(TqcRun { agent, log })
}

/// Returns of `episodes` episodes under the deterministic action
/// `tanh(mean)·limit`; episode `k` resets from `derive_seed(seed, k)`.
pub fn evaluate(policy: &GaussianPolicy, env_params: &EnvParams, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    continuous_action(env_params)?;
    let mut env = Env::new(env_params)?;
    let mut returns = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let mut obs = env.reset(&mut seeded(derive_seed(seed, k as u64)));
        let mut ret = 0.0;
        loop {
            let s = env.step(&policy.deterministic(&obs)?)?;
            ret += s.reward;
            obs = s.observation;
            if s.done {
                break;
            }
        }
        returns.push(ret);
    }
    Ok(returns)
}
