//! Discrete-action QR-DQN whose greedy step ranks actions by `mean − α·std`.
//!
//! `penalize_train` switches the penalty on for behaviour actions and for the
//! target action at `s′`; `penalize_test` switches it on for evaluation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::envs::{Env, EnvParams};
use crate::nn::{clip_grad_norm, collect_grads, Adam, Checkpoint, LrSchedule, Mlp, MlpSpec};
use crate::quantile::{xi_alpha_atoms, PenaltyConfig, StdNormalization};
use crate::replay::{Batch, ReplayBuffer, Transition};
use crate::rng::{derive_seed, seeded, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QrdqnConfig {
    pub n_quantiles: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub gamma: f64,
    /// Environment steps between hard target copies.
    pub target_update_interval: u64,
    /// Soft target updates with this coefficient instead of hard copies.
    pub polyak: Option<f64>,
    pub buffer_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    /// Fraction of the step budget over which epsilon decays linearly.
    pub exploration_fraction: f64,
    pub learning_starts: u64,
    /// Environment steps between training bursts.
    pub train_freq: u64,
    /// Gradient steps per burst. The target is copied between bursts, so
    /// each burst regresses toward a fixed target.
    pub gradient_steps: usize,
    pub max_grad_norm: Option<f64>,
    pub penalize_train: bool,
    pub penalize_test: bool,
    pub hidden: Vec<usize>,
    pub std_normalization: StdNormalization,
}

impl Default for QrdqnConfig {
    fn default() -> Self {
        Self {
            n_quantiles: 10,
            alpha: 0.0,
            kappa: 1.0,
            lr: 2.3e-3,
            batch_size: 64,
            gamma: 0.99,
            target_update_interval: 10,
            polyak: None,
            buffer_capacity: 100_000,
            epsilon_start: 1.0,
            epsilon_final: 0.05,
            exploration_fraction: 0.2,
            learning_starts: 1000,
            train_freq: 256,
            gradient_steps: 128,
            max_grad_norm: Some(10.0),
            penalize_train: true,
            penalize_test: true,
            hidden: vec![256, 256],
            std_normalization: StdNormalization::MeanSquare,
        }
    }
}

impl QrdqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_quantiles == 0 {
            return bad("n_quantiles must be >= 1");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.kappa > 0.0) || !(self.lr > 0.0) {
            return bad("kappa and lr must be positive");
        }
        if self.batch_size == 0 || self.train_freq == 0 || self.target_update_interval == 0 {
            return bad("batch_size, train_freq and target_update_interval must be >= 1");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must hold at least one batch");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_final) {
            return bad("epsilon values must lie in [0, 1]");
        }
        if let Some(b) = self.polyak {
            if !(0.0..=1.0).contains(&b) {
                return bad("polyak must lie in [0, 1]");
            }
        }
        Ok(())
    }

    pub fn alpha_eff_train(&self) -> f64 {
        if self.penalize_train { self.alpha } else { 0.0 }
    }

    pub fn alpha_eff_test(&self) -> f64 {
        if self.penalize_test { self.alpha } else { 0.0 }
    }

    pub fn penalty(&self, alpha_eff: f64) -> PenaltyConfig {
        PenaltyConfig::new(alpha_eff, self.std_normalization)
    }

    pub fn epsilon_at(&self, step: u64, total_steps: u64) -> f64 {
        let horizon = self.exploration_fraction * total_steps as f64;
        let frac = if horizon > 0.0 { (step as f64 / horizon).min(1.0) } else { 1.0 };
        self.epsilon_start + (self.epsilon_final - self.epsilon_start) * frac
    }
}

/// Maps a state to `n_actions` blocks of `M` atoms, action-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileNetwork {
    pub net: Mlp,
    pub n_actions: usize,
    pub n_quantiles: usize,
}

impl QuantileNetwork {
    pub fn new(obs_dim: usize, n_actions: usize, n_quantiles: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let spec = MlpSpec::new(obs_dim, hidden, n_actions * n_quantiles)?;
        Ok(Self { net: Mlp::new(spec, rng), n_actions, n_quantiles })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.spec().input_dim
    }

    /// Atom rows, one per input row.
    pub fn forward(&self, states: &Tensor) -> Result<Tensor> {
        self.net.forward(states)
    }

    /// Per-action atom lists for a single state.
    pub fn atoms(&self, obs: &[f64]) -> Result<Vec<Vec<f64>>> {
        let out = self.forward(&Tensor::from_vec(1, obs.len(), obs.to_vec())?)?;
        Ok(out.data().chunks(self.n_quantiles).map(<[f64]>::to_vec).collect())
    }
}

/// Index of the largest `ξ_α` among action blocks of `row`; ties go to the
/// lowest index.
pub fn greedy_block(row: &[f64], n_quantiles: usize, penalty: &PenaltyConfig) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (a, atoms) in row.chunks(n_quantiles).enumerate() {
        let v = xi_alpha_atoms(atoms, penalty);
        if v > best.1 {
            best = (a, v);
        }
    }
    best.0
}

/// Epsilon-greedy over `ξ_α`. Always draws one uniform for the coin and, on
/// exploration, one for the action, whatever the penalty.
pub fn select_action(
    net: &QuantileNetwork,
    obs: &[f64],
    penalty: &PenaltyConfig,
    epsilon: f64,
    rng: &mut Rng,
) -> Result<usize> {
    if rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..net.n_actions));
    }
    let out = net.forward(&Tensor::from_vec(1, obs.len(), obs.to_vec())?)?;
    if !out.is_finite() {
        return Err(Error::NonFinite("quantile network output".into()));
    }
    Ok(greedy_block(out.data(), net.n_quantiles, penalty))
}

/// `y_m = r + γ·(1 − done)·θ̄ᵐ(s′, a*)` with `a*` the penalized greedy action of
/// the target network. Returns one row of `M` targets per transition.
pub fn compute_targets(batch: &Batch, target: &QuantileNetwork, gamma: f64, penalty: &PenaltyConfig) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let m = target.n_quantiles;
    let next = target.forward(&batch.next_states)?;
    let mut out = Tensor::zeros(batch.len(), m);
    for i in 0..batch.len() {
        let row = next.row(i);
        let a = greedy_block(row, m, penalty);
        let cont = if batch.dones[i] { 0.0 } else { gamma };
        let r = batch.rewards[i];
        for (j, &z) in row[a * m..(a + 1) * m].iter().enumerate() {
            out.set(i, j, r + cont * z);
        }
    }
    Ok(out)
}

/// Mean quantile Huber loss of the online atoms at `(s, a)` against `targets`
/// and its parameter gradients.
pub fn loss_and_grads(net: &QuantileNetwork, batch: &Batch, targets: Tensor, kappa: f64) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let x = g.constant(batch.states.clone());
    let (out, leaves) = net.net.forward_graph(&mut g, x, true);
    let picked = g.gather_blocks(out, &batch.action_indices(), net.n_quantiles);
    let loss = g.quantile_huber(picked, targets, kappa);
    let value = g.value(loss).item();
    let mut grads = g.backward(loss)?;
    Ok((value, collect_grads(&mut grads, &leaves, &net.net)))
}

/// Online and target networks, optimizer and replay.
#[derive(Debug, Clone)]
pub struct QrdqnAgent {
    pub cfg: QrdqnConfig,
    pub online: QuantileNetwork,
    pub target: QuantileNetwork,
    pub buffer: ReplayBuffer,
    opt: Adam,
    act_rng: Rng,
    sample_rng: Rng,
    env_steps: u64,
}

impl QrdqnAgent {
    pub fn new(obs_dim: usize, n_actions: usize, cfg: QrdqnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = seeded(derive_seed(seed, 0));
        let online = QuantileNetwork::new(obs_dim, n_actions, cfg.n_quantiles, &cfg.hidden, &mut init)?;
        let opt = Adam::new(LrSchedule::Constant { lr: cfg.lr }, online.net.params());
        Ok(Self {
            target: online.clone(),
            buffer: ReplayBuffer::new(cfg.buffer_capacity, obs_dim, 1)?,
            online,
            opt,
            act_rng: seeded(derive_seed(seed, 1)),
            sample_rng: seeded(derive_seed(seed, 2)),
            env_steps: 0,
            cfg,
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn gradient_steps_taken(&self) -> u64 {
        self.opt.steps_taken()
    }

    /// Behaviour action with the training-time penalty.
    pub fn act(&mut self, obs: &[f64], epsilon: f64) -> Result<usize> {
        let penalty = self.cfg.penalty(self.cfg.alpha_eff_train());
        select_action(&self.online, obs, &penalty, epsilon, &mut self.act_rng)
    }

    /// One sampled batch, one Adam step. Returns the loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch = self.buffer.sample(self.cfg.batch_size, &mut self.sample_rng)?;
        let penalty = self.cfg.penalty(self.cfg.alpha_eff_train());
        let targets = compute_targets(&batch, &self.target, self.cfg.gamma, &penalty)?;
        let (loss, mut grads) = loss_and_grads(&self.online, &batch, targets, self.cfg.kappa)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("QR-DQN loss".into()));
        }
        if let Some(max) = self.cfg.max_grad_norm {
            clip_grad_norm(&mut grads, max);
        }
        self.opt.step(self.online.net.params_mut(), &grads)?;
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        match self.cfg.polyak {
            Some(beta) => self.target.net.polyak_from(&self.online.net, beta),
            None => self.target = self.online.clone(),
        }
    }

    /// Stores a transition, then trains and syncs on schedule. Returns the
    /// mean loss of the gradient steps taken, if any.
    pub fn observe(&mut self, t: &Transition) -> Result<Option<f64>> {
        self.buffer.push(t)?;
        self.env_steps += 1;
        let mut loss = None;
        let ready = self.env_steps > self.cfg.learning_starts && self.buffer.len() >= self.cfg.batch_size;
        if ready && self.env_steps % self.cfg.train_freq == 0 {
            let mut sum = 0.0;
            for _ in 0..self.cfg.gradient_steps {
                sum += self.train_step()?;
            }
            if self.cfg.gradient_steps > 0 {
                loss = Some(sum / self.cfg.gradient_steps as f64);
            }
        }
        if self.env_steps % self.cfg.target_update_interval == 0 {
            self.sync_target();
        }
        Ok(loss)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let mut meta = vec![self.online.obs_dim() as f64, self.online.n_actions as f64, self.online.n_quantiles as f64];
        meta.extend(self.cfg.hidden.iter().map(|&h| h as f64));
        ck.push_values("qrdqn.meta", meta);
        ck.push_scalar("alpha", self.cfg.alpha);
        ck.push_mlp("online", &self.online.net);
        ck
    }
}

/// Rebuilds the online network from [`QrdqnAgent::checkpoint`] output.
pub fn network_from_checkpoint(ck: &Checkpoint) -> Result<QuantileNetwork> {
    let meta = &ck.section("qrdqn.meta")?.values;
    if meta.len() < 3 {
        return Err(Error::Checkpoint("qrdqn.meta too short".into()));
    }
    let hidden: Vec<usize> = meta[3..].iter().map(|&h| h as usize).collect();
    let (obs, na, m) = (meta[0] as usize, meta[1] as usize, meta[2] as usize);
    let spec = MlpSpec::new(obs, &hidden, na * m)?;
    let mut net = Mlp::zeros(spec);
    ck.load_mlp("online", &mut net)?;
    Ok(QuantileNetwork { net, n_actions: na, n_quantiles: m })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrdqnLogRow {
    pub step: u64,
    pub episode: u64,
    pub ret: f64,
    /// Mean loss over the episode's gradient steps; NaN before learning starts.
    pub loss: f64,
    pub epsilon: f64,
    pub alpha_eff_train: f64,
    pub alpha_eff_test: f64,
}

#[derive(Debug, Clone)]
pub struct QrdqnRun {
    pub agent: QrdqnAgent,
    pub log: Vec<QrdqnLogRow>,
}

fn discrete_actions(env: &EnvParams) -> Result<usize> {
    match env {
        EnvParams::CartPole(_) => Ok(2),
        EnvParams::Pendulum(_) => Err(Error::InvalidArgument("QR-DQN needs a discrete-action environment".into())),
    }
}

pub fn run_training(env_params: &EnvParams, cfg: &QrdqnConfig, seed: u64, total_steps: u64) -> Result<QrdqnRun> {
    let n_actions = discrete_actions(env_params)?;
    let mut agent = QrdqnAgent::new(env_params.observation_dim(), n_actions, cfg.clone(), seed)?;
    let mut env = Env::new(env_params)?;
    let mut env_rng = seeded(derive_seed(seed, 3));
    let mut log = Vec::new();
    let mut obs = env.reset(&mut env_rng);
    let (mut ret, mut loss_sum, mut loss_n, mut episode) = (0.0, 0.0, 0usize, 0u64);
    for step in 0..total_steps {
        let epsilon = cfg.epsilon_at(step, total_steps);
        let action = agent.act(&obs, epsilon)?;
        let s = env.step(&[action as f64])?;
        let t = Transition {
            state: obs,
            action: vec![action as f64],
            reward: s.reward,
            next_state: s.observation.clone(),
            done: s.terminal,
        };
        if let Some(l) = agent.observe(&t)? {
            loss_sum += l;
            loss_n += 1;
        }
        ret += s.reward;
        obs = s.observation;
        if s.done {
            log.push(QrdqnLogRow {
                step: step + 1,
                episode,
                ret,
                loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
                epsilon,
                alpha_eff_train: cfg.alpha_eff_train(),
                alpha_eff_test: cfg.alpha_eff_test(),
            });
            episode += 1;
            (ret, loss_sum, loss_n) = (0.0, 0.0, 0);
            obs = env.reset(&mut env_rng);
        }
    }
    Ok(QrdqnRun { agent, log })
}

/// Greedy returns of `episodes` episodes. Episode `k` resets from
/// `derive_seed(seed, k)`, so episodes are independent of evaluation order.
pub fn evaluate(net: &QuantileNetwork, penalty: &PenaltyConfig, env_params: &EnvParams, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    discrete_actions(env_params)?;
    let mut returns = Vec::with_capacity(episodes);
    let mut env = Env::new(env_params)?;
    for k in 0..episodes {
        let mut obs = env.reset(&mut seeded(derive_seed(seed, k as u64)));
        let mut ret = 0.0;
        loop {
            let out = net.forward(&Tensor::from_vec(1, obs.len(), obs)?)?;
            let a = greedy_block(out.data(), net.n_quantiles, penalty);
            let s = env.step(&[a as f64])?;
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

#[cfg(test)]
mod tests {
    use super::*;

    fn two_action_net(atoms: [[f64; 2]; 2]) -> QuantileNetwork {
        // 1 input, no hidden layer: output = bias
        let spec = MlpSpec::new(1, &[], 4).unwrap();
        let b = Tensor::from_vec(1, 4, vec![atoms[0][0], atoms[0][1], atoms[1][0], atoms[1][1]]).unwrap();
        let net = Mlp::from_params(spec, vec![Tensor::zeros(1, 4), b]).unwrap();
        QuantileNetwork { net, n_actions: 2, n_quantiles: 2 }
    }

    #[test]
    fn penalty_prefers_low_spread() {
        let net = two_action_net([[0.0, 2.0], [1.0, 1.0]]);
        let mut rng = seeded(0);
        let mean_only = PenaltyConfig::default();
        assert_eq!(select_action(&net, &[0.0], &mean_only, 0.0, &mut rng).unwrap(), 0, "tie goes low");
        let pen = PenaltyConfig::new(0.1, StdNormalization::MeanSquare);
        assert_eq!(select_action(&net, &[0.0], &pen, 0.0, &mut rng).unwrap(), 1);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let net = two_action_net([[0.0, 0.0], [5.0, 5.0]]);
        let mut rng = seeded(4);
        let n = 10_000;
        let ones = (0..n)
            .filter(|_| select_action(&net, &[0.0], &PenaltyConfig::default(), 1.0, &mut rng).unwrap() == 1)
            .count() as f64;
        assert!((ones - 5000.0).abs() < 3.0 * 50.0, "{ones}");
    }

    #[test]
    fn terminal_and_zero_discount_targets() {
        let net = two_action_net([[3.0, 4.0], [5.0, 6.0]]);
        let batch = Batch::from_transitions(&[
            Transition { state: vec![0.0], action: vec![0.0], reward: 2.0, next_state: vec![0.0], done: true },
            Transition { state: vec![0.0], action: vec![1.0], reward: 1.0, next_state: vec![0.0], done: false },
        ])
        .unwrap();
        let y = compute_targets(&batch, &net, 0.5, &PenaltyConfig::default()).unwrap();
        assert_eq!(y.row(0), &[2.0, 2.0]);
        assert_eq!(y.row(1), &[1.0 + 0.5 * 5.0, 1.0 + 0.5 * 6.0]);
        let y0 = compute_targets(&batch, &net, 0.0, &PenaltyConfig::default()).unwrap();
        assert_eq!(y0.row(1), &[1.0, 1.0]);
    }

    #[test]
    fn zero_steps_gives_empty_log() {
        let env = EnvParams::nominal(crate::envs::EnvId::CartPole);
        let cfg = QrdqnConfig { hidden: vec![8], ..Default::default() };
        let run = run_training(&env, &cfg, 0, 0).unwrap();
        assert!(run.log.is_empty());
        let fresh = QrdqnAgent::new(4, 2, cfg, 0).unwrap();
        assert_eq!(run.agent.online, fresh.online);
    }

    #[test]
    fn pendulum_rejected() {
        let env = EnvParams::nominal(crate::envs::EnvId::Pendulum);
        assert!(run_training(&env, &QrdqnConfig::default(), 0, 10).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let agent = QrdqnAgent::new(4, 2, QrdqnConfig { hidden: vec![5, 3], ..Default::default() }, 7).unwrap();
        let ck = Checkpoint::from_bytes(&agent.checkpoint().to_bytes()).unwrap();
        assert_eq!(network_from_checkpoint(&ck).unwrap(), agent.online);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = QrdqnConfig::default();
        assert_eq!(cfg.epsilon_at(0, 1000), 1.0);
        assert!((cfg.epsilon_at(100, 1000) - 0.525).abs() < 1e-12);
        assert!((cfg.epsilon_at(200, 1000) - 0.05).abs() < 1e-15);
        assert_eq!(cfg.epsilon_at(200, 1000), cfg.epsilon_at(999, 1000));
    }
}
