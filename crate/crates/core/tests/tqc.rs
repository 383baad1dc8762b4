use std::f64::consts::PI;

use chisq_rl::autodiff::Tensor;
use chisq_rl::envs::{EnvId, EnvParams};
use chisq_rl::nn::{Adam, LrSchedule, Mlp, MlpSpec};
use chisq_rl::quantile::{standard_normal, PenaltyConfig, StdNormalization};
use chisq_rl::replay::{Batch, Transition};
use chisq_rl::rng::{seeded, Rng};
use chisq_rl::tqc::{
    actor_loss, compute_targets, critic_loss, pool_and_truncate, run_training, sample_action,
    temperature_update, GaussianPolicy, TqcAgent, TqcConfig,
};
use rand::Rng as _;

fn policy(seed: u64) -> GaussianPolicy {
    GaussianPolicy::new(3, 1, &[16], 2.0, &TqcConfig::desk(), &mut seeded(seed)).unwrap()
}

fn uniform(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn normals(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| standard_normal(rng)).collect()).unwrap()
}

/// `(mean, std)` of the pre-squash Gaussian at `obs`.
fn gaussian_at(p: &GaussianPolicy, obs: &[f64]) -> (f64, f64) {
    let out = p.net.forward(&Tensor::from_vec(1, 3, obs.to_vec()).unwrap()).unwrap();
    (out.get(0, 0), out.get(0, 1).max(p.log_std_min).min(p.log_std_max).exp())
}

#[test]
fn sampled_actions_match_the_squashed_gaussian_mean() {
    let p = policy(1);
    let obs = [0.3, -0.2, 0.5];
    let (mu, sigma) = gaussian_at(&p, &obs);
    // E[2·tanh(μ + σZ)] by trapezoid quadrature against the normal density
    let n = 20_000;
    let (lo, hi) = (-10.0, 10.0);
    let h = (hi - lo) / n as f64;
    let exact: f64 = (0..=n)
        .map(|i| {
            let z = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * h * (-0.5 * z * z).exp() / (2.0 * PI).sqrt() * 2.0 * (mu + sigma * z).tanh()
        })
        .sum();
    let mut rng = seeded(2);
    let k = 100_000;
    let xs: Vec<f64> = (0..k).map(|_| sample_action(&p, &obs, &mut rng).unwrap().0[0]).collect();
    let mean = xs.iter().sum::<f64>() / k as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * sd / (k as f64).sqrt(), "{mean} vs {exact}");
    assert!(xs.iter().all(|a| a.abs() <= 2.0));
}

#[test]
fn log_density_integrates_to_one() {
    let p = policy(3);
    for obs in [[0.0, 0.0, 0.0], [1.0, -1.0, 0.7], [-0.4, 0.9, -2.0]] {
        let n = 40_001;
        let states = Tensor::from_rows(&vec![obs.to_vec(); n]).unwrap();
        let eps = Tensor::from_vec(n, 1, (0..n).map(|i| -8.0 + 16.0 * i as f64 / (n - 1) as f64).collect()).unwrap();
        let (a, lp) = p.sample_with_noise(&states, &eps).unwrap();
        // ∫ p(a) da over the image of the noise grid, trapezoid in action space
        let total: f64 = (1..n)
            .map(|i| 0.5 * (lp[i].exp() + lp[i - 1].exp()) * (a.get(i, 0) - a.get(i - 1, 0)))
            .sum();
        assert!((total - 1.0).abs() < 1e-2, "{total}");
    }
}

#[test]
fn pooling_keeps_the_smallest_atoms() {
    let a = [1.0, 5.0, 9.0];
    let b = [2.0, 3.0, 10.0];
    assert_eq!(pool_and_truncate(&[&a, &b], 1).unwrap(), vec![1.0, 2.0, 3.0, 5.0]);
    assert_eq!(pool_and_truncate(&[&a, &b], 0).unwrap(), vec![1.0, 2.0, 3.0, 5.0, 9.0, 10.0]);
    assert_eq!(pool_and_truncate(&[&a], 2).unwrap(), vec![1.0]);
    assert!(pool_and_truncate(&[&a], 3).is_err());
}

/// Critic whose output is the bias vector for every input.
fn constant_critic(atoms: &[f64]) -> Mlp {
    let spec = MlpSpec::new(4, &[], atoms.len()).unwrap();
    let mut flat = vec![0.0; 4 * atoms.len()];
    flat.extend_from_slice(atoms);
    let mut m = Mlp::zeros(spec);
    m.set_flat(&flat).unwrap();
    m
}

#[test]
fn targets_pool_truncate_and_subtract_entropy() {
    let cfg = TqcConfig { n_quantiles: 3, drop_per_critic: 1, gamma: 0.5, ..TqcConfig::desk() };
    let critics = [constant_critic(&[1.0, 5.0, 9.0]), constant_critic(&[2.0, 3.0, 10.0])];
    let p = policy(4);
    let t = |done| Transition { state: vec![0.0; 3], action: vec![0.0], reward: 1.0, next_state: vec![0.1, 0.2, 0.3], done };
    let batch = Batch::from_transitions(&[t(false), t(true)]).unwrap();
    let eta = 0.2;
    let y = compute_targets(&batch, &critics, &p, eta, &cfg, &mut seeded(9)).unwrap();
    // the first noise draw belongs to row 0; replay it to recover log π(a′|s′)
    let e0 = standard_normal(&mut seeded(9));
    let (_, lp) = p.sample_with_noise(&Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap(), &Tensor::scalar(e0)).unwrap();
    let want: Vec<f64> = [1.0, 2.0, 3.0, 5.0].iter().map(|z| 1.0 + 0.5 * (z - eta * lp[0])).collect();
    for (got, w) in y.row(0).iter().zip(&want) {
        assert!((got - w).abs() < 1e-12, "{:?} vs {want:?}", y.row(0));
    }
    assert_eq!(y.row(1), &[1.0; 4]);
}

#[test]
fn critic_loss_vanishes_at_targets_and_decreases_under_adam() {
    let s = Tensor::zeros(2, 3);
    let a = Tensor::zeros(2, 1);
    let same = Tensor::from_rows(&[vec![1.0; 3], vec![1.0; 3]]).unwrap();
    // all atoms equal to a point-mass target give zero loss
    let (zero, _) = critic_loss(&constant_critic(&[1.0; 3]), &s, &a, &same, 1.0).unwrap();
    assert_eq!(zero, 0.0);

    let mut rng = seeded(5);
    let mut net = Mlp::new(MlpSpec::new(4, &[16], 5).unwrap(), &mut rng);
    let states = uniform(&mut rng, 32, 3);
    let actions = uniform(&mut rng, 32, 1);
    let targets = normals(&mut rng, 32, 8);
    let mut opt = Adam::new(LrSchedule::Constant { lr: 1e-2 }, net.params());
    let (first, _) = critic_loss(&net, &states, &actions, &targets, 1.0).unwrap();
    let mut last = first;
    for _ in 0..100 {
        let (v, g) = critic_loss(&net, &states, &actions, &targets, 1.0).unwrap();
        opt.step(net.params_mut(), &g).unwrap();
        last = v;
    }
    assert!(last < 0.8 * first, "{first} -> {last}");
}

/// `mean(η·log π(a|s) − mean_j Z_j(s, a))` written from scratch.
fn sac_objective(p: &GaussianPolicy, critic: &Mlp, states: &Tensor, eps: &Tensor, eta: f64) -> f64 {
    let out = p.net.forward(states).unwrap();
    let mut total = 0.0;
    for i in 0..states.rows() {
        let mu = out.get(i, 0);
        let ls = out.get(i, 1).max(p.log_std_min).min(p.log_std_max);
        let e = eps.get(i, 0);
        let u = mu + ls.exp() * e;
        let a = p.action_limit * u.tanh();
        let log_gauss = -0.5 * e * e - ls - 0.5 * (2.0 * PI).ln();
        let log_pi = log_gauss - (p.action_limit * (1.0 - u.tanh().powi(2))).ln();
        let mut x = states.row(i).to_vec();
        x.push(a);
        let z = critic.forward(&Tensor::from_vec(1, 4, x).unwrap()).unwrap();
        total += eta * log_pi - z.data().iter().sum::<f64>() / z.len() as f64;
    }
    total / states.rows() as f64
}

#[test]
fn actor_loss_reduces_to_soft_actor_critic_at_zero_alpha() {
    let mut rng = seeded(6);
    for k in 0..10 {
        let p = policy(10 + k);
        let critic = Mlp::new(MlpSpec::new(4, &[16], 7).unwrap(), &mut rng);
        let states = uniform(&mut rng, 8, 3);
        let eps = normals(&mut rng, 8, 1);
        let eta = rng.gen_range(0.01..2.0);
        let (got, _) = actor_loss(&p, std::slice::from_ref(&critic), &states, &eps, eta, &PenaltyConfig::default()).unwrap();
        let want = sac_objective(&p, &critic, &states, &eps, eta);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn actor_loss_is_non_decreasing_in_alpha() {
    let mut rng = seeded(7);
    let p = policy(7);
    let critics: Vec<Mlp> = (0..2).map(|_| Mlp::new(MlpSpec::new(4, &[16], 9).unwrap(), &mut rng)).collect();
    let states = uniform(&mut rng, 16, 3);
    let eps = normals(&mut rng, 16, 1);
    for norm in [StdNormalization::MeanSquare, StdNormalization::SumSquare] {
        let mut last = f64::NEG_INFINITY;
        for i in 0..12 {
            let pen = PenaltyConfig::new(i as f64 * 0.25, norm);
            let (v, _) = actor_loss(&p, &critics, &states, &eps, 0.3, &pen).unwrap();
            assert!(v >= last - 1e-12);
            last = v;
        }
    }
}

#[test]
fn temperature_stays_positive() {
    let mut rng = seeded(8);
    let mut eta = 1.0;
    for _ in 0..10_000 {
        let lps: Vec<f64> = (0..4).map(|_| rng.gen_range(-50.0..50.0)).collect();
        eta = temperature_update(eta, &lps, -1.0, 0.05).unwrap();
        assert!(eta > 0.0 && eta.is_finite());
    }
}

#[test]
fn target_critics_move_only_by_polyak() {
    let cfg = TqcConfig { beta: 0.0, batch_size: 16, learning_starts: 0, critic_hidden: vec![16], actor_hidden: vec![16], ..TqcConfig::desk() };
    let mut agent = TqcAgent::new(3, 1, 2.0, cfg, 0, 100).unwrap();
    let mut rng = seeded(1);
    for _ in 0..32 {
        let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        agent.buffer.push(&Transition { state: s.clone(), action: vec![0.5], reward: -1.0, next_state: s, done: false }).unwrap();
    }
    let frozen: Vec<u64> = agent.target_critics.iter().map(|c| c.param_hash()).collect();
    for _ in 0..5 {
        agent.train_step().unwrap();
    }
    assert_eq!(agent.target_critics.iter().map(|c| c.param_hash()).collect::<Vec<_>>(), frozen);
    assert!(agent.critics.iter().zip(&frozen).all(|(c, h)| c.param_hash() != *h));
    assert!(agent.eta() > 0.0);
}

#[test]
fn short_pendulum_run_is_deterministic() {
    let cfg = TqcConfig { critic_hidden: vec![16], actor_hidden: vec![16], batch_size: 32, learning_starts: 300, ..TqcConfig::desk() };
    let env = EnvParams::nominal(EnvId::Pendulum);
    let a = run_training(&env, &cfg, 4, 600).unwrap();
    let b = run_training(&env, &cfg, 4, 600).unwrap();
    assert_eq!(format!("{:?}", a.log), format!("{:?}", b.log));
    assert_eq!(a.agent.policy, b.agent.policy);
    assert!(run_training(&EnvParams::nominal(EnvId::CartPole), &cfg, 0, 10).is_err());
}
