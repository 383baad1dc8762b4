//! Central finite-difference checks shared by the gradient tests and the
//! acceptance run.

#![allow(dead_code)]

use chisq_rl::autodiff::{Graph, NodeId, Tensor};
use chisq_rl::nn::{Mlp, MlpSpec};
use chisq_rl::qrdqn::{loss_and_grads, QuantileNetwork};
use chisq_rl::quantile::{qr_huber_loss, qr_huber_loss_grad, PenaltyConfig, QuantileDistribution, StdNormalization};
use chisq_rl::replay::{Batch, Transition};
use chisq_rl::rng::{seeded, Rng};
use chisq_rl::tqc::{actor_loss, critic_loss, GaussianPolicy, TqcConfig};
use rand::Rng as _;

pub const PROBES: usize = 100;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: &'static str,
    pub probes: usize,
    pub max_rel_err: f64,
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x` with step `h·max(1, |x_i|)`.
pub fn fd_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            p[i] = x[i] + step;
            let up = f(&p);
            p[i] = x[i] - step;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn tensor(rng: &mut Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Like [`tensor`] but resamples entries within `gap` of any point in `avoid`.
fn tensor_avoiding(rng: &mut Rng, r: usize, c: usize, lo: f64, hi: f64, avoid: &[f64], gap: f64) -> Tensor {
    let data = (0..r * c)
        .map(|_| loop {
            let v = rng.gen_range(lo..hi);
            if avoid.iter().all(|a| (v - a).abs() > gap) {
                break v;
            }
        })
        .collect();
    Tensor::from_vec(r, c, data).unwrap()
}

type Build = dyn Fn(&mut Graph, &[NodeId]) -> NodeId;

/// Relative error of the graph gradient of `Σ w ⊙ build(inputs)` for a random
/// weight tensor `w`, against central differences.
fn op_error(inputs: &[Tensor], build: &Build, rng: &mut Rng) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &ids);
    let (r, c) = g.value(out).shape();
    let w = tensor(rng, r, c, -1.0, 1.0);
    let wn = g.constant(w.clone());
    let prod = g.mul(out, wn);
    let loss = g.sum(prod);
    let mut grads = g.backward(loss).unwrap();
    let analytic: Vec<f64> =
        ids.iter().zip(inputs).flat_map(|(id, t)| grads.take_or_zeros(*id, t).into_vec()).collect();

    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let numeric = fd_grad(&flat, 1e-6, |x| {
        let mut g = Graph::new();
        let mut off = 0;
        let ids: Vec<NodeId> = inputs
            .iter()
            .map(|t| {
                let v = Tensor::from_vec(t.rows(), t.cols(), x[off..off + t.len()].to_vec()).unwrap();
                off += t.len();
                g.constant(v)
            })
            .collect();
        let out = build(&mut g, &ids);
        g.value(out).data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    });
    rel_err(&analytic, &numeric)
}

fn run_op(name: &'static str, seed: u64, mut make: impl FnMut(&mut Rng) -> (Vec<Tensor>, Box<Build>)) -> GradReport {
    let mut rng = seeded(seed);
    let mut worst = 0.0_f64;
    for _ in 0..PROBES {
        let (inputs, build) = make(&mut rng);
        worst = worst.max(op_error(&inputs, &*build, &mut rng));
    }
    GradReport { name, probes: PROBES, max_rel_err: worst }
}

fn dims(rng: &mut Rng) -> (usize, usize) {
    (rng.gen_range(1..5), rng.gen_range(1..5))
}

/// Every graph op, [`PROBES`] random inputs each.
pub fn op_suite() -> Vec<GradReport> {
    let mut out = Vec::new();
    macro_rules! unary {
        ($name:literal, $seed:expr, $lo:expr, $hi:expr, $avoid:expr, $f:expr) => {
            out.push(run_op($name, $seed, |rng| {
                let (r, c) = dims(rng);
                (vec![tensor_avoiding(rng, r, c, $lo, $hi, &$avoid, 1e-3)], Box::new(|g: &mut Graph, x: &[NodeId]| $f(g, x[0])))
            }));
        };
    }
    macro_rules! binary {
        ($name:literal, $seed:expr, $f:expr) => {
            out.push(run_op($name, $seed, |rng| {
                let (r, c) = dims(rng);
                (
                    vec![tensor(rng, r, c, -2.0, 2.0), tensor(rng, r, c, -2.0, 2.0)],
                    Box::new(|g: &mut Graph, x: &[NodeId]| $f(g, x[0], x[1])),
                )
            }));
        };
    }
    binary!("add", 1, |g: &mut Graph, a, b| g.add(a, b));
    binary!("sub", 2, |g: &mut Graph, a, b| g.sub(a, b));
    binary!("mul", 3, |g: &mut Graph, a, b| g.mul(a, b));
    unary!("scale", 4, -2.0, 2.0, [], |g: &mut Graph, a| g.scale(a, -1.7));
    unary!("shift", 5, -2.0, 2.0, [], |g: &mut Graph, a| g.shift(a, 0.3));
    unary!("relu", 6, -2.0, 2.0, [0.0], |g: &mut Graph, a| g.relu(a));
    unary!("tanh", 7, -2.0, 2.0, [], |g: &mut Graph, a| g.tanh(a));
    unary!("exp", 8, -2.0, 2.0, [], |g: &mut Graph, a| g.exp(a));
    unary!("log", 9, 0.2, 3.0, [], |g: &mut Graph, a| g.log(a));
    unary!("sqrt", 10, 0.2, 3.0, [], |g: &mut Graph, a| g.sqrt(a));
    unary!("square", 11, -2.0, 2.0, [], |g: &mut Graph, a| g.square(a));
    unary!("softplus", 12, -4.0, 4.0, [], |g: &mut Graph, a| g.softplus(a));
    unary!("clamp", 13, -1.0, 1.0, [-0.5, 0.5], |g: &mut Graph, a| g.clamp(a, -0.5, 0.5));
    unary!("sum", 14, -2.0, 2.0, [], |g: &mut Graph, a| g.sum(a));
    unary!("mean", 15, -2.0, 2.0, [], |g: &mut Graph, a| g.mean(a));
    unary!("row_sum", 16, -2.0, 2.0, [], |g: &mut Graph, a| g.row_sum(a));
    unary!("row_mean", 17, -2.0, 2.0, [], |g: &mut Graph, a| g.row_mean(a));
    out.push(run_op("broadcast_cols", 18, |rng| {
        let (r, k) = dims(rng);
        (vec![tensor(rng, r, 1, -2.0, 2.0)], Box::new(move |g: &mut Graph, x: &[NodeId]| g.broadcast_cols(x[0], k)))
    }));
    out.push(run_op("concat_cols", 19, |rng| {
        let (r, c) = dims(rng);
        let c2 = rng.gen_range(1..4);
        (
            vec![tensor(rng, r, c, -2.0, 2.0), tensor(rng, r, c2, -2.0, 2.0)],
            Box::new(|g: &mut Graph, x: &[NodeId]| g.concat_cols(x[0], x[1])),
        )
    }));
    out.push(run_op("slice_cols", 20, |rng| {
        let r = rng.gen_range(1..5);
        let c = rng.gen_range(2..6);
        let start = rng.gen_range(0..c - 1);
        let end = rng.gen_range(start + 1..=c);
        (vec![tensor(rng, r, c, -2.0, 2.0)], Box::new(move |g: &mut Graph, x: &[NodeId]| g.slice_cols(x[0], start, end)))
    }));
    out.push(run_op("matmul", 21, |rng| {
        let (n, k) = dims(rng);
        let m = rng.gen_range(1..5);
        (
            vec![tensor(rng, n, k, -2.0, 2.0), tensor(rng, k, m, -2.0, 2.0)],
            Box::new(|g: &mut Graph, x: &[NodeId]| g.matmul(x[0], x[1])),
        )
    }));
    out.push(run_op("linear", 22, |rng| {
        let (n, i) = dims(rng);
        let o = rng.gen_range(1..5);
        (
            vec![tensor(rng, n, i, -2.0, 2.0), tensor(rng, i, o, -1.0, 1.0), tensor(rng, 1, o, -1.0, 1.0)],
            Box::new(|g: &mut Graph, x: &[NodeId]| g.linear(x[0], x[1], x[2])),
        )
    }));
    out.push(run_op("gather_blocks", 23, |rng| {
        let n = rng.gen_range(1..5);
        let (blocks, block) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let index: Vec<usize> = (0..n).map(|_| rng.gen_range(0..blocks)).collect();
        (
            vec![tensor(rng, n, blocks * block, -2.0, 2.0)],
            Box::new(move |g: &mut Graph, x: &[NodeId]| g.gather_blocks(x[0], &index, block)),
        )
    }));
    out.push(run_op("gaussian_log_density", 24, |rng| {
        let (r, c) = dims(rng);
        (
            vec![tensor(rng, r, c, -2.0, 2.0), tensor(rng, r, c, -1.0, 1.0), tensor(rng, r, c, -1.5, 1.0)],
            Box::new(|g: &mut Graph, x: &[NodeId]| g.gaussian_log_density(x[0], x[1], x[2])),
        )
    }));
    out.push(run_op("quantile_huber", 25, |rng| {
        let n = rng.gen_range(1..4);
        let (m, k) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let kappa = rng.gen_range(0.3..2.0);
        let target = tensor(rng, n, k, -2.0, 2.0);
        // keep every residual away from the kinks at 0 and ±kappa
        let mut pred = Tensor::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let avoid: Vec<f64> =
                    target.row(i).iter().flat_map(|y| [*y, y - kappa, y + kappa]).collect();
                pred.set(i, j, tensor_avoiding(rng, 1, 1, -2.5, 2.5, &avoid, 1e-3).item());
            }
        }
        (vec![pred], Box::new(move |g: &mut Graph, x: &[NodeId]| g.quantile_huber(x[0], target.clone(), kappa)))
    }));
    out
}

fn tiny_mlp(rng: &mut Rng, input: usize, output: usize) -> Mlp {
    Mlp::new(MlpSpec::new(input, &[5], output).unwrap(), rng)
}

/// FD over all parameters of `net`, given an analytic gradient and a value
/// function of a perturbed copy.
fn mlp_error(net: &Mlp, analytic: &[Tensor], h: f64, value: impl Fn(&Mlp) -> f64) -> f64 {
    let flat = net.flat();
    let mut probe = net.clone();
    let numeric = fd_grad(&flat, h, |x| {
        probe.set_flat(x).unwrap();
        value(&probe)
    });
    let analytic: Vec<f64> = analytic.iter().flat_map(|t| t.data().to_vec()).collect();
    rel_err(&analytic, &numeric)
}

/// MLP parameters and the composite losses, [`PROBES`] random instances each.
pub fn composite_suite() -> Vec<GradReport> {
    let mut out = Vec::new();

    let mut rng = seeded(100);
    let mut worst = 0.0_f64;
    for _ in 0..PROBES {
        let net = tiny_mlp(&mut rng, 3, 2);
        let x = tensor(&mut rng, 4, 3, -2.0, 2.0);
        let w = tensor(&mut rng, 4, 2, -1.0, 1.0);
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let (o, leaves) = net.forward_graph(&mut g, xi, true);
        let wn = g.constant(w.clone());
        let p = g.mul(o, wn);
        let l = g.sum(p);
        let mut grads = g.backward(l).unwrap();
        let analytic = chisq_rl::nn::collect_grads(&mut grads, &leaves, &net);
        worst = worst.max(mlp_error(&net, &analytic, 1e-5, |n| {
            n.forward(&x).unwrap().data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        }));
    }
    out.push(GradReport { name: "mlp_params", probes: PROBES, max_rel_err: worst });

    let mut rng = seeded(101);
    let mut worst = 0.0_f64;
    for _ in 0..PROBES {
        let m = rng.gen_range(1..6);
        let targets: Vec<f64> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let kappa = rng.gen_range(0.3..2.0);
        let avoid: Vec<f64> = targets.iter().flat_map(|y| [*y, y - kappa, y + kappa]).collect();
        let atoms = tensor_avoiding(&mut rng, 1, m, -2.5, 2.5, &avoid, 1e-3).into_vec();
        let pred = QuantileDistribution::new(atoms.clone()).unwrap();
        let analytic = qr_huber_loss_grad(&pred, &targets, kappa).unwrap();
        let numeric = fd_grad(&atoms, 1e-6, |x| {
            qr_huber_loss(&QuantileDistribution::new(x.to_vec()).unwrap(), &targets, kappa).unwrap()
        });
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    out.push(GradReport { name: "qr_huber_loss", probes: PROBES, max_rel_err: worst });

    let mut rng = seeded(102);
    let mut worst = 0.0_f64;
    for _ in 0..PROBES {
        let (na, m) = (2, 3);
        let net = QuantileNetwork { net: tiny_mlp(&mut rng, 3, na * m), n_actions: na, n_quantiles: m };
        let ts: Vec<Transition> = (0..4)
            .map(|_| Transition {
                state: tensor(&mut rng, 1, 3, -1.0, 1.0).into_vec(),
                action: vec![rng.gen_range(0..na) as f64],
                reward: rng.gen_range(-1.0..1.0),
                next_state: tensor(&mut rng, 1, 3, -1.0, 1.0).into_vec(),
                done: rng.gen_bool(0.3),
            })
            .collect();
        let batch = Batch::from_transitions(&ts).unwrap();
        let targets = tensor(&mut rng, 4, m, -3.0, 3.0);
        let (_, analytic) = loss_and_grads(&net, &batch, targets.clone(), 1.0).unwrap();
        worst = worst.max(mlp_error(&net.net, &analytic, 1e-6, |n| {
            let probe = QuantileNetwork { net: n.clone(), n_actions: na, n_quantiles: m };
            loss_and_grads(&probe, &batch, targets.clone(), 1.0).unwrap().0
        }));
    }
    out.push(GradReport { name: "qrdqn_loss", probes: PROBES, max_rel_err: worst });

    let mut rng = seeded(103);
    let mut worst = 0.0_f64;
    for _ in 0..PROBES {
        let critic = tiny_mlp(&mut rng, 4, 3);
        let states = tensor(&mut rng, 4, 3, -1.0, 1.0);
        let actions = tensor(&mut rng, 4, 1, -2.0, 2.0);
        let targets = tensor(&mut rng, 4, 4, -3.0, 3.0);
        let (_, analytic) = critic_loss(&critic, &states, &actions, &targets, 1.0).unwrap();
        worst = worst.max(mlp_error(&critic, &analytic, 1e-6, |c| {
            critic_loss(c, &states, &actions, &targets, 1.0).unwrap().0
        }));
    }
    out.push(GradReport { name: "critic_loss", probes: PROBES, max_rel_err: worst });

    let mut rng = seeded(104);
    let mut worst = 0.0_f64;
    let cfg = TqcConfig::desk();
    for _ in 0..PROBES {
        let policy = GaussianPolicy::new(3, 1, &[5], 2.0, &cfg, &mut rng).unwrap();
        let critics = vec![tiny_mlp(&mut rng, 4, 4), tiny_mlp(&mut rng, 4, 4)];
        let states = tensor(&mut rng, 4, 3, -1.0, 1.0);
        let eps = tensor(&mut rng, 4, 1, -2.0, 2.0);
        let eta = rng.gen_range(0.0..1.0);
        let penalty = PenaltyConfig::new(rng.gen_range(0.0..2.0), StdNormalization::MeanSquare);
        let (_, analytic) = actor_loss(&policy, &critics, &states, &eps, eta, &penalty).unwrap();
        worst = worst.max(mlp_error(&policy.net, &analytic, 1e-6, |n| {
            let p = GaussianPolicy { net: n.clone(), ..policy.clone() };
            actor_loss(&p, &critics, &states, &eps, eta, &penalty).unwrap().0
        }));
    }
    out.push(GradReport { name: "actor_loss", probes: PROBES, max_rel_err: worst });
    out
}

/// Trains QR-DQN on a single self-looping state with reward `r` and returns
/// the atoms of the only action. The fixed point is `r/(1 − γ)` for every atom.
pub fn one_state_fixed_point(r: f64, gamma: f64, seed: u64) -> Vec<f64> {
    use chisq_rl::qrdqn::{QrdqnAgent, QrdqnConfig};
    let cfg = QrdqnConfig {
        n_quantiles: 5,
        gamma,
        lr: 5e-4,
        batch_size: 32,
        hidden: vec![16],
        learning_starts: 0,
        buffer_capacity: 1000,
        ..QrdqnConfig::default()
    };
    let mut agent = QrdqnAgent::new(1, 1, cfg, seed).unwrap();
    let t = Transition { state: vec![1.0], action: vec![0.0], reward: r, next_state: vec![1.0], done: false };
    for _ in 0..64 {
        agent.buffer.push(&t).unwrap();
    }
    // enough target copies to shrink the initial error by 1e-4
    let copies = (1e-4_f64.ln() / gamma.ln()).ceil() as usize;
    for _ in 0..copies {
        for _ in 0..PERIOD {
            agent.train_step().unwrap();
        }
        agent.sync_target();
    }
    agent.online.atoms(&[1.0]).unwrap().remove(0)
}

const PERIOD: usize = 600;
