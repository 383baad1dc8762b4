//! Direct numerical minimization of `Σ q_i R_i` over a chi-square ball.
//!
//! The oracle never uses the closed form. It works in whitened coordinates
//! `u_i = (q_i − p0_i)/√p0_i`, where the ball is Euclidean. Supports of at
//! most three outcomes are searched on a refining grid over the boundary
//! circle plus the simplex vertices; larger supports use projected gradient
//! restarted from random simplex points. Every reported minimizer is exactly
//! feasible.

use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

use super::chi_square::{chi_square_divergence, TrajectoryDistribution};
use super::random_simplex_point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    /// Chosen from the support size.
    Auto,
    Grid,
    ProjectedGradient,
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub seed: u64,
    pub method: OracleMethod,
    pub restarts: usize,
    /// Grid points per refinement level; the first scan uses `50·grid_points²`.
    pub grid_points: usize,
    pub refine_levels: usize,
    pub max_iterations: usize,
    /// Step-size convergence threshold relative to the ball radius.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: OracleMethod::Auto,
            restarts: 16,
            grid_points: 41,
            refine_levels: 40,
            max_iterations: 5_000,
            tolerance: 1e-13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    pub divergence: f64,
    /// Minimizer over all outcomes (zero where `p0` is zero).
    pub minimizer: Vec<f64>,
    pub method: OracleMethod,
    /// False when the iterative solver hit its cap; `value` is then best-so-far.
    pub certified: bool,
}

/// Minimum of `E_q[R]` over `{q : q ≪ p0, D_χ²(q‖p0) ≤ alpha}`.
pub fn robust_value_oracle(
    td: &TrajectoryDistribution,
    alpha: f64,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    if !(alpha >= 0.0) || alpha.is_nan() {
        return Err(Error::InvalidArgument(format!("alpha {alpha} must be >= 0")));
    }
    let probs = td.probs();
    let returns = td.returns();
    let support: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    let p: Vec<f64> = support.iter().map(|&i| probs[i]).collect();
    let r: Vec<f64> = support.iter().map(|&i| returns[i]).collect();

    let method = match cfg.method {
        OracleMethod::Auto if support.len() <= 3 => OracleMethod::Grid,
        OracleMethod::Auto => OracleMethod::ProjectedGradient,
        m => m,
    };

    let (q, certified) = if alpha == 0.0 || support.len() == 1 {
        (p.clone(), true)
    } else {
        match method {
            OracleMethod::Grid if support.len() <= 3 => (grid_search(&p, &r, alpha, cfg), true),
            OracleMethod::Grid => {
                return Err(Error::InvalidArgument(format!(
                    "grid oracle supports at most 3 outcomes, got {}",
                    support.len()
                )))
            }
            _ => projected_gradient(&p, &r, alpha, cfg),
        }
    };

    let mut minimizer = vec![0.0; probs.len()];
    for (k, &i) in support.iter().enumerate() {
        minimizer[i] = q[k];
    }
    let divergence = chi_square_divergence(&minimizer, &probs)?;
    Ok(OracleResult { value: dot(&q, &r), divergence, minimizer, method, certified })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn divergence(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).map(|(qi, pi)| (qi - pi) * (qi - pi) / pi).sum()
}

/// Exact feasibility: clamp to the simplex, renormalize, then pull toward `p`
/// along the segment until the divergence is within `alpha`.
fn repair(mut q: Vec<f64>, p: &[f64], alpha: f64) -> Vec<f64> {
    q.iter_mut().for_each(|x| *x = x.max(0.0));
    let sum: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= sum);
    let mut div = divergence(&q, p);
    let mut shrink = 1.0;
    while div > alpha {
        // D(p + sδ) = s²·D(p + δ)
        shrink *= (alpha / div).sqrt() * (1.0 - 1e-15);
        let q2: Vec<f64> = p.iter().zip(&q).map(|(pi, qi)| pi + shrink * (qi - pi)).collect();
        div = divergence(&q2, p);
        if div <= alpha {
            return q2;
        }
    }
    q
}

/// Supports of at most three outcomes leave at most a plane of free
/// directions. A linear objective on ball ∩ simplex is minimized at an extreme
/// point: a simplex vertex inside the ball, or a point of the ball's boundary
/// circle (whitened coordinates) inside the simplex. Vertices are checked
/// directly; the circle is scanned on a dense angle grid, then refined.
fn grid_search(p: &[f64], r: &[f64], alpha: f64, cfg: &OracleConfig) -> Vec<f64> {
    let n = p.len();
    let w: Vec<f64> = p.iter().map(|x| x.sqrt()).collect();
    let basis = complement_basis(&w);
    // a hair inside the circle so rounding never leaves the ball
    let radius = alpha.sqrt() * (1.0 - 1e-14);
    let at = |phi: f64| -> Option<Vec<f64>> {
        let (s, c) = phi.sin_cos();
        let q: Vec<f64> = (0..n)
            .map(|i| {
                let u = radius * (c * basis[0][i] + basis.get(1).map_or(0.0, |b| s * b[i]));
                p[i] + w[i] * u
            })
            .collect();
        (q.iter().all(|x| *x >= 0.0) && divergence(&q, p) <= alpha).then_some(q)
    };

    let mut best = (dot(p, r), p.to_vec());
    let consider = |q: Vec<f64>, best: &mut (f64, Vec<f64>)| {
        let v = dot(&q, r);
        if v < best.0 {
            *best = (v, q);
        }
    };
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        if divergence(&e, p) <= alpha {
            consider(e, &mut best);
        }
    }
    if n == 2 {
        for phi in [0.0, std::f64::consts::PI] {
            if let Some(q) = at(phi) {
                consider(q, &mut best);
            }
        }
        return best.1;
    }

    let coarse = 50 * cfg.grid_points.max(3) * cfg.grid_points.max(3);
    let mut step = std::f64::consts::TAU / coarse as f64;
    let mut center = None;
    let mut arc_best = f64::INFINITY;
    for k in 0..coarse {
        let phi = k as f64 * step;
        if let Some(q) = at(phi) {
            let v = dot(&q, r);
            if v < arc_best {
                arc_best = v;
                center = Some(phi);
            }
            consider(q, &mut best);
        }
    }
    let Some(mut center) = center else { return best.1 };
    let g = cfg.grid_points.max(5);
    for _ in 0..cfg.refine_levels {
        let lo = center - 2.0 * step;
        step = 4.0 * step / (g - 1) as f64;
        for k in 0..g {
            let phi = lo + k as f64 * step;
            if let Some(q) = at(phi) {
                let v = dot(&q, r);
                if v < arc_best {
                    arc_best = v;
                    center = phi;
                }
                consider(q, &mut best);
            }
        }
        if step < 1e-17 {
            break;
        }
    }
    best.1
}

/// Orthonormal basis of the hyperplane orthogonal to the unit vector `w`.
fn complement_basis(w: &[f64]) -> Vec<Vec<f64>> {
    let n = w.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for k in 0..n {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        let c = dot(&v, w);
        v.iter_mut().zip(w).for_each(|(x, wi)| *x -= c * wi);
        for b in &basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, bi)| *x -= c * bi);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
        if basis.len() == n - 1 {
            break;
        }
    }
    basis
}

/// Euclidean projection onto `{u : w·u = 0, ‖u‖ ≤ radius, u_i ≥ lower_i}` by
/// Dykstra's alternating projections. `w = √p` has unit norm.
struct FeasibleSet<'a> {
    w: &'a [f64],
    lower: &'a [f64],
    radius: f64,
}

impl FeasibleSet<'_> {
    fn project_plane_ball(&self, u: &mut [f64]) {
        let c = dot(self.w, u);
        u.iter_mut().zip(self.w).for_each(|(x, w)| *x -= c * w);
        let norm = dot(u, u).sqrt();
        if norm > self.radius {
            let s = self.radius / norm;
            u.iter_mut().for_each(|x| *x *= s);
        }
    }

    fn project(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let mut x = y.to_vec();
        let mut p_inc = vec![0.0; n];
        let mut q_inc = vec![0.0; n];
        for _ in 0..20_000 {
            let prev = x.clone();
            let mut a: Vec<f64> = (0..n).map(|i| x[i] + p_inc[i]).collect();
            self.project_plane_ball(&mut a);
            for i in 0..n {
                p_inc[i] = x[i] + p_inc[i] - a[i];
            }
            let b: Vec<f64> =
                (0..n).map(|i| (a[i] + q_inc[i]).max(self.lower[i])).collect();
            for i in 0..n {
                q_inc[i] = a[i] + q_inc[i] - b[i];
            }
            x = b;
            let change: f64 = x.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if change <= 1e-16 * (1.0 + self.radius) {
                break;
            }
        }
        x
    }
}

fn projected_gradient(p: &[f64], r: &[f64], alpha: f64, cfg: &OracleConfig) -> (Vec<f64>, bool) {
    let n = p.len();
    let w: Vec<f64> = p.iter().map(|x| x.sqrt()).collect();
    let lower: Vec<f64> = w.iter().map(|x| -x).collect();
    let radius = alpha.sqrt();
    let set = FeasibleSet { w: &w, lower: &lower, radius };
    let to_q = |u: &[f64]| -> Vec<f64> { (0..n).map(|i| p[i] + w[i] * u[i]).collect() };

    // Objective in whitened coordinates, restricted to the plane.
    let mut grad: Vec<f64> = (0..n).map(|i| r[i] * w[i]).collect();
    let c = dot(&w, &grad);
    grad.iter_mut().zip(&w).for_each(|(g, wi)| *g -= c * wi);
    let gnorm = dot(&grad, &grad).sqrt();
    if gnorm == 0.0 {
        return (p.to_vec(), true);
    }
    let step = 2.0 * radius / gnorm;

    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for restart in 0..cfg.restarts.max(1) {
        let mut rng = seeded(derive_seed(cfg.seed, restart as u64));
        let start = random_simplex_point(n, &mut rng);
        let u0: Vec<f64> = (0..n).map(|i| (start[i] - p[i]) / w[i]).collect();
        let mut u = set.project(&u0);
        let mut converged = false;
        for _ in 0..cfg.max_iterations {
            let y: Vec<f64> = (0..n).map(|i| u[i] - step * grad[i]).collect();
            let next = set.project(&y);
            let change = next.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            u = next;
            if change <= cfg.tolerance * radius.max(1e-300) {
                converged = true;
                break;
            }
        }
        let q = repair(to_q(&u), p, alpha);
        let value = dot(&q, r);
        if best.as_ref().map_or(true, |b| value < b.0) {
            best = Some((value, q, converged));
        }
    }
    let (_, q, converged) = best.expect("at least one restart");
    (q, converged)
}
