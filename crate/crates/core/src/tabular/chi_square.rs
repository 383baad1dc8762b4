//! Chi-square balls around a discrete trajectory distribution.
//!
//! For a nominal law `p0` over outcomes with returns `R`, the smallest
//! expectation over `{p : D_χ²(p‖p0) ≤ α}` is `E₀[R] − √(α·V₀[R])` as long as
//! `α ≤ V₀[R] / ‖R − E₀[R]‖∞²`. The minimizer is the Cauchy-Schwarz equality
//! case `p = p0·(1 + R̃/λ)` with `λ = −√(V/α)`; past `alpha_max` that measure
//! goes negative and the formula is only a lower bound.

use serde::Deserialize;

use crate::{Error, Result};

const PROB_SUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub prob: f64,
    pub ret: f64,
}

/// Finite set of rollout outcomes with nominal probabilities and returns.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDistribution {
    outcomes: Vec<Outcome>,
}

impl TrajectoryDistribution {
    pub fn new(outcomes: Vec<Outcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidDistribution("no outcomes".into()));
        }
        if outcomes.iter().any(|o| !o.prob.is_finite() || o.prob < 0.0 || !o.ret.is_finite()) {
            return Err(Error::InvalidDistribution("negative or non-finite entry".into()));
        }
        let sum: f64 = outcomes.iter().map(|o| o.prob).sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {sum}")));
        }
        Ok(Self { outcomes })
    }

    pub fn from_parts(probs: &[f64], returns: &[f64]) -> Result<Self> {
        if probs.len() != returns.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} probabilities but {} returns",
                probs.len(),
                returns.len()
            )));
        }
        Self::new(probs.iter().zip(returns).map(|(&prob, &ret)| Outcome { prob, ret }).collect())
    }

    /// Parses the `[trajectory]` table: `probs = [...]` and `returns = [...]`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            trajectory: TrajectoryFile,
        }
        let doc: Doc = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        doc.trajectory.build()
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn probs(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.prob).collect()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.ret).collect()
    }

    pub fn mean(&self) -> f64 {
        self.outcomes.iter().map(|o| o.prob * o.ret).sum()
    }

    /// Expectation of this distribution's returns under another weighting.
    pub fn expectation_under(&self, probs: &[f64]) -> f64 {
        self.outcomes.iter().zip(probs).map(|(o, p)| p * o.ret).sum()
    }

    /// Returns shifted by `shift` and multiplied by `scale`.
    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        Self {
            outcomes: self
                .outcomes
                .iter()
                .map(|o| Outcome { prob: o.prob, ret: scale * o.ret + shift })
                .collect(),
        }
    }
}

/// Key schema: `[trajectory]` with equal-length `probs` and `returns` arrays.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub probs: Vec<f64>,
    pub returns: Vec<f64>,
}

impl TrajectoryFile {
    pub fn build(&self) -> Result<TrajectoryDistribution> {
        TrajectoryDistribution::from_parts(&self.probs, &self.returns)
    }
}

/// `R̃(τ) = R(τ) − E₀[R]`.
pub fn centered_returns(td: &TrajectoryDistribution) -> Vec<f64> {
    let mean = td.mean();
    td.outcomes.iter().map(|o| o.ret - mean).collect()
}

/// `V₀[R] = E₀[R̃²]`.
pub fn return_variance(td: &TrajectoryDistribution) -> f64 {
    centered_returns(td).iter().zip(&td.outcomes).map(|(c, o)| o.prob * c * c).sum()
}

/// `Σ_{p0_i > 0} p0_i (q_i/p0_i − 1)²`.
pub fn chi_square_divergence(q: &[f64], p0: &[f64]) -> Result<f64> {
    if q.len() != p0.len() || q.is_empty() {
        return Err(Error::InvalidDistribution(format!(
            "length mismatch: q has {}, p0 has {}",
            q.len(),
            p0.len()
        )));
    }
    for (name, v) in [("q", q), ("p0", p0)] {
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidDistribution(format!("{name} has a negative entry")));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidDistribution(format!("{name} sums to {sum}")));
        }
    }
    let mut div = 0.0;
    for (index, (&qi, &pi)) in q.iter().zip(p0).enumerate() {
        if pi > 0.0 {
            let d = qi - pi;
            div += d * d / pi;
        } else if qi > 0.0 {
            return Err(Error::AbsoluteContinuity { index, mass: qi });
        }
    }
    Ok(div)
}

/// Largest radius for which the equality-case measure stays non-negative:
/// `V₀[R] / max_{p0>0} R̃²`. Constant returns give `+∞`.
pub fn alpha_max(td: &TrajectoryDistribution) -> f64 {
    let var = return_variance(td);
    let sup = centered_returns(td)
        .iter()
        .zip(&td.outcomes)
        .filter(|(_, o)| o.prob > 0.0)
        .fold(0.0_f64, |m, (c, _)| m.max(c.abs()));
    if var <= 0.0 || sup == 0.0 {
        f64::INFINITY
    } else {
        (var / (sup * sup)).min(1.0)
    }
}

/// The minimizing law on the ball boundary, `p = p0·(1 − R̃·√(α/V))`.
///
/// `alpha = 0` and constant returns give `p0` back.
pub fn worst_case_distribution(
    td: &TrajectoryDistribution,
    alpha: f64,
) -> Result<TrajectoryDistribution> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha {alpha} must be finite and >= 0")));
    }
    let var = return_variance(td);
    if alpha == 0.0 || var <= 0.0 {
        return Ok(td.clone());
    }
    let amax = alpha_max(td);
    if alpha > amax * (1.0 + 1e-12) {
        return Err(Error::Infeasible { alpha, alpha_max: amax });
    }
    let inv_lambda = -(alpha / var).sqrt();
    let outcomes = td
        .outcomes
        .iter()
        .zip(centered_returns(td))
        .map(|(o, c)| Outcome { prob: (o.prob * (1.0 + c * inv_lambda)).max(0.0), ret: o.ret })
        .collect();
    TrajectoryDistribution::new(outcomes)
}
