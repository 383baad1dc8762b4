//! Quantile-atom return distributions and the mean minus alpha-std functional.
//!
//! A return distribution is represented by `M` atoms at the midpoint fractions
//! `τ_m = (2m − 1)/(2M)`. Atoms are regressed toward target samples with the
//! quantile (pinball) loss or its Huber-smoothed variant, and actions are
//! ranked by `ξ_α(Z) = mean(Z) − α·std(Z)`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{quantile_huber_value, Graph, Tensor};
use crate::nn::{Adam, LrSchedule};
use crate::rng::{seeded, Rng};
use crate::{Error, Result};

/// How the atom spread is normalized before the square root.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdNormalization {
    /// `√((1/M)·Σ(θᵢ − θ̄)²)`.
    #[default]
    MeanSquare,
    /// `√(Σ(θᵢ − θ̄)²)`, no division by `M`.
    SumSquare,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub alpha: f64,
    #[serde(default)]
    pub std_normalization: StdNormalization,
}

impl PenaltyConfig {
    pub fn new(alpha: f64, std_normalization: StdNormalization) -> Self {
        Self { alpha, std_normalization }
    }
}

/// `(2m − 1)/(2M)` for `m = 1..M`.
pub fn quantile_fractions(m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one quantile".into()));
    }
    Ok((0..m).map(|j| crate::autodiff::fraction(j, m)).collect())
}

pub fn atom_mean(atoms: &[f64]) -> f64 {
    atoms.iter().sum::<f64>() / atoms.len() as f64
}

pub fn atom_std(atoms: &[f64], norm: StdNormalization) -> f64 {
    let mean = atom_mean(atoms);
    let ss: f64 = atoms.iter().map(|x| (x - mean) * (x - mean)).sum();
    match norm {
        StdNormalization::MeanSquare => (ss / atoms.len() as f64).sqrt(),
        StdNormalization::SumSquare => ss.sqrt(),
    }
}

/// `mean − alpha·std` of raw atoms.
pub fn xi_alpha_atoms(atoms: &[f64], cfg: &PenaltyConfig) -> f64 {
    let mean = atom_mean(atoms);
    if cfg.alpha == 0.0 {
        return mean;
    }
    mean - cfg.alpha * atom_std(atoms, cfg.std_normalization)
}

/// Atoms `θ¹..θᴹ` at the midpoint quantile fractions. Atoms need not be sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileDistribution {
    atoms: Vec<f64>,
}

impl QuantileDistribution {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("need at least one atom".into()));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("quantile atom".into()));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn fractions(&self) -> Vec<f64> {
        quantile_fractions(self.atoms.len()).expect("non-empty")
    }

    pub fn mean(&self) -> f64 {
        atom_mean(&self.atoms)
    }

    pub fn std(&self, cfg: &PenaltyConfig) -> f64 {
        atom_std(&self.atoms, cfg.std_normalization)
    }

    pub fn xi_alpha(&self, cfg: &PenaltyConfig) -> f64 {
        xi_alpha_atoms(&self.atoms, cfg)
    }

    pub fn is_sorted(&self) -> bool {
        self.atoms.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Pinball loss `ρ_τ(u) = u·(τ − 1{u<0})`.
pub fn pinball(u: f64, tau: f64) -> f64 {
    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
}

/// Mean over `samples` of `ρ_τ(sample − theta)`.
pub fn qr_loss(theta: f64, samples: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside (0, 1)")));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    Ok(samples.iter().map(|y| pinball(y - theta, tau)).sum::<f64>() / samples.len() as f64)
}

/// `(1/(M·K)) Σ_j Σ_i |τ_j − 1{y_i − θ_j < 0}|·huber(y_i − θ_j, κ)`.
pub fn qr_huber_loss(pred: &QuantileDistribution, targets: &[f64], kappa: f64) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty target list".into()));
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa {kappa} must be positive")));
    }
    let p = Tensor::from_vec(1, pred.len(), pred.atoms.clone())?;
    let t = Tensor::from_vec(1, targets.len(), targets.to_vec())?;
    Ok(quantile_huber_value(&p, &t, kappa))
}

/// Gradient of [`qr_huber_loss`] with respect to the predicted atoms.
pub fn qr_huber_loss_grad(pred: &QuantileDistribution, targets: &[f64], kappa: f64) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty target list".into()));
    }
    let mut g = Graph::new();
    let p = g.param(Tensor::from_vec(1, pred.len(), pred.atoms.clone())?);
    let loss = g.quantile_huber(p, Tensor::from_vec(1, targets.len(), targets.to_vec())?, kappa);
    let grads = g.backward(loss)?;
    Ok(grads.get(p).expect("trainable").data().to_vec())
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub steps: usize,
    pub batch: usize,
    /// Initial Adam learning rate, decayed linearly to zero.
    pub lr: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { steps: 4000, batch: 256, lr: 0.05, seed: 0 }
    }
}

/// Fits `m` atoms to the law behind `sample` by stochastic minimization of the
/// quantile Huber loss. `kappa = 0` uses the plain pinball loss, whose
/// minimizers are the exact quantiles; a positive `kappa` pulls atoms toward
/// expectiles on the scale of `kappa`.
pub fn fit_quantiles(
    mut sample: impl FnMut(&mut Rng) -> f64,
    m: usize,
    kappa: f64,
    cfg: &FitConfig,
) -> Result<QuantileDistribution> {
    let fractions = quantile_fractions(m)?;
    if !(kappa >= 0.0) {
        return Err(Error::InvalidArgument(format!("kappa {kappa} must be >= 0")));
    }
    let mut rng = seeded(cfg.seed);
    let mut atoms = vec![Tensor::zeros(1, m)];
    let schedule = LrSchedule::Linear { initial: cfg.lr, final_lr: 0.0, total_steps: cfg.steps as u64 };
    let mut opt = Adam::new(schedule, &atoms);
    let mut batch = vec![0.0; cfg.batch.max(1)];
    for _ in 0..cfg.steps {
        batch.iter_mut().for_each(|y| *y = sample(&mut rng));
        let grad = if kappa > 0.0 {
            let mut g = Graph::new();
            let p = g.param(atoms[0].clone());
            let target = Tensor::from_vec(1, batch.len(), batch.clone())?;
            let loss = g.quantile_huber(p, target, kappa);
            g.backward(loss)?.get(p).expect("trainable").clone()
        } else {
            // ∂/∂θ of mean ρ_τ(y − θ) = mean(1{y < θ}) − τ
            let data = atoms[0]
                .data()
                .iter()
                .zip(&fractions)
                .map(|(&theta, &tau)| {
                    let below = batch.iter().filter(|&&y| y < theta).count() as f64;
                    (below / batch.len() as f64 - tau) / m as f64
                })
                .collect();
            Tensor::from_vec(1, m, data)?
        };
        opt.step(&mut atoms, std::slice::from_ref(&grad))?;
    }
    QuantileDistribution::new(atoms.remove(0).into_vec())
}

/// Standard normal draw by Box-Muller.
pub fn standard_normal(rng: &mut Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
