//! WebAssembly bindings for the static page in `www/`.
//!
//! Each export wraps a plain function so the logic is testable natively.

use chisq_rl::envs::{apply_perturbation, Env, EnvId, EnvParams};
use chisq_rl::quantile::{atom_mean, atom_std, xi_alpha_atoms, PenaltyConfig, StdNormalization};
use chisq_rl::rng::seeded;
use chisq_rl::tabular::chi_square::{alpha_max, return_variance, worst_case_distribution, TrajectoryDistribution};
use chisq_rl::tabular::oracle::{robust_value_oracle, OracleConfig};
use wasm_bindgen::prelude::*;

fn law(probs: &[f64], returns: &[f64]) -> Result<TrajectoryDistribution, String> {
    TrajectoryDistribution::from_parts(probs, returns).map_err(|e| e.to_string())
}

/// Rows of `[alpha, E − √(αV), E − α√V, oracle]` for `points` radii spread
/// over `(0, 1.5·alpha_max]` (capped at 4 when `alpha_max` is infinite).
/// The oracle column is NaN unless `with_oracle`.
pub fn curve(probs: &[f64], returns: &[f64], points: usize, with_oracle: bool) -> Result<Vec<f64>, String> {
    let td = law(probs, returns)?;
    let (mean, var) = (td.mean(), return_variance(&td));
    let top = if alpha_max(&td).is_finite() { 1.5 * alpha_max(&td) } else { 4.0 };
    let mut out = Vec::with_capacity(4 * points);
    for i in 1..=points {
        let a = top * i as f64 / points as f64;
        let oracle = if with_oracle {
            robust_value_oracle(&td, a, &OracleConfig::default()).map_err(|e| e.to_string())?.value
        } else {
            f64::NAN
        };
        out.extend([a, mean - (a * var).sqrt(), mean - a * var.sqrt(), oracle]);
    }
    Ok(out)
}

/// Equality-case worst-case probabilities, or an error beyond `alpha_max`.
pub fn worst_case(probs: &[f64], returns: &[f64], alpha: f64) -> Result<Vec<f64>, String> {
    let td = law(probs, returns)?;
    worst_case_distribution(&td, alpha).map(|w| w.probs()).map_err(|e| e.to_string())
}

/// `[mean, std, ξ_α]` of an atom set.
pub fn xi(atoms: &[f64], alpha: f64, sum_square: bool) -> Result<Vec<f64>, String> {
    if atoms.is_empty() || atoms.iter().any(|a| !a.is_finite()) || !(alpha >= 0.0) {
        return Err("atoms must be finite and non-empty, alpha >= 0".into());
    }
    let norm = if sum_square { StdNormalization::SumSquare } else { StdNormalization::MeanSquare };
    let cfg = PenaltyConfig::new(alpha, norm);
    Ok(vec![atom_mean(atoms), atom_std(atoms, norm), xi_alpha_atoms(atoms, &cfg)])
}

/// Hand-tuned feedback controllers used for playback; no learning involved.
fn controller(env: EnvId, obs: &[f64]) -> f64 {
    match env {
        EnvId::CartPole => {
            let s = obs[2] + 0.3 * obs[3] + 0.02 * obs[0] + 0.05 * obs[1];
            if s > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        EnvId::Pendulum => {
            let (c, s, w) = (obs[0], obs[1], obs[2]);
            if c > 0.9 {
                -(8.0 * s.atan2(c) + 1.5 * w)
            } else {
                // pump energy toward the upright orbit, where ½ω² + 15(cos θ − 1) = 0
                let energy = 0.5 * w * w + 15.0 * (c - 1.0);
                if energy < 0.0 {
                    2.0 * if w == 0.0 { 1.0 } else { w.signum() }
                } else {
                    -0.5 * w
                }
            }
        }
    }
}

/// Frames `[position-or-0, angle, reward]` of one controlled episode with
/// the named multiplier applied.
pub fn simulate(env: &str, multiplier: &str, value: f64, seed: u64) -> Result<Vec<f64>, String> {
    let id: EnvId = env.parse().map_err(|e: chisq_rl::Error| e.to_string())?;
    let params = apply_perturbation(&EnvParams::nominal(id), multiplier, value).map_err(|e| e.to_string())?;
    let mut sim = Env::new(&params).map_err(|e| e.to_string())?;
    let mut obs = sim.reset(&mut seeded(seed));
    let mut frames = Vec::new();
    loop {
        let step = sim.step(&[controller(id, &obs)]).map_err(|e| e.to_string())?;
        match id {
            EnvId::CartPole => frames.extend([step.observation[0], step.observation[2], step.reward]),
            EnvId::Pendulum => frames.extend([0.0, step.observation[1].atan2(step.observation[0]), step.reward]),
        }
        obs = step.observation;
        if step.done {
            return Ok(frames);
        }
    }
}

fn js(r: Result<Vec<f64>, String>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = chiSquareCurve)]
pub fn chi_square_curve(probs: &[f64], returns: &[f64], points: usize, with_oracle: bool) -> Result<Vec<f64>, JsError> {
    js(curve(probs, returns, points, with_oracle))
}

#[wasm_bindgen(js_name = alphaMax)]
pub fn alpha_max_js(probs: &[f64], returns: &[f64]) -> Result<f64, JsError> {
    law(probs, returns).map(|td| alpha_max(&td)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = worstCase)]
pub fn worst_case_js(probs: &[f64], returns: &[f64], alpha: f64) -> Result<Vec<f64>, JsError> {
    js(worst_case(probs, returns, alpha))
}

#[wasm_bindgen(js_name = xiAlpha)]
pub fn xi_alpha_js(atoms: &[f64], alpha: f64, sum_square: bool) -> Result<Vec<f64>, JsError> {
    js(xi(atoms, alpha, sum_square))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(env: &str, multiplier: &str, value: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    js(simulate(env, multiplier, value, seed as u64))
}
