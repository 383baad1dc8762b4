//! Certification of the closed-form worst-case value against the oracle.

use crate::{Error, Result};

use super::chi_square::{
    alpha_max, chi_square_divergence, return_variance, worst_case_distribution,
    TrajectoryDistribution,
};
use super::oracle::{robust_value_oracle, OracleConfig};

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub tol: f64,
    pub oracle: OracleConfig,
    /// Added to the closed form before comparison. Only for exercising the
    /// failure path; zero in normal use.
    pub closed_form_offset: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { tol: 1e-4, oracle: OracleConfig::default(), closed_form_offset: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ChiSquareBallResult {
    pub alpha: f64,
    /// Oracle minimum over the ball.
    pub exact_min: f64,
    /// `E₀[R] − √(α·V)`.
    pub closed_form: f64,
    /// `E₀[R] − α·√V`, the radius-reparameterized variant.
    pub surrogate_form: f64,
    /// Equality-case law when feasible, otherwise the oracle minimizer.
    pub worst_case: TrajectoryDistribution,
    pub alpha_max: f64,
    pub oracle_divergence: f64,
    pub feasible: bool,
    pub certified: bool,
    /// Why certification failed, if it did.
    pub failure: Option<String>,
}

/// Compares the oracle minimum with the closed form. Inside `alpha_max` the two
/// must agree within `tol`; beyond it the oracle must stay above the closed
/// form (lower-bound regime). Failures are reported in the result.
pub fn verify_chi_square_ball(
    td: &TrajectoryDistribution,
    alpha: f64,
    opts: &VerifyOptions,
) -> Result<ChiSquareBallResult> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha {alpha} must be finite and >= 0")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {} must be positive", opts.tol)));
    }
    let mean = td.mean();
    let var = return_variance(td);
    let amax = alpha_max(td);
    let closed_form = mean - (alpha * var).sqrt() + opts.closed_form_offset;
    let surrogate_form = mean - alpha * var.sqrt();

    if var <= 0.0 {
        let closed_form = mean + opts.closed_form_offset;
        let ok = opts.closed_form_offset == 0.0;
        return Ok(ChiSquareBallResult {
            alpha,
            exact_min: mean,
            closed_form,
            surrogate_form: mean,
            worst_case: td.clone(),
            alpha_max: amax,
            oracle_divergence: 0.0,
            feasible: true,
            certified: ok,
            failure: (!ok).then(|| "closed form differs from constant return".to_string()),
        });
    }

    let oracle = robust_value_oracle(td, alpha, &opts.oracle)?;
    let feasible = alpha <= amax;
    let worst_case = if feasible {
        worst_case_distribution(td, alpha)?
    } else {
        TrajectoryDistribution::from_parts(&oracle.minimizer, &td.returns())?
    };

    let mut failure = None;
    if !oracle.certified {
        failure = Some("oracle did not converge; value is best-so-far".to_string());
    } else if feasible {
        let gap = (oracle.value - closed_form).abs();
        if gap > opts.tol {
            failure = Some(format!("|exact_min − closed_form| = {gap:e} > {:e}", opts.tol));
        } else {
            let div = chi_square_divergence(&worst_case.probs(), &td.probs())?;
            if (div - alpha).abs() > 1e-8 {
                failure = Some(format!("worst case off the ball boundary: D = {div}, alpha = {alpha}"));
            }
        }
    } else if oracle.value < closed_form - opts.tol {
        failure = Some(format!(
            "oracle {} below the lower bound {closed_form}",
            oracle.value
        ));
    }

    Ok(ChiSquareBallResult {
        alpha,
        exact_min: oracle.value,
        closed_form,
        surrogate_form,
        worst_case,
        alpha_max: amax,
        oracle_divergence: oracle.divergence,
        feasible,
        certified: failure.is_none(),
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric() -> TrajectoryDistribution {
        TrajectoryDistribution::from_parts(&[0.5, 0.5], &[0.0, 1.0]).unwrap()
    }

    #[test]
    fn feasible_symmetric_case() {
        let res = verify_chi_square_ball(&symmetric(), 0.25, &VerifyOptions::default()).unwrap();
        assert!(res.feasible && res.certified);
        assert!((res.exact_min - 0.25).abs() < 1e-4);
        assert!((res.closed_form - 0.25).abs() < 1e-15);
        assert!((res.surrogate_form - (0.5 - 0.25 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_radius_exact() {
        let res = verify_chi_square_ball(&symmetric(), 0.0, &VerifyOptions::default()).unwrap();
        assert!(res.certified);
        assert_eq!(res.exact_min, 0.5);
        assert_eq!(res.closed_form, 0.5);
    }

    #[test]
    fn lower_bound_regime() {
        let res = verify_chi_square_ball(&symmetric(), 4.0, &VerifyOptions::default()).unwrap();
        assert!(!res.feasible && res.certified);
        assert!(res.exact_min.abs() < 1e-9);
        assert!((res.closed_form + 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_returns_short_circuit() {
        let t = TrajectoryDistribution::from_parts(&[0.3, 0.7], &[2.0, 2.0]).unwrap();
        let res = verify_chi_square_ball(&t, 5.0, &VerifyOptions::default()).unwrap();
        assert!(res.certified && res.feasible);
        assert_eq!(res.alpha_max, f64::INFINITY);
        assert_eq!((res.exact_min, res.closed_form), (2.0, 2.0));
    }

    #[test]
    fn corrupted_closed_form_is_reported() {
        let opts = VerifyOptions { closed_form_offset: 0.01, ..VerifyOptions::default() };
        let res = verify_chi_square_ball(&symmetric(), 0.25, &opts).unwrap();
        assert!(!res.certified);
        assert!(res.failure.unwrap().contains("closed_form"));
    }
}
