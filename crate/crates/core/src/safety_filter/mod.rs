//! Robust (zonotope) and probabilistic (Gaussian) barrier constraints and
//! the minimally invasive filter QP that enforces them.
//!
//! Every constraint has the form `a·u ≥ b` with `a = L_g h(x)` and the
//! parameter term folded into `b`:
//!
//! * robust:   `b = −γh − L_f h − min_{θ∈Z} L_F h·θ`
//! * Gaussian: `b = −γh − L_f h − L_F h·θ̂ + c_δ σ(x, Γ)`

mod diagnostics;
mod qp;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::uncertainty::{GaussianBelief, Zonotope};
use crate::{Error, Result};

pub use diagnostics::{
    cbf_criterion_check, matched_check, CriterionReport, MatchReport, ParameterAffineSystem,
};
pub use qp::{solve_filter_qp, FilterResult};

/// Lie derivatives of a barrier `h` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierEval {
    pub h: f64,
    /// `L_f h`
    pub lie_drift: f64,
    /// `L_g h` (length m)
    pub lie_input: DVector<f64>,
    /// `L_F h` (length p)
    pub lie_param: DVector<f64>,
}

/// `a·u ≥ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub a: DVector<f64>,
    pub b: f64,
}

impl ConstraintRow {
    /// `a·u − b`; non-negative when satisfied.
    pub fn slack(&self, u: &DVector<f64>) -> f64 {
        self.a.dot(u) - self.b
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Worst case over the estimator's current zonotope.
    Robust,
    /// Posterior mean plus a `c_δ σ` margin.
    Gaussian,
    /// No filtering; the nominal input passes through.
    #[default]
    Off,
    /// Worst case over the prior zonotope, never updated.
    RobustFixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterConfigRepr {
    alpha_gain: f64,
    delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c_delta: Option<f64>,
}

/// Gains of the filter. `α(r) = γ r` is the extended class-K function.
///
/// When `c_delta` is omitted from JSON it defaults to the two-sided
/// standard-normal quantile for confidence `1 − δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FilterConfigRepr", into = "FilterConfigRepr")]
pub struct FilterConfig {
    pub alpha_gain: f64,
    pub delta: f64,
    pub c_delta: f64,
    /// Set by the scenario; not part of the serialized config.
    pub mode: FilterMode,
}

impl FilterConfig {
    pub fn new(alpha_gain: f64, delta: f64, c_delta: Option<f64>) -> Result<Self> {
        if !(alpha_gain > 0.0) || !alpha_gain.is_finite() {
            return Err(Error::Config(format!("alpha_gain must be positive, got {alpha_gain}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
        }
        let c_delta = c_delta.unwrap_or_else(|| two_sided_quantile(delta));
        if !(c_delta > 0.0) || !c_delta.is_finite() {
            return Err(Error::Config(format!("c_delta must be positive, got {c_delta}")));
        }
        Ok(Self {
            alpha_gain,
            delta,
            c_delta,
            mode: FilterMode::Off,
        })
    }

    pub fn with_mode(mut self, mode: FilterMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn alpha(&self, h: f64) -> f64 {
        self.alpha_gain * h
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self::new(1.0, 0.05, None).expect("default filter gains are valid")
    }
}

impl TryFrom<FilterConfigRepr> for FilterConfig {
    type Error = Error;

    fn try_from(r: FilterConfigRepr) -> Result<Self> {
        FilterConfig::new(r.alpha_gain, r.delta, r.c_delta)
    }
}

impl From<FilterConfig> for FilterConfigRepr {
    fn from(c: FilterConfig) -> Self {
        FilterConfigRepr {
            alpha_gain: c.alpha_gain,
            delta: c.delta,
            c_delta: Some(c.c_delta),
        }
    }
}

/// `Φ⁻¹(1 − δ/2)`.
pub fn two_sided_quantile(delta: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - 0.5 * delta)
}

/// Robust adaptive barrier constraint over the parameter zonotope.
pub fn racbf_constraint(be: &BarrierEval, z: &Zonotope, cfg: &FilterConfig) -> Result<ConstraintRow> {
    if z.dim() != be.lie_param.len() {
        return Err(Error::dim(be.lie_param.len(), z.dim()));
    }
    let worst = z.support_inf(&be.lie_param);
    Ok(ConstraintRow {
        a: be.lie_input.clone(),
        b: -cfg.alpha(be.h) - be.lie_drift - worst,
    })
}

/// Gaussian robust adaptive barrier constraint with confidence margin `c_δ σ`.
pub fn gracbf_constraint(
    be: &BarrierEval,
    belief: &GaussianBelief,
    cfg: &FilterConfig,
) -> Result<ConstraintRow> {
    if belief.mean.len() != be.lie_param.len() {
        return Err(Error::dim(be.lie_param.len(), belief.mean.len()));
    }
    let sigma = belief.lie_sigma(&be.lie_param)?;
    Ok(ConstraintRow {
        a: be.lie_input.clone(),
        b: -cfg.alpha(be.h) - be.lie_drift - be.lie_param.dot(&belief.mean) + cfg.c_delta * sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{EstimatorState, Prior};
    use crate::uncertainty::gaussian_posterior;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn eval(lie_param: &[f64]) -> BarrierEval {
        BarrierEval {
            h: 0.7,
            lie_drift: -0.3,
            lie_input: v(&[0.5, -1.0]),
            lie_param: v(lie_param),
        }
    }

    #[test]
    fn default_confidence_constant() {
        let cfg = FilterConfig::default();
        assert_abs_diff_eq!(cfg.c_delta, 1.959964, epsilon = 1e-6);
        assert_eq!(cfg.alpha_gain, 1.0);
    }

    #[test]
    fn config_validation_and_json() {
        assert!(FilterConfig::new(0.0, 0.05, None).is_err());
        assert!(FilterConfig::new(1.0, 1.5, None).is_err());
        assert!(FilterConfig::new(1.0, 0.05, Some(-1.0)).is_err());
        let c: FilterConfig = serde_json::from_str(r#"{"alpha_gain":2.0,"delta":0.05}"#).unwrap();
        assert_abs_diff_eq!(c.c_delta, 1.959964, epsilon = 1e-6);
        assert!(serde_json::from_str::<FilterConfig>(r#"{"alpha_gain":2.0,"delta":0.05,"x":1}"#).is_err());
    }

    #[test]
    fn racbf_with_inactive_parameter_direction_is_nominal() {
        let cfg = FilterConfig::default();
        let z = Zonotope::new(v(&[1.0, -1.0]), DMatrix::identity(2, 2) * 3.0).unwrap();
        let row = racbf_constraint(&eval(&[0.0, 0.0]), &z, &cfg).unwrap();
        assert_abs_diff_eq!(row.b, -0.7 + 0.3);
        assert_eq!(row.a, v(&[0.5, -1.0]));
    }

    #[test]
    fn racbf_singleton_is_certainty_equivalence() {
        let cfg = FilterConfig::default();
        let theta = v(&[1.0, -1.0]);
        let row = racbf_constraint(&eval(&[2.0, 0.5]), &Zonotope::singleton(theta), &cfg).unwrap();
        assert_abs_diff_eq!(row.b, -0.7 + 0.3 - 1.5, epsilon = 1e-15);
    }

    #[test]
    fn racbf_unit_box_worst_case() {
        let cfg = FilterConfig::default();
        let z = Zonotope::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let row = racbf_constraint(&eval(&[1.0, 1.0]), &z, &cfg).unwrap();
        assert_abs_diff_eq!(row.b, -0.7 + 0.3 + 2.0, epsilon = 1e-15);
    }

    #[test]
    fn gracbf_examples() {
        let cfg = FilterConfig::new(1.0, 0.05, Some(1.96)).unwrap();
        let prior = Prior::new(v(&[-0.1, 0.1]), DMatrix::identity(2, 2) * 2.0).unwrap();
        let state = EstimatorState::from_prior(&prior);
        let belief = gaussian_posterior(&prior, &state);

        let nominal = gracbf_constraint(&eval(&[0.0, 0.0]), &belief, &cfg).unwrap();
        assert_abs_diff_eq!(nominal.b, -0.7 + 0.3, epsilon = 1e-15);

        let row = gracbf_constraint(&eval(&[1.0, 0.0]), &belief, &cfg).unwrap();
        let margin = row.b - (-0.7 + 0.3 - (-0.1));
        assert_abs_diff_eq!(margin, 1.96 * 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(margin, 2.772, epsilon = 1e-3);

        let converged = GaussianBelief {
            mean: v(&[1.0, -1.0]),
            covariance: DMatrix::zeros(2, 2),
        };
        let ce = gracbf_constraint(&eval(&[2.0, 0.5]), &converged, &cfg).unwrap();
        assert_abs_diff_eq!(ce.b, -0.7 + 0.3 - 1.5, epsilon = 1e-15);
    }

    #[test]
    fn slack_sign() {
        let row = ConstraintRow { a: v(&[1.0, 0.0]), b: 1.0 };
        assert_eq!(row.slack(&v(&[2.0, 5.0])), 1.0);
        assert_eq!(row.slack(&v(&[0.0, 5.0])), -1.0);
    }
}
