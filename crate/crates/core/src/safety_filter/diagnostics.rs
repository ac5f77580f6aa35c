use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{BarrierEval, FilterConfig};

/// `ẋ = f(x) + F(x)θ + g(x)u`, with an optional matching map `φ` such that
/// `F = gφ` when the uncertainty is matched.
pub trait ParameterAffineSystem {
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn param_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn matching_map(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub samples: usize,
    pub max_residual: f64,
    pub matched: bool,
}

/// Largest `‖F(x) − g(x)φ(x)‖` (max-abs entry) over the sampled states.
pub fn matched_check<S: ParameterAffineSystem + ?Sized>(
    system: &S,
    states: &[DVector<f64>],
    tol: f64,
) -> MatchReport {
    let max_residual = states
        .iter()
        .map(|x| (system.param_matrix(x) - system.input_matrix(x) * system.matching_map(x)).amax())
        .fold(0.0, f64::max);
    MatchReport {
        samples: states.len(),
        max_residual,
        matched: max_residual <= tol,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub samples: usize,
    /// Samples where `‖L_g h‖ < tol`, i.e. where the implication is tested.
    pub degenerate: usize,
    /// Indices of degenerate samples with `L_f h ≤ −α(h)`.
    pub violations: Vec<usize>,
}

impl CriterionReport {
    pub fn compliant(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `L_g h(x) = 0 ⟹ L_f h(x) > −α(h(x))` on the given evaluations.
pub fn cbf_criterion_check<'a, I>(evals: I, cfg: &FilterConfig, tol: f64) -> CriterionReport
where
    I: IntoIterator<Item = &'a BarrierEval>,
{
    let mut report = CriterionReport {
        samples: 0,
        degenerate: 0,
        violations: Vec::new(),
    };
    for (i, be) in evals.into_iter().enumerate() {
        report.samples += 1;
        if be.lie_input.norm() < tol {
            report.degenerate += 1;
            if !(be.lie_drift > -cfg.alpha(be.h)) {
                report.violations.push(i);
            }
        }
    }
    report
}
