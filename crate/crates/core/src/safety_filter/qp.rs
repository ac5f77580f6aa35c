use nalgebra::{DMatrix, DVector};

use super::ConstraintRow;
use crate::{Error, Result};

/// Enumeration over 2^rows subsets stays cheap up to this many rows.
const MAX_ROWS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub u: DVector<f64>,
    /// Rows treated as equalities at the returned point.
    pub active_set: Vec<usize>,
    /// Multipliers of `active_set`, in the same order.
    pub multipliers: Vec<f64>,
    pub feasible: bool,
}

struct Candidate {
    u: DVector<f64>,
    active: Vec<usize>,
    lambda: Vec<f64>,
    cost: f64,
    violation: f64,
}

impl Candidate {
    fn dual_ok(&self) -> bool {
        self.lambda.iter().all(|&l| l >= -1e-10)
    }

    /// Ordering used to pick the returned point: least violation, then least
    /// cost, then dual feasibility, then fewest active rows.
    fn better_than(&self, other: &Candidate) -> bool {
        let vtol = 1e-12 * (1.0 + other.violation);
        if self.violation < other.violation - vtol {
            return true;
        }
        if self.violation > other.violation + vtol {
            return false;
        }
        let ctol = 1e-12 * (1.0 + other.cost);
        if self.cost < other.cost - ctol {
            return true;
        }
        if self.cost > other.cost + ctol {
            return false;
        }
        if self.dual_ok() != other.dual_ok() {
            return self.dual_ok();
        }
        self.active.len() < other.active.len()
    }
}

fn feasibility_tol(row: &ConstraintRow) -> f64 {
    1e-10 * (1.0 + row.b.abs())
}

/// Projects `k0` onto `{u : aᵢ·u ≥ bᵢ ∀i}`, minimising `½‖u − k0‖²`.
///
/// Every subset of rows is tried as an equality-constrained projection; the
/// cheapest primal-feasible projection is the optimum. If no subset is
/// feasible the least-violation projection is returned with `feasible = false`.
pub fn solve_filter_qp(k0: &DVector<f64>, rows: &[ConstraintRow]) -> Result<FilterResult> {
    let m = k0.len();
    if m == 0 {
        return Err(Error::dim("at least one input", 0));
    }
    if rows.len() > MAX_ROWS {
        return Err(Error::Config(format!(
            "filter QP supports at most {MAX_ROWS} rows, got {}",
            rows.len()
        )));
    }
    for row in rows {
        if row.a.len() != m {
            return Err(Error::dim(m, row.a.len()));
        }
        if !row.b.is_finite() || row.a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("constraint row"));
        }
    }
    if !k0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("nominal input"));
    }

    let mut best: Option<Candidate> = None;
    for mask in 0u32..(1u32 << rows.len()) {
        let active: Vec<usize> = (0..rows.len()).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > m {
            continue;
        }
        let Some((u, lambda)) = project(k0, rows, &active) else {
            continue;
        };
        let violation = rows
            .iter()
            .map(|r| (-r.slack(&u) - feasibility_tol(r)).max(0.0))
            .sum();
        let cost = 0.5 * (&u - k0).norm_squared();
        let cand = Candidate {
            u,
            active,
            lambda,
            cost,
            violation,
        };
        if best.as_ref().is_none_or(|b| cand.better_than(b)) {
            best = Some(cand);
        }
    }

    // The empty subset always projects, so `best` is set.
    let best = best.expect("empty active set is always a candidate");
    Ok(FilterResult {
        feasible: best.violation == 0.0,
        u: best.u,
        active_set: best.active,
        multipliers: best.lambda,
    })
}

/// Solves `min ½‖u − k0‖²` s.t. `aᵢ·u = bᵢ` for `i ∈ active`.
/// Returns `None` when the active rows are linearly dependent.
fn project(k0: &DVector<f64>, rows: &[ConstraintRow], active: &[usize]) -> Option<(DVector<f64>, Vec<f64>)> {
    if active.is_empty() {
        return Some((k0.clone(), Vec::new()));
    }
    let m = k0.len();
    let k = active.len();
    let a = DMatrix::from_fn(k, m, |i, j| rows[active[i]].a[j]);
    let rhs = DVector::from_fn(k, |i, _| rows[active[i]].b) - &a * k0;
    let gram = &a * a.transpose();
    let scale = gram.diagonal().max();
    if !(scale > 0.0) {
        return None;
    }
    let chol = gram.cholesky()?;
    if chol.l_dirty().diagonal().min().powi(2) < 1e-12 * scale {
        return None;
    }
    let lambda = chol.solve(&rhs);
    let u = k0 + a.transpose() * &lambda;
    Some((u, lambda.iter().copied().collect()))
}
