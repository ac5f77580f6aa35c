#![allow(dead_code)]

use adaptsafe::plant::{self, ObstacleSpec, PlantState};
use adaptsafe::safety_filter::{ConstraintRow, FilterResult};
use adaptsafe::uncertainty::Zonotope;
use nalgebra::{DMatrix, DVector, Vector4};
use rand::Rng;

/// `min lᵀθ` over every vertex `c + Gξ`, `ξ ∈ {−1, 1}^q`.
pub fn support_brute_force(z: &Zonotope, l: &DVector<f64>) -> f64 {
    let q = z.generator.ncols();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1u32 << q) {
        let mut v = z.center.clone();
        for i in 0..q {
            let s = if mask & (1 << i) != 0 { 1.0 } else { -1.0 };
            v += z.generator.column(i) * s;
        }
        best = best.min(l.dot(&v));
    }
    best
}

pub fn random_zonotope<R: Rng>(rng: &mut R, p: usize, q: usize) -> Zonotope {
    Zonotope::new(
        DVector::from_fn(p, |_, _| rng.random_range(-3.0..3.0)),
        DMatrix::from_fn(p, q, |_, _| rng.random_range(-2.0..2.0)),
    )
    .unwrap()
}

/// Point of `z` at box coordinates `ξ`.
pub fn zonotope_point(z: &Zonotope, xi: &DVector<f64>) -> DVector<f64> {
    &z.center + &z.generator * xi
}

/// Best point of the grid `lo + step·(i, j)` inside `{aᵢ·u ≥ bᵢ}` for the
/// objective `‖u − k0‖²`. Each grid column is scanned analytically for its
/// feasible interval, so the search covers every grid point.
pub fn grid_qp(
    k0: &DVector<f64>,
    rows: &[ConstraintRow],
    lo: f64,
    hi: f64,
    step: f64,
) -> Option<DVector<f64>> {
    let n = ((hi - lo) / step).round() as i64;
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..=n {
        let x = lo + step * i as f64;
        let (mut ylo, mut yhi) = (lo, hi);
        let mut empty = false;
        for r in rows {
            let (a0, a1) = (r.a[0], r.a[1]);
            let rhs = r.b - a0 * x;
            if a1.abs() < 1e-15 {
                if rhs > 1e-12 {
                    empty = true;
                }
            } else if a1 > 0.0 {
                ylo = ylo.max(rhs / a1);
            } else {
                yhi = yhi.min(rhs / a1);
            }
        }
        if empty {
            continue;
        }
        let jlo = ((ylo - lo) / step - 1e-9).ceil() as i64;
        let jhi = ((yhi - lo) / step + 1e-9).floor() as i64;
        if jlo > jhi {
            continue;
        }
        let jk = ((k0[1] - lo) / step).round() as i64;
        for j in [jk.clamp(jlo, jhi), (jk - 1).clamp(jlo, jhi), (jk + 1).clamp(jlo, jhi)] {
            let y = lo + step * j as f64;
            let ok = rows.iter().all(|r| r.a[0] * x + r.a[1] * y >= r.b - 1e-9);
            if !ok {
                continue;
            }
            let c = (x - k0[0]).powi(2) + (y - k0[1]).powi(2);
            if best.is_none_or(|b| c < b.0) {
                best = Some((c, x, y));
            }
        }
    }
    best.map(|(_, x, y)| DVector::from_vec(vec![x, y]))
}

/// Largest violation among stationarity, primal and dual feasibility and
/// complementary slackness.
pub fn kkt_residual(k0: &DVector<f64>, rows: &[ConstraintRow], res: &FilterResult) -> f64 {
    let mut lambda = vec![0.0; rows.len()];
    for (&i, &l) in res.active_set.iter().zip(&res.multipliers) {
        lambda[i] = l;
    }
    let mut grad = &res.u - k0;
    for (r, &l) in rows.iter().zip(&lambda) {
        grad -= &r.a * l;
    }
    let mut worst = grad.amax();
    for (r, &l) in rows.iter().zip(&lambda) {
        let slack = r.slack(&res.u);
        worst = worst.max((-slack).max(0.0)).max((-l).max(0.0)).max((l * slack).abs());
    }
    worst
}

pub fn random_state<R: Rng>(rng: &mut R, span: f64) -> PlantState {
    PlantState::new(
        [rng.random_range(-span..span), rng.random_range(-span..span)],
        [rng.random_range(-span..span), rng.random_range(-span..span)],
    )
}

/// Same position, velocity rotated to be tangent to the obstacle so that
/// `L_f d = 0`.
pub fn seam_state(x: &PlantState, obs: &ObstacleSpec) -> PlantState {
    let r = x.q - nalgebra::Vector2::from(obs.center);
    let tangent = nalgebra::Vector2::new(-r[1], r[0]);
    let speed = x.qdot.norm();
    let qdot = if tangent.norm() > 0.0 {
        tangent.normalize() * speed
    } else {
        x.qdot
    };
    PlantState { q: x.q, qdot }
}

/// Central-difference gradient of the barrier over `(q, q̇)`.
///
/// On the `L_f d = 0` seam the second derivative jumps, which leaves a
/// first-order error in a plain central difference; combining steps `ε` and
/// `ε/2` removes it while keeping second-order accuracy elsewhere.
pub fn barrier_gradient_fd(x: &PlantState, obs: &ObstacleSpec, mu: f64, eps: f64) -> Vector4<f64> {
    let central = |e: f64| {
        let base = x.to_vector();
        Vector4::from_fn(|i, _| {
            let mut up = base;
            let mut dn = base;
            up[i] += e;
            dn[i] -= e;
            (plant::barrier_value(&PlantState::from_vector(&up), obs, mu)
                - plant::barrier_value(&PlantState::from_vector(&dn), obs, mu))
                / (2.0 * e)
        })
    };
    central(0.5 * eps) * 2.0 - central(eps)
}
