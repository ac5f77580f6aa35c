mod common;

use adaptsafe::safety_filter::{
    gracbf_constraint, racbf_constraint, solve_filter_qp, BarrierEval, ConstraintRow, FilterConfig,
};
use adaptsafe::uncertainty::{GaussianBelief, Zonotope};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vecs(len: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, len)
}

fn v(x: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(x)
}

/// Rows guaranteed to share the point `u_f`.
fn feasible_rows() -> impl Strategy<Value = (Vec<ConstraintRow>, DVector<f64>)> {
    (1usize..4, vecs(2, 1.0)).prop_flat_map(|(k, uf)| {
        (prop::collection::vec((vecs(2, 1.0), 0.0..1.0f64), k), Just(uf)).prop_map(|(rows, uf)| {
            let uf = v(uf);
            let rows = rows
                .into_iter()
                .map(|(a, s)| {
                    let a = v(a);
                    let b = a.dot(&uf) - s;
                    ConstraintRow { a, b }
                })
                .collect();
            (rows, uf)
        })
    })
}

fn eval(h: f64, lf: f64, lg: Vec<f64>, l_big_f: Vec<f64>) -> BarrierEval {
    BarrierEval {
        h,
        lie_drift: lf,
        lie_input: v(lg),
        lie_param: v(l_big_f),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn qp_solution_satisfies_kkt((rows, _) in feasible_rows(), k0 in vecs(2, 1.0)) {
        let k0 = v(k0);
        let res = solve_filter_qp(&k0, &rows).unwrap();
        prop_assert!(res.feasible);
        prop_assert!(common::kkt_residual(&k0, &rows, &res) < 1e-8);
    }

    #[test]
    fn qp_solution_is_no_worse_than_any_feasible_point(
        (rows, uf) in feasible_rows(),
        k0 in vecs(2, 1.0),
        probes in prop::collection::vec(vecs(2, 3.0), 20),
    ) {
        let k0 = v(k0);
        let res = solve_filter_qp(&k0, &rows).unwrap();
        let cost = (&res.u - &k0).norm_squared();
        prop_assert!(cost <= (&uf - &k0).norm_squared() + 1e-10);
        for p in probes {
            let p = v(p);
            if rows.iter().all(|r| r.slack(&p) >= 0.0) {
                prop_assert!(cost <= (&p - &k0).norm_squared() + 1e-10);
            }
        }
    }

    #[test]
    fn larger_zonotope_tightens_the_robust_bound(
        c in vecs(2, 1.0),
        g in vecs(4, 1.0),
        grow in 1.0..3.0f64,
        h in 0.0..3.0f64,
        lf in -2.0..2.0f64,
        lg in vecs(2, 2.0),
        l_big_f in vecs(2, 2.0),
    ) {
        let cfg = FilterConfig::default();
        let g = DMatrix::from_row_slice(2, 2, &g);
        let small = Zonotope::new(v(c.clone()), g.clone()).unwrap();
        let big = Zonotope::new(v(c), g * grow).unwrap();
        let be = eval(h, lf, lg, l_big_f);
        let b_small = racbf_constraint(&be, &small, &cfg).unwrap().b;
        let b_big = racbf_constraint(&be, &big, &cfg).unwrap().b;
        prop_assert!(b_big >= b_small - 1e-12);
    }

    #[test]
    fn robust_row_guards_every_member(
        c in vecs(2, 1.0),
        g in vecs(4, 1.0),
        xi in vecs(2, 1.0),
        h in 0.0..3.0f64,
        lf in -2.0..2.0f64,
        lg in vecs(2, 2.0),
        l_big_f in vecs(2, 2.0),
        u in vecs(2, 5.0),
    ) {
        let cfg = FilterConfig::default();
        let z = Zonotope::new(v(c), DMatrix::from_row_slice(2, 2, &g)).unwrap();
        let theta = common::zonotope_point(&z, &v(xi));
        let be = eval(h, lf, lg, l_big_f);
        let row = racbf_constraint(&be, &z, &cfg).unwrap();
        let u = v(u);
        if row.slack(&u) >= 0.0 {
            let hdot = be.lie_drift + be.lie_param.dot(&theta) + be.lie_input.dot(&u);
            prop_assert!(hdot >= -cfg.alpha(be.h) - 1e-9);
        }
    }

    #[test]
    fn gaussian_margin_grows_with_confidence_and_covariance(
        d1 in 0.01..0.5f64,
        d2 in 0.01..0.5f64,
        s in vecs(4, 1.0),
        k in 1.0..4.0f64,
        l_big_f in vecs(2, 2.0),
    ) {
        let (loose, tight) = if d1 > d2 { (d1, d2) } else { (d2, d1) };
        let s = DMatrix::from_row_slice(2, 2, &s);
        let cov = &s * s.transpose();
        let belief = GaussianBelief { mean: v(vec![0.3, -0.2]), covariance: cov.clone() };
        let wider = GaussianBelief { mean: v(vec![0.3, -0.2]), covariance: cov * k };
        let be = eval(1.0, 0.5, vec![1.0, 0.0], l_big_f);
        let b_loose = gracbf_constraint(&be, &belief, &FilterConfig::new(1.0, loose, None).unwrap()).unwrap().b;
        let cfg = FilterConfig::new(1.0, tight, None).unwrap();
        let b_tight = gracbf_constraint(&be, &belief, &cfg).unwrap().b;
        prop_assert!(b_tight >= b_loose - 1e-12);
        let b_wide = gracbf_constraint(&be, &wider, &cfg).unwrap().b;
        prop_assert!(b_wide >= b_tight - 1e-12);
    }
}

#[test]
fn qp_agrees_with_grid_search_on_fixed_instances() {
    let cases = [
        (vec![0.0, 0.0], vec![([1.0, 0.0], 1.0)]),
        (vec![0.0, 0.0], vec![([1.0, 1.0], 1.0), ([-1.0, 1.0], 0.5)]),
        (vec![0.5, -0.5], vec![([0.0, 1.0], 0.2), ([1.0, -2.0], -0.3)]),
    ];
    for (k0, rows) in cases {
        let k0 = v(k0);
        let rows: Vec<ConstraintRow> = rows
            .into_iter()
            .map(|(a, b)| ConstraintRow { a: v(a.to_vec()), b })
            .collect();
        let res = solve_filter_qp(&k0, &rows).unwrap();
        let grid = common::grid_qp(&k0, &rows, -3.0, 3.0, 1e-3).unwrap();
        assert!((&res.u - &grid).amax() < 2e-3, "{} vs {}", res.u, grid);
    }
}
