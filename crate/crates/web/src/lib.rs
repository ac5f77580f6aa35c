//! Browser bindings. Every export takes and returns JSON strings so the page
//! needs no generated type glue; the plain-Rust functions underneath are what
//! the tests exercise.

use adaptsafe::plant::ObstacleSpec;
use adaptsafe::sim::{self, Metrics, ScenarioConfig, ScenarioMode, Simulator};
use adaptsafe::uncertainty::{GaussianBelief, Zonotope};
use adaptsafe::{Error, Result};
use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// `−2 ln 0.05`: the χ² quantile with two degrees of freedom at 95%.
pub const CHI2_95_2DOF: f64 = 5.991464547107979;

const ELLIPSE_POINTS: usize = 48;

#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub theta_hat: [f64; 2],
    /// Vertices of `Z(θ̂, Γ)` in counter-clockwise order.
    pub zonotope: Vec<[f64; 2]>,
    /// 95% confidence ellipse of the posterior.
    pub ellipse: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    pub mode: ScenarioMode,
    pub obstacles: Vec<ObstacleSpec>,
    pub theta_true: [f64; 2],
    pub t: Vec<f64>,
    pub q: Vec<[f64; 2]>,
    pub q_desired: Vec<[f64; 2]>,
    pub min_h: Vec<f64>,
    pub theta_hat: Vec<[f64; 2]>,
    pub snapshots: Vec<Snapshot>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    pub k0: [f64; 2],
    pub u: [f64; 2],
    pub h: Vec<f64>,
    pub active_set: Vec<usize>,
    pub feasible: bool,
}

/// Vertices of a planar zonotope, counter-clockwise, starting from the
/// lowest point. Zero generators are dropped; a singleton gives one vertex.
pub fn zonotope_vertices(z: &Zonotope) -> Result<Vec<[f64; 2]>> {
    if z.dim() != 2 {
        return Err(Error::dim(2, z.dim()));
    }
    // Orient every generator into the upper half plane and sort by angle.
    let mut gens: Vec<[f64; 2]> = z
        .generator
        .column_iter()
        .filter(|g| g.amax() > 0.0)
        .map(|g| {
            if g[1] < 0.0 || (g[1] == 0.0 && g[0] < 0.0) {
                [-g[0], -g[1]]
            } else {
                [g[0], g[1]]
            }
        })
        .collect();
    if gens.is_empty() {
        return Ok(vec![[z.center[0], z.center[1]]]);
    }
    gens.sort_by(|a, b| a[1].atan2(a[0]).total_cmp(&b[1].atan2(b[0])));

    let mut start = [z.center[0], z.center[1]];
    for g in &gens {
        start[0] -= g[0];
        start[1] -= g[1];
    }
    let mut out = vec![start];
    let mut p = start;
    for sign in [2.0, -2.0] {
        for g in &gens {
            p = [p[0] + sign * g[0], p[1] + sign * g[1]];
            out.push(p);
        }
    }
    // The walk closes on the start point.
    out.pop();
    Ok(out)
}

/// Boundary of `{θ : (θ − m)ᵀ Σ⁻¹ (θ − m) ≤ k}` for a planar belief.
pub fn confidence_ellipse(g: &GaussianBelief, k: f64, points: usize) -> Result<Vec<[f64; 2]>> {
    if g.mean.len() != 2 {
        return Err(Error::dim(2, g.mean.len()));
    }
    let cov = Matrix2::from_fn(|i, j| g.covariance[(i, j)]);
    let eig = SymmetricEigen::new(cov);
    let axes = eig.eigenvectors * Matrix2::from_diagonal(&eig.eigenvalues.map(|l| (l.max(0.0) * k).sqrt()));
    Ok((0..points)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / points as f64;
            let p = axes * nalgebra::Vector2::new(a.cos(), a.sin());
            [g.mean[0] + p[0], g.mean[1] + p[1]]
        })
        .collect())
}

fn pair(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

/// Runs a scenario and keeps what the page draws: the path, the barrier
/// margin and about `snapshots` parameter-set snapshots.
pub fn simulate(cfg: &ScenarioConfig, snapshots: usize) -> Result<Trace> {
    let log = sim::run(cfg)?;
    let stride = (log.records.len() / snapshots.max(1)).max(1);
    let mut snaps = Vec::new();
    for (i, r) in log.records.iter().enumerate() {
        if i % stride != 0 && i + 1 != log.records.len() {
            continue;
        }
        let center = DVector::from_column_slice(&r.theta_hat);
        let gamma = DMatrix::from_row_slice(2, 2, &r.gamma);
        let z = Zonotope::new(center.clone(), gamma.clone())?;
        let belief = GaussianBelief {
            covariance: &gamma * log.prior.sigma0_inv() * gamma.transpose(),
            mean: center,
        };
        snaps.push(Snapshot {
            t: r.t,
            theta_hat: pair(&r.theta_hat),
            zonotope: zonotope_vertices(&z)?,
            ellipse: confidence_ellipse(&belief, CHI2_95_2DOF, ELLIPSE_POINTS)?,
        });
    }
    Ok(Trace {
        mode: log.mode,
        obstacles: cfg.plant.obstacles.clone(),
        theta_true: log.theta_true,
        t: log.records.iter().map(|r| r.t).collect(),
        q: log.records.iter().map(|r| r.q).collect(),
        q_desired: log.records.iter().map(|r| r.q_desired).collect(),
        min_h: log
            .records
            .iter()
            .map(|r| r.h.iter().copied().fold(f64::INFINITY, f64::min))
            .collect(),
        theta_hat: log.records.iter().map(|r| pair(&r.theta_hat)).collect(),
        snapshots: snaps,
        metrics: log.metrics,
    })
}

/// The filter's decision at an arbitrary state, using the prior belief.
pub fn probe(cfg: &ScenarioConfig, q: [f64; 2], qdot: [f64; 2], t: f64) -> Result<Probe> {
    let sim = Simulator::new(cfg)?;
    let mut st = sim.initial_state()?;
    st.x = adaptsafe::plant::PlantState::new(q, qdot);
    st.t = t;
    let out = sim.control(&st)?;
    Ok(Probe {
        k0: out.k0.into(),
        u: out.u.into(),
        h: out.h,
        active_set: out.active_set,
        feasible: out.feasible,
    })
}

fn js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn parse(config: &str) -> std::result::Result<ScenarioConfig, JsValue> {
    ScenarioConfig::from_json(config).map_err(js)
}

/// Case-study config for `mode` as pretty JSON.
#[wasm_bindgen(js_name = defaultConfig)]
pub fn default_config(mode: &str) -> std::result::Result<String, JsValue> {
    let mode: ScenarioMode = mode.parse().map_err(js)?;
    serde_json::to_string_pretty(&ScenarioConfig::case_study(mode)).map_err(js)
}

#[wasm_bindgen(js_name = runScenario)]
pub fn run_scenario(config: &str, snapshots: usize) -> std::result::Result<String, JsValue> {
    let trace = simulate(&parse(config)?, snapshots).map_err(js)?;
    serde_json::to_string(&trace).map_err(js)
}

#[wasm_bindgen(js_name = probeFilter)]
pub fn probe_filter(config: &str, q1: f64, q2: f64, v1: f64, v2: f64, t: f64) -> std::result::Result<String, JsValue> {
    let p = probe(&parse(config)?, [q1, q2], [v1, v2], t).map_err(js)?;
    serde_json::to_string(&p).map_err(js)
}
