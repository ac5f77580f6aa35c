//! CSV/JSON artifacts for a finished run.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::sim::{Comparison, RunLog};
use crate::uncertainty::{self, GaussianBelief, Zonotope};
use crate::{Error, Result};

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const PARAMS_CSV: &str = "params.csv";
pub const SETS_CSV: &str = "sets.csv";
pub const FILTER_CSV: &str = "filter.csv";
pub const STACK_CSV: &str = "stack.csv";
pub const METRICS_JSON: &str = "metrics.json";

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn save(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn io_ctx(dir: &Path, name: &str) -> impl FnOnce(std::io::Error) -> Error {
    let path = dir.join(name);
    move |e| Error::io(&path, e)
}

/// Writes every artifact of `log` into `dir` (created if missing) and
/// returns the paths written.
pub fn write_run(log: &RunLog, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = log.prior.dim();
    let mut written = Vec::new();

    let mut buf = Vec::new();
    writeln!(buf, "t,q1,q2,qdot1,qdot2,qd1,qd2,u1,u2,k0_1,k0_2").map_err(io_ctx(dir, TRAJECTORY_CSV))?;
    for r in &log.records {
        let row = [r.t]
            .into_iter()
            .chain(r.q)
            .chain(r.qdot)
            .chain(r.q_desired)
            .chain(r.u)
            .chain(r.k0);
        writeln!(buf, "{}", join(row)).map_err(io_ctx(dir, TRAJECTORY_CSV))?;
    }
    written.push(save(dir, TRAJECTORY_CSV, &buf)?);

    let mut buf = Vec::new();
    let mut header = vec!["t".to_string()];
    header.extend((1..=p).map(|i| format!("theta_hat{i}")));
    for i in 1..=p {
        header.extend((1..=p).map(|j| format!("gamma_{i}_{j}")));
    }
    header.extend(["lambda_min".into(), "fe_satisfied".into(), "contains_truth".into()]);
    writeln!(buf, "{}", header.join(",")).map_err(io_ctx(dir, PARAMS_CSV))?;
    for r in &log.records {
        let nums = [r.t]
            .into_iter()
            .chain(r.theta_hat.iter().copied())
            .chain(r.gamma.iter().copied())
            .chain([r.lambda_min_info]);
        writeln!(buf, "{},{},{}", join(nums), r.fe_satisfied, r.contains_truth)
            .map_err(io_ctx(dir, PARAMS_CSV))?;
    }
    written.push(save(dir, PARAMS_CSV, &buf)?);

    let mut buf = Vec::new();
    let err = |e| Error::io(dir.join(SETS_CSV), e);
    uncertainty::write_sets_header(&mut buf, p).map_err(err)?;
    let sigma0_inv = log.prior.sigma0_inv();
    for r in &log.records {
        let center = DVector::from_row_slice(&r.theta_hat);
        let gamma = DMatrix::from_row_slice(p, p, &r.gamma);
        let z = Zonotope {
            center: center.clone(),
            generator: gamma.clone(),
        };
        let g = GaussianBelief {
            mean: center,
            covariance: &gamma * sigma0_inv * gamma.transpose(),
        };
        uncertainty::write_zonotope_row(&mut buf, r.t, &z).map_err(err)?;
        uncertainty::write_gaussian_row(&mut buf, r.t, &g).map_err(err)?;
    }
    written.push(save(dir, SETS_CSV, &buf)?);

    let mut buf = Vec::new();
    let rows = if log.mode.filter_mode() == crate::safety_filter::FilterMode::Off {
        0
    } else {
        log.obstacles
    };
    let mut header = vec!["t".to_string(), "mode".to_string()];
    header.extend((1..=log.obstacles).map(|i| format!("h_{i}")));
    header.extend((1..=rows).map(|i| format!("slack_{i}")));
    header.extend(["du_norm".into(), "active_set".into(), "feasible".into()]);
    writeln!(buf, "{}", header.join(",")).map_err(io_ctx(dir, FILTER_CSV))?;
    for r in &log.records {
        let du = ((r.u[0] - r.k0[0]).powi(2) + (r.u[1] - r.k0[1]).powi(2)).sqrt();
        let nums = r.h.iter().chain(&r.slacks).copied().chain([du]);
        let active = r
            .active_set
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(";");
        writeln!(buf, "{},{},{},{},{}", r.t, log.mode, join(nums), active, r.feasible)
            .map_err(io_ctx(dir, FILTER_CSV))?;
    }
    written.push(save(dir, FILTER_CSV, &buf)?);

    let mut buf = Vec::new();
    log.final_stack.write_csv(&mut buf).map_err(io_ctx(dir, STACK_CSV))?;
    written.push(save(dir, STACK_CSV, &buf)?);

    let metrics = serde_json::to_vec_pretty(&log.metrics)?;
    written.push(save(dir, METRICS_JSON, &metrics)?);

    Ok(written)
}

/// Writes `comparison.json` and `comparison.txt` into `dir`.
pub fn write_comparison(cmp: &Comparison, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_vec_pretty(cmp)?;
    Ok(vec![
        save(dir, "comparison.json", &json)?,
        save(dir, "comparison.txt", cmp.table().as_bytes())?,
    ])
}
