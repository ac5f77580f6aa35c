//! Planar double integrator pushed around by a spatially varying wind field.
//!
//! State `x = (q, q̇) ∈ ℝ⁴`, input `u ∈ ℝ²` (commanded acceleration):
//!
//! ```text
//! ẋ = (q̇, 0) + (0, I)u + (0, φ(x)θ),   φ(x) = tanh(q₁ + q₂) · diag(q̇₁, q̇₂)
//! ```
//!
//! With `θ = [1, −1]` the wind is `w(x) = tanh(q₁ + q₂)·(q̇₁, −q̇₂)`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SMatrix, Vector2, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::regression::Sample;
use crate::safety_filter::{BarrierEval, ParameterAffineSystem};
use crate::{linalg, Error, Result};

pub type Matrix4x2 = SMatrix<f64, 4, 2>;

/// Angular rate of the figure-eight reference, rad/s.
pub const TRAJECTORY_RATE: f64 = 0.1 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub q: Vector2<f64>,
    pub qdot: Vector2<f64>,
}

impl PlantState {
    pub fn new(q: [f64; 2], qdot: [f64; 2]) -> Self {
        Self {
            q: Vector2::from(q),
            qdot: Vector2::from(qdot),
        }
    }

    pub fn from_vector(x: &Vector4<f64>) -> Self {
        Self {
            q: Vector2::new(x[0], x[1]),
            qdot: Vector2::new(x[2], x[3]),
        }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.q[0], self.q[1], self.qdot[0], self.qdot[1])
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingGains {
    pub kp: [[f64; 2]; 2],
    pub kd: [[f64; 2]; 2],
}

impl TrackingGains {
    pub fn kp(&self) -> Matrix2<f64> {
        mat2(&self.kp)
    }

    pub fn kd(&self) -> Matrix2<f64> {
        mat2(&self.kd)
    }
}

impl Default for TrackingGains {
    fn default() -> Self {
        Self {
            kp: [[4.0, 0.0], [0.0, 4.0]],
            kd: [[4.0, 0.0], [0.0, 4.0]],
        }
    }
}

fn mat2(a: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub theta_true: [f64; 2],
    pub obstacles: Vec<ObstacleSpec>,
    /// Weight of the velocity extension in each obstacle barrier.
    pub mu: f64,
    /// Covariance of the additive measurement noise on the regression target.
    pub noise_cov: [[f64; 4]; 4],
    pub tracking_gains: TrackingGains,
}

impl Default for PlantConfig {
    fn default() -> Self {
        let mut noise_cov = [[0.0; 4]; 4];
        for (i, row) in noise_cov.iter_mut().enumerate() {
            row[i] = 0.1;
        }
        Self {
            theta_true: [1.0, -1.0],
            obstacles: vec![
                ObstacleSpec {
                    center: [-2.0, 1.2],
                    radius: 1.0,
                },
                ObstacleSpec {
                    center: [2.0, -1.2],
                    radius: 1.0,
                },
            ],
            mu: 2.0,
            noise_cov,
            tracking_gains: TrackingGains::default(),
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if let Some(o) = self.obstacles.iter().find(|o| !(o.radius > 0.0)) {
            return Err(Error::Config(format!("obstacle radius must be positive, got {}", o.radius)));
        }
        if !self.theta_true.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("theta_true"));
        }
        let cov = DMatrix::from_fn(4, 4, |i, j| self.noise_cov[i][j]);
        if (&cov - cov.transpose()).amax() > 1e-12 || linalg::lambda_min(&cov) < -1e-12 {
            return Err(Error::Config("noise_cov must be symmetric positive semidefinite".into()));
        }
        for (name, g) in [("kp", self.tracking_gains.kp()), ("kd", self.tracking_gains.kd())] {
            let sym = 0.5 * (g + g.transpose());
            if (g - g.transpose()).amax() > 1e-12 || sym.symmetric_eigenvalues().min() <= 0.0 {
                return Err(Error::Config(format!("tracking gain {name} must be symmetric positive definite")));
            }
        }
        Ok(())
    }

    pub fn theta_true(&self) -> Vector2<f64> {
        Vector2::from(self.theta_true)
    }

    pub fn noise(&self) -> MeasurementNoise {
        MeasurementNoise::new(&Matrix4::from_fn(|i, j| self.noise_cov[i][j]))
    }
}

/// `φ(x) = tanh(q₁ + q₂)·diag(q̇₁, q̇₂)`.
pub fn regressor(x: &PlantState) -> Matrix2<f64> {
    let s = (x.q[0] + x.q[1]).tanh();
    Matrix2::new(s * x.qdot[0], 0.0, 0.0, s * x.qdot[1])
}

/// The wind force in closed form, independent of the parameterisation.
pub fn wind(x: &PlantState) -> Vector2<f64> {
    let s = (x.q[0] + x.q[1]).tanh();
    Vector2::new(s * x.qdot[0], -s * x.qdot[1])
}

pub fn drift(x: &PlantState) -> Vector4<f64> {
    Vector4::new(x.qdot[0], x.qdot[1], 0.0, 0.0)
}

pub fn input_matrix() -> Matrix4x2 {
    Matrix4x2::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0)
}

/// `F(x) = g(x)φ(x)`.
pub fn param_matrix(x: &PlantState) -> Matrix4x2 {
    input_matrix() * regressor(x)
}

pub fn dynamics(x: &PlantState, u: &Vector2<f64>, theta: &Vector2<f64>) -> Vector4<f64> {
    let acc = u + regressor(x) * theta;
    Vector4::new(x.qdot[0], x.qdot[1], acc[0], acc[1])
}

/// One RK4 step with `u` held constant.
pub fn rk4_step(x: &PlantState, u: &Vector2<f64>, theta: &Vector2<f64>, dt: f64) -> PlantState {
    let x0 = x.to_vector();
    let f = |v: &Vector4<f64>| dynamics(&PlantState::from_vector(v), u, theta);
    let k1 = f(&x0);
    let k2 = f(&(x0 + k1 * (0.5 * dt)));
    let k3 = f(&(x0 + k2 * (0.5 * dt)));
    let k4 = f(&(x0 + k3 * dt));
    PlantState::from_vector(&(x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)))
}

/// Gaussian noise `ε ~ N(0, Σ_ε)` drawn through a PSD square root of `Σ_ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementNoise {
    factor: Matrix4<f64>,
}

impl MeasurementNoise {
    pub fn new(cov: &Matrix4<f64>) -> Self {
        let dyn_cov = DMatrix::from_fn(4, 4, |i, j| cov[(i, j)]);
        let l = linalg::psd_sqrt(&dyn_cov);
        Self {
            factor: Matrix4::from_fn(|i, j| l[(i, j)]),
        }
    }

    pub fn zero() -> Self {
        Self {
            factor: Matrix4::zeros(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector4<f64> {
        let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        self.factor * z
    }
}

/// Regression sample at `(x, u)`: `Φ = F(x)`, `y = ẋ − f(x) − g(x)u + ε`
/// with `ẋ` evaluated from the true model.
pub fn measurement<R: Rng + ?Sized>(
    x: &PlantState,
    u: &Vector2<f64>,
    theta_true: &Vector2<f64>,
    noise: Option<(&MeasurementNoise, &mut R)>,
    t: f64,
) -> Sample {
    let xdot = dynamics(x, u, theta_true);
    let mut y = xdot - drift(x) - input_matrix() * u;
    if let Some((noise, rng)) = noise {
        y += noise.sample(rng);
    }
    let phi = param_matrix(x);
    Sample {
        y: DVector::from_column_slice(y.as_slice()),
        phi: DMatrix::from_column_slice(4, 2, phi.as_slice()),
        t,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredPoint {
    pub q: Vector2<f64>,
    pub qdot: Vector2<f64>,
    pub qddot: Vector2<f64>,
}

/// Figure eight `q_d(t) = (4 sin ωt, 4 sin ωt cos ωt)` with `ω = 0.1π`.
pub fn desired_trajectory(t: f64) -> DesiredPoint {
    let w = TRAJECTORY_RATE;
    let (s, c) = (w * t).sin_cos();
    let (s2, c2) = (2.0 * w * t).sin_cos();
    DesiredPoint {
        q: Vector2::new(4.0 * s, 4.0 * s * c),
        qdot: Vector2::new(4.0 * w * c, 4.0 * w * c2),
        qddot: Vector2::new(-4.0 * w * w * s, -8.0 * w * w * s2),
    }
}

/// Squared-distance margin `d = ‖q − q_o‖² − r²`.
pub fn obstacle_distance(x: &PlantState, obs: &ObstacleSpec) -> f64 {
    let r = x.q - Vector2::from(obs.center);
    r.norm_squared() - obs.radius * obs.radius
}

/// `h = d − μ·min{0, L_f d}·L_f d` with `L_f d = 2(q − q_o)·q̇`.
pub fn barrier_value(x: &PlantState, obs: &ObstacleSpec, mu: f64) -> f64 {
    let r = x.q - Vector2::from(obs.center);
    let d = r.norm_squared() - obs.radius * obs.radius;
    let lfd = 2.0 * r.dot(&x.qdot);
    d - mu * lfd.min(0.0) * lfd
}

/// `∇h` over `(q, q̇)`, using `d/ds (min{0,s}·s) = 2 min{0,s}`.
pub fn barrier_gradient(x: &PlantState, obs: &ObstacleSpec, mu: f64) -> Vector4<f64> {
    let r = x.q - Vector2::from(obs.center);
    let lfd = 2.0 * r.dot(&x.qdot);
    let k = 2.0 * mu * lfd.min(0.0);
    let dq = 2.0 * r - k * 2.0 * x.qdot;
    let dqdot = -k * 2.0 * r;
    Vector4::new(dq[0], dq[1], dqdot[0], dqdot[1])
}

pub fn barrier_eval(x: &PlantState, obs: &ObstacleSpec, mu: f64) -> BarrierEval {
    let grad = barrier_gradient(x, obs, mu);
    let lie_drift = grad.dot(&drift(x));
    let lg = input_matrix().transpose() * grad;
    let lf_param = regressor(x).transpose() * lg;
    BarrierEval {
        h: barrier_value(x, obs, mu),
        lie_drift,
        lie_input: DVector::from_column_slice(lg.as_slice()),
        lie_param: DVector::from_column_slice(lf_param.as_slice()),
    }
}

/// Certainty-equivalence tracking law with wind cancellation:
/// `k0 = q̈_d + Kp(q_d − q) + Kd(q̇_d − q̇) − φ(x)θ̂`.
pub fn nominal_controller(
    x: &PlantState,
    t: f64,
    theta_hat: &Vector2<f64>,
    gains: &TrackingGains,
) -> Vector2<f64> {
    let d = desired_trajectory(t);
    d.qddot + gains.kp() * (d.q - x.q) + gains.kd() * (d.qdot - x.qdot) - regressor(x) * theta_hat
}

/// The wind plant as a generic parameter-affine system.
#[derive(Debug, Clone, Copy, Default)]
pub struct WindPlant;

fn state_of(x: &DVector<f64>) -> PlantState {
    PlantState::new([x[0], x[1]], [x[2], x[3]])
}

impl ParameterAffineSystem for WindPlant {
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(drift(&state_of(x)).as_slice())
    }

    fn input_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(4, 2, input_matrix().as_slice())
    }

    fn param_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(4, 2, param_matrix(&state_of(x)).as_slice())
    }

    fn matching_map(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 2, regressor(&state_of(x)).as_slice())
    }
}
