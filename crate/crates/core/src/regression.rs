//! History-stack recording, excitation monitoring and recursive-batch
//! least-squares propagation.
//!
//! The estimate minimises the accumulated stack prediction error plus a
//! quadratic prior penalty. Two equivalent representations are kept side by
//! side: the gain form `(θ̂, Γ)` and the information form `(S, r)` with
//! `S = Γ⁻¹` and `θ̂ = Γ r`. The information form evolves by a linear ODE and
//! cannot lose positive definiteness; the gain form is the Riccati-type
//! update and is integrated with RK4 when [`PropagationForm::Ode`] is chosen.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, symmetrize};
use crate::{Error, Result};

/// Minimum absolute gain in `λ_min` before a replacement counts as an improvement.
const LAMBDA_TOL: f64 = 1e-12;

/// Default relative improvement required to overwrite a full stack slot.
pub const DEFAULT_REPLACEMENT_MARGIN: f64 = 0.01;

/// Default threshold on `λ_min(Σ ΦⱼᵀΦⱼ)` for the finite excitation check.
pub const DEFAULT_FE_THRESHOLD: f64 = 1e-6;

/// One `(y, Φ)` observation of the linear regression `y = Φ θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub y: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub t: f64,
}

impl Sample {
    pub fn new(y: DVector<f64>, phi: DMatrix<f64>, t: f64) -> Result<Self> {
        if y.len() != phi.nrows() {
            return Err(Error::dim(
                format!("target of length {}", phi.nrows()),
                format!("length {}", y.len()),
            ));
        }
        if !linalg::is_finite_vector(&y) || !linalg::is_finite_matrix(&phi) || !t.is_finite() {
            return Err(Error::NonFinite("sample"));
        }
        Ok(Self { y, phi, t })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    sample: Sample,
    gram: DMatrix<f64>,
    cross: DVector<f64>,
}

impl Slot {
    fn new(sample: Sample) -> Self {
        let gram = sample.phi.transpose() * &sample.phi;
        let cross = sample.phi.transpose() * &sample.y;
        Self {
            sample,
            gram,
            cross,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Appended,
    Replaced(usize),
    Rejected,
}

/// Fixed-capacity buffer of regression samples.
///
/// Empty slots are simply absent and contribute nothing to the sums. Once
/// the stack is full a candidate only enters if swapping it in for some slot
/// raises `λ_min(Σ ΦⱼᵀΦⱼ)` by the configured relative margin, so the minimum
/// eigenvalue never decreases across [`HistoryStack::record`] calls.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryStack {
    capacity: usize,
    n: usize,
    p: usize,
    margin: f64,
    slots: Vec<Slot>,
    info: DMatrix<f64>,
    cross: DVector<f64>,
}

impl HistoryStack {
    pub fn new(capacity: usize, n: usize, p: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("history stack capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            n,
            p,
            margin: DEFAULT_REPLACEMENT_MARGIN,
            slots: Vec::with_capacity(capacity),
            info: DMatrix::zeros(p, p),
            cross: DVector::zeros(p),
        })
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == self.capacity
    }

    pub fn target_dim(&self) -> usize {
        self.n
    }

    pub fn param_dim(&self) -> usize {
        self.p
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.slots.iter().map(|s| &s.sample)
    }

    /// Cached `Σⱼ ΦⱼᵀΦⱼ`.
    pub fn info_matrix(&self) -> &DMatrix<f64> {
        &self.info
    }

    /// Cached `Σⱼ Φⱼᵀyⱼ`.
    pub fn cross_term(&self) -> &DVector<f64> {
        &self.cross
    }

    /// `Σⱼ ΦⱼᵀΦⱼ` summed from scratch, for checking the cache.
    pub fn recompute_info(&self) -> DMatrix<f64> {
        self.samples()
            .fold(DMatrix::zeros(self.p, self.p), |acc, s| acc + s.phi.transpose() * &s.phi)
    }

    pub fn lambda_min(&self) -> f64 {
        linalg::lambda_min(&self.info)
    }

    /// Offers a sample to the stack.
    pub fn record(&mut self, sample: Sample) -> Result<RecordOutcome> {
        if sample.phi.nrows() != self.n || sample.phi.ncols() != self.p {
            return Err(Error::dim(
                format!("regressor {}x{}", self.n, self.p),
                format!("{}x{}", sample.phi.nrows(), sample.phi.ncols()),
            ));
        }
        if sample.y.len() != self.n {
            return Err(Error::dim(format!("target of length {}", self.n), sample.y.len()));
        }
        if !linalg::is_finite_vector(&sample.y) || !linalg::is_finite_matrix(&sample.phi) {
            return Err(Error::NonFinite("sample"));
        }

        let candidate = Slot::new(sample);
        if self.slots.len() < self.capacity {
            self.info += &candidate.gram;
            symmetrize(&mut self.info);
            self.cross += &candidate.cross;
            self.slots.push(candidate);
            return Ok(RecordOutcome::Appended);
        }

        let current = self.lambda_min();
        let base = &self.info + &candidate.gram;
        // Ties resolve to the lowest slot index.
        let (best_slot, best) = self
            .slots
            .iter()
            .enumerate()
            .map(|(j, slot)| (j, linalg::lambda_min(&(&base - &slot.gram))))
            .fold((0, f64::NEG_INFINITY), |acc, (j, l)| if l > acc.1 { (j, l) } else { acc });

        if best > current + self.margin * current.abs() + LAMBDA_TOL {
            let old = std::mem::replace(&mut self.slots[best_slot], candidate);
            let new = &self.slots[best_slot];
            self.info += &new.gram - &old.gram;
            symmetrize(&mut self.info);
            self.cross += &new.cross - &old.cross;
            Ok(RecordOutcome::Replaced(best_slot))
        } else {
            Ok(RecordOutcome::Rejected)
        }
    }

    /// Writes the stack as CSV: `t, slot, y1..yn, phi_1_1..phi_n_p` (row-major).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["t".to_string(), "slot".to_string()];
        header.extend((1..=self.n).map(|i| format!("y{i}")));
        for i in 1..=self.n {
            header.extend((1..=self.p).map(|j| format!("phi_{i}_{j}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for (j, s) in self.samples().enumerate() {
            let mut fields = vec![s.t.to_string(), j.to_string()];
            fields.extend(s.y.iter().map(f64::to_string));
            fields.extend(linalg::row_major(&s.phi).iter().map(f64::to_string));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeReport {
    pub lambda_min: f64,
    pub satisfied: bool,
    pub first_satisfied_at: Option<f64>,
}

/// Snapshot finite excitation check; see [`ExcitationMonitor`] for the latched variant.
pub fn excitation(stack: &HistoryStack, threshold: f64) -> FeReport {
    let lambda_min = stack.lambda_min().max(0.0);
    FeReport {
        lambda_min,
        satisfied: lambda_min > threshold,
        first_satisfied_at: None,
    }
}

/// Tracks the first time the stack became exciting.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationMonitor {
    threshold: f64,
    first_satisfied_at: Option<f64>,
}

impl ExcitationMonitor {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            first_satisfied_at: None,
        }
    }

    pub fn first_satisfied_at(&self) -> Option<f64> {
        self.first_satisfied_at
    }

    pub fn observe(&mut self, stack: &HistoryStack, t: f64) -> FeReport {
        let mut report = excitation(stack, self.threshold);
        if report.satisfied && self.first_satisfied_at.is_none() {
            self.first_satisfied_at = Some(t);
        }
        report.first_satisfied_at = self.first_satisfied_at;
        report
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PriorRepr {
    theta_bar0: Vec<f64>,
    sigma0: Vec<Vec<f64>>,
}

/// Prior guess `θ̄₀` and its weighting/uncertainty matrix `Σ₀ ≻ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorRepr", into = "PriorRepr")]
pub struct Prior {
    theta_bar0: DVector<f64>,
    sigma0: DMatrix<f64>,
    sigma0_inv: DMatrix<f64>,
}

impl Prior {
    pub fn new(theta_bar0: DVector<f64>, sigma0: DMatrix<f64>) -> Result<Self> {
        let p = theta_bar0.len();
        if sigma0.nrows() != p || sigma0.ncols() != p {
            return Err(Error::dim(
                format!("{p}x{p} prior matrix"),
                format!("{}x{}", sigma0.nrows(), sigma0.ncols()),
            ));
        }
        if !linalg::is_finite_vector(&theta_bar0) || !linalg::is_finite_matrix(&sigma0) {
            return Err(Error::NonFinite("prior"));
        }
        if (&sigma0 - sigma0.transpose()).abs().max() > 1e-12 * (1.0 + sigma0.abs().max()) {
            return Err(Error::Config("prior matrix must be symmetric".into()));
        }
        let sigma0_inv = linalg::spd_inverse(&sigma0, "prior matrix")?;
        Ok(Self {
            theta_bar0,
            sigma0,
            sigma0_inv,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_bar0.len()
    }

    pub fn theta_bar0(&self) -> &DVector<f64> {
        &self.theta_bar0
    }

    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.sigma0
    }

    pub fn sigma0_inv(&self) -> &DMatrix<f64> {
        &self.sigma0_inv
    }
}

impl TryFrom<PriorRepr> for Prior {
    type Error = Error;

    fn try_from(r: PriorRepr) -> Result<Self> {
        Prior::new(DVector::from_vec(r.theta_bar0), linalg::from_rows(&r.sigma0)?)
    }
}

impl From<Prior> for PriorRepr {
    fn from(p: Prior) -> Self {
        PriorRepr {
            theta_bar0: p.theta_bar0.iter().copied().collect(),
            sigma0: linalg::to_rows(&p.sigma0),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationForm {
    /// Integrate the linear information-form ODE and solve for `(θ̂, Γ)`.
    #[default]
    Information,
    /// Integrate the gain-form update laws directly with RK4.
    Ode,
}

/// Estimator state in both gain and information form.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub theta_hat: DVector<f64>,
    pub gamma: DMatrix<f64>,
    /// `S = Γ⁻¹ = Σ₀⁻¹ + ∫ Σ ΦⱼᵀΦⱼ ds`.
    pub info: DMatrix<f64>,
    /// `Σ₀⁻¹θ̄₀ + ∫ Σ Φⱼᵀyⱼ ds`.
    pub accum: DVector<f64>,
    pub t: f64,
}

impl EstimatorState {
    pub fn from_prior(prior: &Prior) -> Self {
        Self {
            theta_hat: prior.theta_bar0.clone(),
            gamma: prior.sigma0.clone(),
            info: prior.sigma0_inv.clone(),
            accum: &prior.sigma0_inv * &prior.theta_bar0,
            t: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }
}

/// Advances the estimator by `dt` with the stack held constant over the step.
pub fn propagate(
    state: &EstimatorState,
    stack: &HistoryStack,
    dt: f64,
    form: PropagationForm,
) -> Result<EstimatorState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("propagation step must be positive, got {dt}")));
    }
    let p = state.dim();
    if stack.param_dim() != p {
        return Err(Error::dim(format!("stack with {p} parameters"), stack.param_dim()));
    }
    let rate_info = stack.info_matrix();
    let rate_cross = stack.cross_term();

    // Both right-hand sides are constant over the step, so one RK4 step is exact.
    let mut info = &state.info + rate_info * dt;
    symmetrize(&mut info);
    let accum = &state.accum + rate_cross * dt;
    let t = state.t + dt;

    let (theta_hat, gamma) = match form {
        PropagationForm::Information => {
            let chol = info
                .clone()
                .cholesky()
                .ok_or(Error::NotPositiveDefinite("information matrix"))?;
            let theta_hat = chol.solve(&accum);
            let mut gamma = chol.inverse();
            symmetrize(&mut gamma);
            (theta_hat, gamma)
        }
        PropagationForm::Ode => {
            let (theta_hat, mut gamma) =
                rk4_gain_form(&state.theta_hat, &state.gamma, rate_info, rate_cross, dt);
            symmetrize(&mut gamma);
            if gamma.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite(
                    "gain matrix after RK4 step; reduce the step size",
                ));
            }
            (theta_hat, gamma)
        }
    };

    Ok(EstimatorState {
        theta_hat,
        gamma,
        info,
        accum,
        t,
    })
}

fn gain_form_rhs(
    theta: &DVector<f64>,
    gamma: &DMatrix<f64>,
    info: &DMatrix<f64>,
    cross: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    // Σ Φᵀ(y − Φθ) = cross − info·θ
    let dtheta = gamma * (cross - info * theta);
    let dgamma = -(gamma * info * gamma);
    (dtheta, dgamma)
}

fn rk4_gain_form(
    theta: &DVector<f64>,
    gamma: &DMatrix<f64>,
    info: &DMatrix<f64>,
    cross: &DVector<f64>,
    dt: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let (k1t, k1g) = gain_form_rhs(theta, gamma, info, cross);
    let (k2t, k2g) = gain_form_rhs(
        &(theta + &k1t * (0.5 * dt)),
        &(gamma + &k1g * (0.5 * dt)),
        info,
        cross,
    );
    let (k3t, k3g) = gain_form_rhs(
        &(theta + &k2t * (0.5 * dt)),
        &(gamma + &k2g * (0.5 * dt)),
        info,
        cross,
    );
    let (k4t, k4g) = gain_form_rhs(&(theta + &k3t * dt), &(gamma + &k3g * dt), info, cross);
    let theta_next = theta + (k1t + k2t * 2.0 + k3t * 2.0 + k4t) * (dt / 6.0);
    let gamma_next = gamma + (k1g + k2g * 2.0 + k3g * 2.0 + k4g) * (dt / 6.0);
    (theta_next, gamma_next)
}

/// Batch solution from the accumulated integrals:
/// `Γ = (Σ₀⁻¹ + info_integral)⁻¹`, `θ̂ = Γ · accum`.
pub fn solve_closed_form(
    prior: &Prior,
    info_integral: &DMatrix<f64>,
    accum: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = prior.dim();
    if info_integral.nrows() != p || info_integral.ncols() != p || accum.len() != p {
        return Err(Error::dim(
            format!("{p}x{p} information and length-{p} accumulator"),
            format!("{}x{} and {}", info_integral.nrows(), info_integral.ncols(), accum.len()),
        ));
    }
    let mut s = prior.sigma0_inv() + info_integral;
    symmetrize(&mut s);
    let gamma = linalg::spd_inverse(&s, "closed-form information matrix")
        .map_err(|_| Error::Singular("closed-form information matrix"))?;
    let theta_hat = &gamma * accum;
    Ok((theta_hat, gamma))
}

/// Predicted error `Γ(t)Σ₀⁻¹(θ − θ̄₀)` next to the realised error `θ − θ̂(t)`.
/// In noiseless operation the two coincide.
pub fn error_transform(
    state: &EstimatorState,
    prior: &Prior,
    theta_true: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let predicted = &state.gamma * prior.sigma0_inv() * (theta_true - prior.theta_bar0());
    let actual = theta_true - &state.theta_hat;
    (predicted, actual)
}
