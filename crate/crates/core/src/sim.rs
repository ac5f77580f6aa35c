//! Closed-loop simulation of the wind plant under the four controller
//! variants, with per-step logging and summary metrics.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::plant::{self, MeasurementNoise, PlantConfig, PlantState};
use crate::regression::{
    self, EstimatorState, ExcitationMonitor, HistoryStack, Prior, PropagationForm,
};
use crate::safety_filter::{self, ConstraintRow, FilterConfig, FilterMode};
use crate::uncertainty::{gaussian_posterior, Zonotope};
use crate::{linalg, Error, Result};

/// Barrier values above this floor count as safe in the ordering checks.
pub const SAFETY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    /// Adaptive tracking controller with no safety filter.
    AclfOnly,
    /// Robust filter over the prior zonotope; no online learning.
    RobustFixed,
    /// Robust filter over the shrinking estimator zonotope.
    ZonotopeAdaptive,
    /// Gaussian-margin filter over the estimator posterior.
    GaussianAdaptive,
}

impl ScenarioMode {
    pub const ALL: [ScenarioMode; 4] = [
        ScenarioMode::AclfOnly,
        ScenarioMode::RobustFixed,
        ScenarioMode::ZonotopeAdaptive,
        ScenarioMode::GaussianAdaptive,
    ];

    pub fn filter_mode(self) -> FilterMode {
        match self {
            ScenarioMode::AclfOnly => FilterMode::Off,
            ScenarioMode::RobustFixed => FilterMode::RobustFixed,
            ScenarioMode::ZonotopeAdaptive => FilterMode::Robust,
            ScenarioMode::GaussianAdaptive => FilterMode::Gaussian,
        }
    }

    /// Whether measurements are recorded and the estimator runs.
    pub fn is_adaptive(self) -> bool {
        matches!(self, ScenarioMode::ZonotopeAdaptive | ScenarioMode::GaussianAdaptive)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioMode::AclfOnly => "aclf_only",
            ScenarioMode::RobustFixed => "robust_fixed",
            ScenarioMode::ZonotopeAdaptive => "zonotope_adaptive",
            ScenarioMode::GaussianAdaptive => "gaussian_adaptive",
        }
    }
}

impl std::fmt::Display for ScenarioMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScenarioMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

fn one() -> usize {
    1
}

fn default_fe_threshold() -> f64 {
    regression::DEFAULT_FE_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: ScenarioMode,
    /// Simulated horizon, s.
    pub duration: f64,
    /// Integration step, s.
    pub dt: f64,
    /// Log every `log_stride` integration steps.
    pub log_stride: usize,
    pub seed: u64,
    pub plant: PlantConfig,
    pub prior: Prior,
    pub filter: FilterConfig,
    pub stack_capacity: usize,
    pub noise_on: bool,
    #[serde(default)]
    pub estimator: PropagationForm,
    /// Offer a measurement every `record_stride` steps.
    #[serde(default = "one")]
    pub record_stride: usize,
    /// Recompute the control every `control_divisor` steps (zero-order hold).
    #[serde(default = "one")]
    pub control_divisor: usize,
    #[serde(default = "default_fe_threshold")]
    pub fe_threshold: f64,
    /// `(q₁, q₂, q̇₁, q̇₂)`; defaults to `q_d(0)` at rest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<[f64; 4]>,
}

impl ScenarioConfig {
    /// The wind/obstacle case study: `θ̄₀ = [−0.1, 0.1]`, `Σ₀ = 2I`, `M = 20`,
    /// `Σ_ε = 0.1I`, 20 s at 1 kHz.
    pub fn case_study(mode: ScenarioMode) -> Self {
        let prior = Prior::new(
            DVector::from_vec(vec![-0.1, 0.1]),
            DMatrix::identity(2, 2) * 2.0,
        )
        .expect("case-study prior is positive definite");
        Self {
            mode,
            duration: 20.0,
            dt: 1e-3,
            log_stride: 10,
            seed: 0,
            plant: PlantConfig::default(),
            prior,
            filter: FilterConfig::default(),
            stack_capacity: 20,
            noise_on: true,
            estimator: PropagationForm::Information,
            record_stride: 1,
            control_divisor: 1,
            fe_threshold: regression::DEFAULT_FE_THRESHOLD,
            initial_state: None,
        }
    }

    pub fn with_noise(mut self, on: bool) -> Self {
        self.noise_on = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(Error::Config(format!("duration must be non-negative, got {}", self.duration)));
        }
        if self.duration > 0.0 && self.duration < self.dt {
            return Err(Error::Config("duration must be at least one step".into()));
        }
        if self.log_stride == 0 || self.record_stride == 0 || self.control_divisor == 0 {
            return Err(Error::Config("strides must be positive".into()));
        }
        if self.stack_capacity == 0 {
            return Err(Error::Config("stack_capacity must be positive".into()));
        }
        if self.prior.dim() != 2 {
            return Err(Error::Config(format!(
                "the wind plant has 2 parameters, prior has {}",
                self.prior.dim()
            )));
        }
        if !(self.fe_threshold > 0.0) {
            return Err(Error::Config("fe_threshold must be positive".into()));
        }
        self.plant.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn initial_plant_state(&self) -> PlantState {
        match self.initial_state {
            Some(x) => PlantState::new([x[0], x[1]], [x[2], x[3]]),
            // Starting with q̇_d(0) puts the case-study state outside the
            // extended safe set of the second obstacle.
            None => PlantState {
                q: plant::desired_trajectory(0.0).q,
                qdot: Vector2::zeros(),
            },
        }
    }
}

/// Everything that evolves during a run.
#[derive(Debug, Clone)]
pub struct SimState {
    pub step: usize,
    pub t: f64,
    pub x: PlantState,
    pub estimator: EstimatorState,
    pub stack: HistoryStack,
    pub excitation: ExcitationMonitor,
    rng: ChaCha8Rng,
    held: Option<ControlOutput>,
}

/// Input applied over one step together with the filter's view of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub k0: Vector2<f64>,
    pub u: Vector2<f64>,
    pub h: Vec<f64>,
    /// `a·u − b` per constraint row; empty when unfiltered.
    pub slacks: Vec<f64>,
    pub active_set: Vec<usize>,
    pub feasible: bool,
}

pub struct Simulator<'a> {
    cfg: &'a ScenarioConfig,
    noise: MeasurementNoise,
    fixed_set: Zonotope,
    filter: FilterConfig,
    theta_true: DVector<f64>,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let noise = if cfg.noise_on {
            cfg.plant.noise()
        } else {
            MeasurementNoise::zero()
        };
        let fixed_set = Zonotope::new(cfg.prior.theta_bar0().clone(), cfg.prior.sigma0().clone())?;
        Ok(Self {
            cfg,
            noise,
            fixed_set,
            filter: cfg.filter.with_mode(cfg.mode.filter_mode()),
            theta_true: DVector::from_row_slice(&cfg.plant.theta_true),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        self.cfg
    }

    pub fn initial_state(&self) -> Result<SimState> {
        Ok(SimState {
            step: 0,
            t: 0.0,
            x: self.cfg.initial_plant_state(),
            estimator: EstimatorState::from_prior(&self.cfg.prior),
            stack: HistoryStack::new(self.cfg.stack_capacity, 4, 2)?,
            excitation: ExcitationMonitor::new(self.cfg.fe_threshold),
            rng: ChaCha8Rng::seed_from_u64(self.cfg.seed),
            held: None,
        })
    }

    /// Nominal input, barrier rows and filtered input at the current state,
    /// honouring the zero-order hold between control updates.
    pub fn control(&self, st: &SimState) -> Result<ControlOutput> {
        if let Some(held) = &st.held {
            if st.step % self.cfg.control_divisor != 0 {
                return Ok(held.clone());
            }
        }
        self.compute_control(st)
    }

    fn compute_control(&self, st: &SimState) -> Result<ControlOutput> {
        let theta_hat = Vector2::new(st.estimator.theta_hat[0], st.estimator.theta_hat[1]);
        let k0 = plant::nominal_controller(&st.x, st.t, &theta_hat, &self.cfg.plant.tracking_gains);
        let evals: Vec<_> = self
            .cfg
            .plant
            .obstacles
            .iter()
            .map(|o| plant::barrier_eval(&st.x, o, self.cfg.plant.mu))
            .collect();
        let h = evals.iter().map(|e| e.h).collect();

        let rows: Vec<ConstraintRow> = match self.filter.mode {
            FilterMode::Off => Vec::new(),
            FilterMode::RobustFixed => evals
                .iter()
                .map(|e| safety_filter::racbf_constraint(e, &self.fixed_set, &self.filter))
                .collect::<Result<_>>()?,
            FilterMode::Robust => {
                let set = Zonotope::from_estimator(&st.estimator);
                evals
                    .iter()
                    .map(|e| safety_filter::racbf_constraint(e, &set, &self.filter))
                    .collect::<Result<_>>()?
            }
            FilterMode::Gaussian => {
                let belief = gaussian_posterior(&self.cfg.prior, &st.estimator);
                evals
                    .iter()
                    .map(|e| safety_filter::gracbf_constraint(e, &belief, &self.filter))
                    .collect::<Result<_>>()?
            }
        };

        let k0_dyn = DVector::from_column_slice(k0.as_slice());
        let res = safety_filter::solve_filter_qp(&k0_dyn, &rows)?;
        let slacks = rows.iter().map(|r| r.slack(&res.u)).collect();
        Ok(ControlOutput {
            k0,
            u: Vector2::new(res.u[0], res.u[1]),
            h,
            slacks,
            active_set: res.active_set,
            feasible: res.feasible,
        })
    }

    /// Integrates the plant over one step with `ctrl.u` held, records a
    /// measurement and propagates the estimator (adaptive modes only).
    pub fn advance(&self, st: &mut SimState, ctrl: &ControlOutput) -> Result<()> {
        let dt = self.cfg.dt;
        let theta_true = self.cfg.plant.theta_true();
        let x_next = plant::rk4_step(&st.x, &ctrl.u, &theta_true, dt);

        if self.cfg.mode.is_adaptive() {
            if st.step % self.cfg.record_stride == 0 {
                let noise = self.cfg.noise_on.then_some((&self.noise, &mut st.rng));
                let sample = plant::measurement(&st.x, &ctrl.u, &theta_true, noise, st.t);
                st.stack.record(sample)?;
            }
            st.estimator = regression::propagate(&st.estimator, &st.stack, dt, self.cfg.estimator)?;
        }

        st.step += 1;
        st.t = st.step as f64 * dt;
        st.estimator.t = st.t;
        st.x = x_next;
        st.held = Some(ctrl.clone());
        st.excitation.observe(&st.stack, st.t);

        if !st.x.is_finite() || !linalg::is_finite_vector(&st.estimator.theta_hat) {
            return Err(Error::Diverged {
                t: st.t,
                what: "non-finite plant or estimator state".into(),
            });
        }
        Ok(())
    }

    /// One control period: compute the input, then advance.
    pub fn step(&self, st: &mut SimState) -> Result<ControlOutput> {
        let ctrl = self.control(st)?;
        self.advance(st, &ctrl)?;
        Ok(ctrl)
    }

    fn contains_truth(&self, st: &SimState) -> Result<bool> {
        Zonotope::from_estimator(&st.estimator).contains_point(&self.theta_true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub t: f64,
    pub q: [f64; 2],
    pub qdot: [f64; 2],
    pub q_desired: [f64; 2],
    pub u: [f64; 2],
    pub k0: [f64; 2],
    pub theta_hat: Vec<f64>,
    /// Row-major `Γ`.
    pub gamma: Vec<f64>,
    pub h: Vec<f64>,
    pub slacks: Vec<f64>,
    pub active_set: Vec<usize>,
    pub feasible: bool,
    pub lambda_min_info: f64,
    pub contains_truth: bool,
    pub fe_satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Minimum barrier value over all obstacles and steps; `None` without obstacles.
    pub min_h: Option<f64>,
    pub rms_tracking_error: f64,
    pub final_param_error: f64,
    pub time_to_fe: Option<f64>,
    /// Steps at which `θ ∉ Z(θ̂, Γ)`.
    pub containment_violations: usize,
    pub infeasible_steps: usize,
    /// No infeasible filter QP during the run.
    pub safety_certificate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub mode: ScenarioMode,
    pub prior: Prior,
    pub theta_true: [f64; 2],
    pub obstacles: usize,
    pub records: Vec<LogRecord>,
    pub metrics: Metrics,
    pub final_stack: HistoryStack,
}

/// Runs a scenario to completion. Deterministic in `(config, seed)`.
pub fn run(cfg: &ScenarioConfig) -> Result<RunLog> {
    let sim = Simulator::new(cfg)?;
    let mut st = sim.initial_state()?;
    let n = cfg.steps();

    let mut records = Vec::with_capacity(n / cfg.log_stride + 1);
    let mut min_h: Option<f64> = None;
    let mut sq_err = 0.0;
    let mut containment_violations = 0;
    let mut infeasible_steps = 0;

    for k in 0..=n {
        let ctrl = sim.control(&st)?;
        let desired = plant::desired_trajectory(st.t);
        sq_err += (st.x.q - desired.q).norm_squared();
        for &h in &ctrl.h {
            min_h = Some(min_h.map_or(h, |m: f64| m.min(h)));
        }
        if !ctrl.feasible {
            infeasible_steps += 1;
        }
        let contains = sim.contains_truth(&st)?;
        if !contains {
            containment_violations += 1;
        }

        if k % cfg.log_stride == 0 {
            records.push(LogRecord {
                t: st.t,
                q: st.x.q.into(),
                qdot: st.x.qdot.into(),
                q_desired: desired.q.into(),
                u: ctrl.u.into(),
                k0: ctrl.k0.into(),
                theta_hat: st.estimator.theta_hat.iter().copied().collect(),
                gamma: linalg::row_major(&st.estimator.gamma),
                h: ctrl.h.clone(),
                slacks: ctrl.slacks.clone(),
                active_set: ctrl.active_set.clone(),
                feasible: ctrl.feasible,
                lambda_min_info: st.stack.lambda_min().max(0.0),
                contains_truth: contains,
                fe_satisfied: st.excitation.first_satisfied_at().is_some(),
            });
        }
        if k == n {
            break;
        }
        sim.advance(&mut st, &ctrl)?;
    }

    let theta_true = DVector::from_row_slice(&cfg.plant.theta_true);
    let metrics = Metrics {
        min_h,
        rms_tracking_error: (sq_err / (n + 1) as f64).sqrt(),
        final_param_error: (&theta_true - &st.estimator.theta_hat).norm(),
        time_to_fe: st.excitation.first_satisfied_at(),
        containment_violations,
        infeasible_steps,
        safety_certificate: infeasible_steps == 0,
    };
    Ok(RunLog {
        mode: cfg.mode,
        prior: cfg.prior.clone(),
        theta_true: cfg.plant.theta_true,
        obstacles: cfg.plant.obstacles.len(),
        records,
        metrics,
        final_stack: st.stack,
    })
}

/// Runs each configuration on its own thread where threads are available.
pub fn run_many(cfgs: &[ScenarioConfig]) -> Vec<Result<RunLog>> {
    #[cfg(not(target_arch = "wasm32"))]
    {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfgs.iter().map(|c| s.spawn(move || run(c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation thread panicked"))
                .collect()
        })
    }
    #[cfg(target_arch = "wasm32")]
    {
        cfgs.iter().map(run).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub mode: ScenarioMode,
    pub metrics: Metrics,
}

/// Metrics side by side plus the expected qualitative ordering.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Unfiltered tracking leaves the safe set (`None` if not compared).
    pub unfiltered_violates_safety: Option<bool>,
    /// Every filtered run keeps `min_h ≥ −SAFETY_TOL`.
    pub filtered_runs_safe: Option<bool>,
    /// Each adaptive run tracks better (lower RMS error) than the fixed robust run.
    pub adaptive_tracks_better: Option<bool>,
}

impl Comparison {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>12} {:>10} {:>12} {:>10} {:>8} {:>10}",
            "run", "min_h", "rms_err", "param_err", "t_fe", "contain", "infeasible"
        );
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{:<24} {:>12} {:>10.4} {:>12.3e} {:>10} {:>8} {:>10}",
                r.label,
                m.min_h.map_or("-".to_string(), |h| format!("{h:.4}")),
                m.rms_tracking_error,
                m.final_param_error,
                m.time_to_fe.map_or("-".to_string(), |t| format!("{t:.3}")),
                m.containment_violations,
                m.infeasible_steps,
            );
        }
        let flag = |f: Option<bool>| f.map_or("n/a", |b| if b { "yes" } else { "NO" });
        let _ = writeln!(out, "unfiltered run violates safety: {}", flag(self.unfiltered_violates_safety));
        let _ = writeln!(out, "filtered runs stay safe:        {}", flag(self.filtered_runs_safe));
        let _ = writeln!(out, "adaptive beats fixed on rms:    {}", flag(self.adaptive_tracks_better));
        out
    }
}

pub fn compare_logs(labels: &[String], logs: &[RunLog]) -> Comparison {
    let rows: Vec<ComparisonRow> = labels
        .iter()
        .zip(logs)
        .map(|(label, log)| ComparisonRow {
            label: label.clone(),
            mode: log.mode,
            metrics: log.metrics.clone(),
        })
        .collect();
    let by_mode = |m: ScenarioMode| rows.iter().filter(move |r| r.mode == m);

    let unfiltered: Vec<_> = by_mode(ScenarioMode::AclfOnly).collect();
    let unfiltered_violates_safety = (!unfiltered.is_empty())
        .then(|| unfiltered.iter().all(|r| r.metrics.min_h.is_some_and(|h| h < 0.0)));

    let filtered: Vec<_> = rows.iter().filter(|r| r.mode != ScenarioMode::AclfOnly).collect();
    let filtered_runs_safe = (!filtered.is_empty()).then(|| {
        filtered
            .iter()
            .all(|r| r.metrics.min_h.is_none_or(|h| h >= -SAFETY_TOL))
    });

    let fixed: Vec<_> = by_mode(ScenarioMode::RobustFixed).collect();
    let adaptive: Vec<_> = rows.iter().filter(|r| r.mode.is_adaptive()).collect();
    let adaptive_tracks_better = (!fixed.is_empty() && !adaptive.is_empty()).then(|| {
        adaptive.iter().all(|a| {
            fixed
                .iter()
                .all(|f| a.metrics.rms_tracking_error < f.metrics.rms_tracking_error)
        })
    });

    Comparison {
        rows,
        unfiltered_violates_safety,
        filtered_runs_safe,
        adaptive_tracks_better,
    }
}

/// Runs the configurations and tabulates their metrics.
pub fn compare(cfgs: &[ScenarioConfig]) -> Result<(Comparison, Vec<RunLog>)> {
    if cfgs.len() < 2 {
        return Err(Error::Config("compare needs at least two configurations".into()));
    }
    let geometry = &cfgs[0].plant.obstacles;
    if cfgs.iter().any(|c| &c.plant.obstacles != geometry) {
        return Err(Error::Config("compared configurations must share obstacle geometry".into()));
    }
    let logs = run_many(cfgs).into_iter().collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = cfgs
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{i}_{}", c.mode))
        .collect();
    Ok((compare_logs(&labels, &logs), logs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuralReport {
    pub matching: safety_filter::MatchReport,
    /// One report per obstacle, over states sampled on its boundary.
    pub criterion: Vec<safety_filter::CriterionReport>,
}

impl StructuralReport {
    pub fn passed(&self) -> bool {
        self.matching.matched && self.criterion.iter().all(|c| c.compliant())
    }
}

/// Checks that the wind enters through the input channel and that every
/// obstacle barrier satisfies the adaptive-CBF criterion on its boundary.
pub fn structural_check(cfg: &ScenarioConfig, samples: usize) -> Result<StructuralReport> {
    use rand::Rng;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let states: Vec<DVector<f64>> = (0..samples)
        .map(|_| DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0)))
        .collect();
    let matching = safety_filter::matched_check(&plant::WindPlant, &states, 1e-12);

    let criterion = cfg
        .plant
        .obstacles
        .iter()
        .map(|o| {
            let evals: Vec<_> = (0..samples)
                .map(|_| {
                    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let q = [
                        o.center[0] + o.radius * angle.cos(),
                        o.center[1] + o.radius * angle.sin(),
                    ];
                    let qdot = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                    plant::barrier_eval(&PlantState::new(q, qdot), o, cfg.plant.mu)
                })
                .collect();
            safety_filter::cbf_criterion_check(&evals, &cfg.filter, 1e-9)
        })
        .collect();
    Ok(StructuralReport { matching, criterion })
}
