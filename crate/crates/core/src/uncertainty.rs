//! Zonotope and Gaussian parameter uncertainty carried through the
//! estimator's affine map `θ̂(t) = A(t)θ̄₀ + b(t)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, symmetrize};
use crate::regression::{EstimatorState, Prior};
use crate::{Error, Result};

/// Below this largest singular value a generator is treated as the singleton `{c}`.
pub const SINGLETON_EPS: f64 = 1e-10;

/// `{ c + G ξ : ‖ξ‖_∞ ≤ 1 }`. A generator with zero columns is the point `{c}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    pub center: DVector<f64>,
    pub generator: DMatrix<f64>,
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generator: DMatrix<f64>) -> Result<Self> {
        if generator.nrows() != center.len() {
            return Err(Error::dim(
                format!("generator with {} rows", center.len()),
                generator.nrows(),
            ));
        }
        if !linalg::is_finite_vector(&center) || !linalg::is_finite_matrix(&generator) {
            return Err(Error::NonFinite("zonotope"));
        }
        Ok(Self { center, generator })
    }

    pub fn singleton(center: DVector<f64>) -> Self {
        let p = center.len();
        Self {
            center,
            generator: DMatrix::zeros(p, 0),
        }
    }

    /// The set `Z(θ̂(t), Γ(t))` produced by the estimator.
    pub fn from_estimator(state: &EstimatorState) -> Self {
        Self {
            center: state.theta_hat.clone(),
            generator: state.gamma.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn order(&self) -> usize {
        self.generator.ncols()
    }

    /// `min_{θ ∈ Z} lᵀθ = lᵀc − Σᵢ |lᵀGᵢ|`.
    pub fn support_inf(&self, direction: &DVector<f64>) -> f64 {
        let lin = direction.dot(&self.center);
        let spread: f64 = self
            .generator
            .column_iter()
            .map(|g| direction.dot(&g).abs())
            .sum();
        lin - spread
    }

    /// `max_{θ ∈ Z} lᵀθ`.
    pub fn support_sup(&self, direction: &DVector<f64>) -> f64 {
        -self.support_inf(&(-direction))
    }

    fn is_collapsed(&self) -> bool {
        largest_singular_value(&self.generator) < SINGLETON_EPS
    }

    /// Exact membership for square invertible generators: `‖G⁻¹(c − x)‖_∞ ≤ 1`.
    ///
    /// Generators whose scale has collapsed below [`SINGLETON_EPS`] are treated
    /// as the singleton `{c}`.
    pub fn contains_point(&self, point: &DVector<f64>) -> Result<bool> {
        if point.len() != self.dim() {
            return Err(Error::dim(self.dim(), point.len()));
        }
        if self.is_collapsed() {
            let gap = (point - &self.center).amax();
            return Ok(gap <= SINGLETON_EPS);
        }
        let z = self.coordinates_of(&(&self.center - point))?;
        Ok(z.amax() <= 1.0 + 1e-12)
    }

    /// Sufficient containment test `inner ⊆ self`: with `P = G₂⁻¹G₁` and
    /// `z = G₂⁻¹(c₂ − c₁)`, certifies when `‖[P, z]‖_∞ ≤ 1`. A `false` result
    /// means "not certified", not "disjoint".
    pub fn contains_zonotope(&self, inner: &Zonotope) -> Result<bool> {
        if inner.dim() != self.dim() {
            return Err(Error::dim(self.dim(), inner.dim()));
        }
        let lu = self.invertible_lu()?;
        let p = lu.solve(&inner.generator).ok_or(Error::NonInvertibleGenerator)?;
        let z = lu
            .solve(&(&self.center - &inner.center))
            .ok_or(Error::NonInvertibleGenerator)?;
        let mut joined = DMatrix::zeros(self.dim(), p.ncols() + 1);
        joined.columns_mut(0, p.ncols()).copy_from(&p);
        joined.set_column(p.ncols(), &z);
        Ok(linalg::inf_norm(&joined) <= 1.0 + 1e-12)
    }

    fn invertible_lu(&self) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        if !self.generator.is_square() || self.order() == 0 {
            return Err(Error::NonInvertibleGenerator);
        }
        let svals = self.generator.clone().singular_values();
        let smax = svals.max();
        let smin = svals.min();
        if !(smin > SINGLETON_EPS * smax.max(1.0)) {
            return Err(Error::NonInvertibleGenerator);
        }
        Ok(self.generator.clone().lu())
    }

    fn coordinates_of(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.invertible_lu()?
            .solve(v)
            .ok_or(Error::NonInvertibleGenerator)
    }

    pub fn affine_image(&self, map: &AffineMap) -> Result<Zonotope> {
        map.apply_zonotope(self)
    }
}

fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// `θ ↦ Aθ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub a_matrix: DMatrix<f64>,
    pub b_vector: DVector<f64>,
}

impl AffineMap {
    pub fn identity(p: usize) -> Self {
        Self {
            a_matrix: DMatrix::identity(p, p),
            b_vector: DVector::zeros(p),
        }
    }

    pub fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.a_matrix * theta + &self.b_vector
    }

    pub fn apply_zonotope(&self, z: &Zonotope) -> Result<Zonotope> {
        if self.a_matrix.ncols() != z.dim() {
            return Err(Error::dim(self.a_matrix.ncols(), z.dim()));
        }
        Ok(Zonotope {
            center: self.apply(&z.center),
            generator: &self.a_matrix * &z.generator,
        })
    }

    pub fn apply_gaussian(&self, g: &GaussianBelief) -> Result<GaussianBelief> {
        if self.a_matrix.ncols() != g.mean.len() {
            return Err(Error::dim(self.a_matrix.ncols(), g.mean.len()));
        }
        let mut cov = &self.a_matrix * &g.covariance * self.a_matrix.transpose();
        symmetrize(&mut cov);
        Ok(GaussianBelief {
            mean: self.apply(&g.mean),
            covariance: linalg::psd_floor(&cov),
        })
    }
}

/// `A = Γ(t)Σ₀⁻¹`, `b = θ̂(t) − Aθ̄₀`, so that `Aθ̄₀ + b = θ̂(t)`.
pub fn estimator_affine_map(state: &EstimatorState, prior: &Prior) -> AffineMap {
    let a_matrix = &state.gamma * prior.sigma0_inv();
    let b_vector = &state.theta_hat - &a_matrix * prior.theta_bar0();
    AffineMap { a_matrix, b_vector }
}

pub fn affine_image(map: &AffineMap, z: &Zonotope) -> Result<Zonotope> {
    map.apply_zonotope(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn prior(prior: &Prior) -> Self {
        Self {
            mean: prior.theta_bar0().clone(),
            covariance: prior.sigma0().clone(),
        }
    }

    /// Standard deviation of `l·θ`: `sqrt(l · Cov · lᵀ)`, tiny negative radicands clamped to 0.
    pub fn lie_sigma(&self, row: &DVector<f64>) -> Result<f64> {
        if row.len() != self.mean.len() {
            return Err(Error::dim(self.mean.len(), row.len()));
        }
        if !linalg::is_finite_vector(row) {
            return Err(Error::NonFinite("Lie derivative row"));
        }
        let radicand = row.dot(&(&self.covariance * row));
        let tol = 1e-12 * (1.0 + row.norm_squared() * self.covariance.abs().max());
        if radicand < -tol {
            return Err(Error::NotPositiveDefinite("posterior covariance"));
        }
        Ok(radicand.max(0.0).sqrt())
    }
}

/// `N(θ̂(t), Γ(t)Σ₀⁻¹Γ(t)ᵀ)`.
pub fn gaussian_posterior(prior: &Prior, state: &EstimatorState) -> GaussianBelief {
    let mut cov = &state.gamma * prior.sigma0_inv() * state.gamma.transpose();
    symmetrize(&mut cov);
    GaussianBelief {
        mean: state.theta_hat.clone(),
        covariance: linalg::psd_floor(&cov),
    }
}

/// `σ = sqrt(l · Cov · lᵀ)` for the posterior covariance and a Lie-derivative row `l`.
pub fn lie_sigma(row: &DVector<f64>, state: &EstimatorState, prior: &Prior) -> Result<f64> {
    gaussian_posterior(prior, state).lie_sigma(row)
}

/// One row per snapshot: `t, kind, c1..cp, m_1_1..m_p_q` where `m` is the
/// zonotope generator or the Gaussian covariance, row-major.
pub fn write_sets_header<W: Write>(mut w: W, p: usize) -> std::io::Result<()> {
    let mut header = vec!["t".to_string(), "kind".to_string()];
    header.extend((1..=p).map(|i| format!("c{i}")));
    for i in 1..=p {
        header.extend((1..=p).map(|j| format!("m_{i}_{j}")));
    }
    writeln!(w, "{}", header.join(","))
}

pub fn write_zonotope_row<W: Write>(mut w: W, t: f64, z: &Zonotope) -> std::io::Result<()> {
    write_set_row(&mut w, t, "zonotope", &z.center, &z.generator)
}

pub fn write_gaussian_row<W: Write>(mut w: W, t: f64, g: &GaussianBelief) -> std::io::Result<()> {
    write_set_row(&mut w, t, "gaussian", &g.mean, &g.covariance)
}

fn write_set_row<W: Write>(
    w: &mut W,
    t: f64,
    kind: &str,
    c: &DVector<f64>,
    m: &DMatrix<f64>,
) -> std::io::Result<()> {
    let mut fields = vec![t.to_string(), kind.to_string()];
    fields.extend(c.iter().map(f64::to_string));
    fields.extend(linalg::row_major(m).iter().map(f64::to_string));
    writeln!(w, "{}", fields.join(","))
}
