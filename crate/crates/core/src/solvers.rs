//! Closed-form affine inverse maps and the Tikhonov solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, pseudo_inverse, spd_factor};
use crate::model::{ForwardOperator, GaussianPrior, NoiseModel, TrainingSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    Ndnn,
    Mcdnn,
    McdnnUnweighted,
}

impl MapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MapKind::Ndnn => "ndnn",
            MapKind::Mcdnn => "mcdnn",
            MapKind::McdnnUnweighted => "mcdnn-unweighted",
        }
    }
}

/// Learned inverse map `y -> W y + b`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub kind: MapKind,
}

impl AffineMap {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>, kind: MapKind) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::invalid(format!(
                "weight {:?} does not match bias of length {}",
                weight.shape(),
                bias.len()
            )));
        }
        Ok(AffineMap { weight, bias, kind })
    }

    pub fn data_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn param_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn predict(&self, y_obs: &DVector<f64>) -> Result<DVector<f64>> {
        if y_obs.len() != self.data_dim() {
            return Err(Error::invalid(format!(
                "map expects data of length {}, got {}",
                self.data_dim(),
                y_obs.len()
            )));
        }
        Ok(&self.weight * y_obs + &self.bias)
    }

    /// Predictions for every column of `y`.
    pub fn predict_columns(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.data_dim() {
            return Err(Error::invalid(format!(
                "map expects data of length {}, got {}",
                self.data_dim(),
                y.nrows()
            )));
        }
        let mut out = &self.weight * y;
        for mut col in out.column_iter_mut() {
            col += &self.bias;
        }
        Ok(out)
    }
}

pub fn predict(map: &AffineMap, y_obs: &DVector<f64>) -> Result<DVector<f64>> {
    map.predict(y_obs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            alpha1: 0.0,
            alpha2: 0.0,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            check_weight(name, v)?;
        }
        Ok(())
    }
}

pub(crate) fn check_weight(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be nonnegative and finite, got {v}")))
    }
}

/// Minimiser of the naive objective for a one-layer linear network:
///
/// `W = U P Y^T [Y P Y^T + α1 I]^†`, `b = (ū - W ȳ) / (1 + α2/n_t)`
/// with `P = I - 𝟙𝟙^T / (n_t + α2)`.
pub fn solve_ndnn_closed_form(ts: &TrainingSet, alpha1: f64, alpha2: f64, pinv_tol: f64) -> Result<AffineMap> {
    check_weight("alpha1", alpha1)?;
    check_weight("alpha2", alpha2)?;
    let u = ts.params();
    let y = ts.data();
    let nt = ts.len() as f64;
    let u_sum = u.column_sum();
    let y_sum = y.column_sum();
    let shrink = 1.0 / (nt + alpha2);

    // U P Y^T and Y P Y^T without forming the n_t x n_t matrix P.
    let mut upy = u * y.transpose();
    upy.ger(-shrink, &u_sum, &y_sum, 1.0);
    let mut ypy = y * y.transpose();
    ypy.ger(-shrink, &y_sum, &y_sum, 1.0);
    for i in 0..ypy.nrows() {
        ypy[(i, i)] += alpha1;
    }

    let weight = upy * pseudo_inverse(&ypy, pinv_tol)?;
    let u_mean = u_sum / nt;
    let y_mean = y_sum / nt;
    let bias = (u_mean - &weight * y_mean) / (1.0 + alpha2 / nt);
    linalg::ensure_finite(weight.iter().chain(bias.iter()), "naive closed form")?;
    AffineMap::new(weight, bias, MapKind::Ndnn)
}

fn check_dims(ts: &TrainingSet, g: &DMatrix<f64>, prior: &GaussianPrior, noise: &NoiseModel) -> Result<()> {
    let (n, m) = g.shape();
    if ts.param_dim() != m || ts.data_dim() != n || prior.dim() != m || noise.dim() != n {
        return Err(Error::invalid(format!(
            "dimension mismatch: U {}x{}, Y {}x{}, G {n}x{m}, prior {}, noise {}",
            ts.param_dim(),
            ts.len(),
            ts.data_dim(),
            ts.len(),
            prior.dim(),
            noise.dim()
        )));
    }
    Ok(())
}

/// The training-set independent part of the model-constrained closed form:
/// the Cholesky factor of `A = Γ^{-1} + α G^T Λ^{-1} G`. One factorization
/// serves any number of training sets.
#[derive(Debug, Clone)]
pub struct McdnnFactorization {
    system: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    gt_lam: DMatrix<f64>,
    prior_precision: DMatrix<f64>,
    alpha: f64,
    kind: MapKind,
}

impl McdnnFactorization {
    pub fn new(
        fwd: &ForwardOperator,
        prior_precision: &DMatrix<f64>,
        noise_precision: &DMatrix<f64>,
        alpha: f64,
        kind: MapKind,
    ) -> Result<Self> {
        check_weight("alpha", alpha)?;
        let g = fwd.require_linear("model-constrained closed form")?;
        let (n, m) = g.shape();
        if prior_precision.shape() != (m, m) || noise_precision.shape() != (n, n) {
            return Err(Error::invalid("precision matrices do not match the forward operator"));
        }
        let gt_lam = g.transpose() * noise_precision;
        let system_matrix = prior_precision + &gt_lam * g * alpha;
        let system = spd_factor(&linalg::symmetrize(&system_matrix), "model-constrained system matrix")
            .map_err(|e| Error::Internal(e.to_string()))?;
        Ok(McdnnFactorization {
            system,
            gt_lam,
            prior_precision: prior_precision.clone(),
            alpha,
            kind,
        })
    }

    /// `W = A^{-1}[Γ^{-1} Ū Ȳ^† + α G^T Λ^{-1} Ȳ Ȳ^†]`,
    /// `b = A^{-1}[Γ^{-1} ū + α G^T Λ^{-1} ȳ] - W ȳ`.
    pub fn fit(&self, ts: &TrainingSet, pinv_tol: f64) -> Result<AffineMap> {
        let (m, n) = self.gt_lam.shape();
        if ts.param_dim() != m || ts.data_dim() != n {
            return Err(Error::invalid("training set does not match forward operator"));
        }
        let stats = ts.centered();
        let y_pinv = pseudo_inverse(&stats.y_centered, pinv_tol)?;
        let rhs_weight = &self.prior_precision * (&stats.u_centered * &y_pinv)
            + &self.gt_lam * (&stats.y_centered * &y_pinv) * self.alpha;
        let rhs_mean = &self.prior_precision * &stats.u_mean + &self.gt_lam * &stats.y_mean * self.alpha;
        let weight = self.system.solve(&rhs_weight);
        let bias = self.system.solve(&rhs_mean) - &weight * &stats.y_mean;
        linalg::ensure_finite(weight.iter().chain(bias.iter()), "model-constrained closed form")?;
        AffineMap::new(weight, bias, self.kind)
    }
}

/// Stationary point of the model-constrained objective for a one-layer
/// linear network and linear forward map:
///
/// `W = A^{-1}[Γ^{-1} Ū Ȳ^† + α G^T Λ^{-1} Ȳ Ȳ^†]`,
/// `b = A^{-1}[Γ^{-1} ū + α G^T Λ^{-1} ȳ - (Γ^{-1} Ū Ȳ^† + α G^T Λ^{-1} Ȳ Ȳ^†) ȳ]`
/// with `A = Γ^{-1} + α G^T Λ^{-1} G`.
pub fn solve_mcdnn_closed_form(
    ts: &TrainingSet,
    fwd: &ForwardOperator,
    prior: &GaussianPrior,
    noise: &NoiseModel,
    alpha: f64,
    pinv_tol: f64,
) -> Result<AffineMap> {
    check_weight("alpha", alpha)?;
    check_dims(ts, fwd.require_linear("model-constrained closed form")?, prior, noise)?;
    McdnnFactorization::new(fwd, prior.precision(), noise.precision(), alpha, MapKind::Mcdnn)?.fit(ts, pinv_tol)
}

/// The same closed form with `Γ = I` and `Λ = I`.
pub fn solve_mcdnn_unweighted(ts: &TrainingSet, fwd: &ForwardOperator, alpha: f64, pinv_tol: f64) -> Result<AffineMap> {
    let (n, m) = fwd.require_linear("model-constrained closed form")?.shape();
    McdnnFactorization::new(
        fwd,
        &DMatrix::identity(m, m),
        &DMatrix::identity(n, n),
        alpha,
        MapKind::McdnnUnweighted,
    )?
    .fit(ts, pinv_tol)
}

/// Data-informed reference parameter
/// `u₀ = ū + Ū Ȳ^† (y - ȳ) - α Γ G^T Λ^{-1} (I - Ȳ Ȳ^†)(y - ȳ)`.
pub fn reference_parameter(
    ts: &TrainingSet,
    fwd: &ForwardOperator,
    prior: &GaussianPrior,
    noise: &NoiseModel,
    alpha: f64,
    y_obs: &DVector<f64>,
    pinv_tol: f64,
) -> Result<DVector<f64>> {
    check_weight("alpha", alpha)?;
    let g = fwd.require_linear("reference parameter")?;
    check_dims(ts, g, prior, noise)?;
    if y_obs.len() != g.nrows() {
        return Err(Error::invalid(format!("observation has length {}, expected {}", y_obs.len(), g.nrows())));
    }
    let stats = ts.centered();
    let y_pinv = pseudo_inverse(&stats.y_centered, pinv_tol)?;
    let dy = y_obs - &stats.y_mean;
    let coeff = &y_pinv * &dy;
    let projected = &stats.y_centered * &coeff;
    let residual = &dy - projected;
    let correction = prior.covariance() * (g.transpose() * (noise.precision() * residual));
    Ok(stats.u_mean + &stats.u_centered * coeff - correction * alpha)
}

/// Solves `(G^T Λ^{-1} G + Γ^{-1}/α) û = G^T Λ^{-1} y + Γ^{-1} u₀ / α`.
pub fn tikhonov_solve(
    fwd: &ForwardOperator,
    noise: &NoiseModel,
    prior: &GaussianPrior,
    alpha: f64,
    y_obs: &DVector<f64>,
    u0: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sol = tikhonov_solve_columns(
        fwd,
        noise,
        prior,
        alpha,
        &DMatrix::from_column_slice(y_obs.len(), 1, y_obs.as_slice()),
        u0,
    )?;
    Ok(sol.column(0).into_owned())
}

/// [`tikhonov_solve`] for several observations sharing one reference
/// parameter.
pub fn tikhonov_solve_columns(
    fwd: &ForwardOperator,
    noise: &NoiseModel,
    prior: &GaussianPrior,
    alpha: f64,
    y_obs: &DMatrix<f64>,
    u0: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("Tikhonov weight must be positive, got {alpha}")));
    }
    let g = fwd.require_linear("Tikhonov solve")?;
    let (n, m) = g.shape();
    if noise.dim() != n || prior.dim() != m || u0.len() != m || y_obs.nrows() != n {
        return Err(Error::invalid("Tikhonov inputs have inconsistent dimensions"));
    }
    let gt_lam = g.transpose() * noise.precision();
    let lhs = &gt_lam * g + prior.precision() / alpha;
    let chol = spd_factor(&linalg::symmetrize(&lhs), "Tikhonov normal matrix")?;
    let prior_term = prior.precision() * u0 / alpha;
    let mut rhs = &gt_lam * y_obs;
    for mut col in rhs.column_iter_mut() {
        col += &prior_term;
    }
    Ok(chol.solve(&rhs))
}
