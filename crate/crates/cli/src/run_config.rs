//! Problem and solver settings shared by `solve` and `train`.

use std::path::{Path, PathBuf};

use mcdl_core::bench::Method;
use mcdl_core::model::{
    build_fe_prior, build_gaussian_blur, draw_observation_indices, ForwardOperator, GaussianPrior, NoiseLevel,
    NoiseModel, NoiseScaling, PriorKind, TrainingSet,
};
use mcdl_core::optim::OptimizerConfig;
use mcdl_core::solvers::Hyperparameters;
use mcdl_core::training::LossKind;
use mcdl_core::{io, rng, Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Flat run configuration. Setting `forward` switches from the synthetic
/// deconvolution problem to matrices read from CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// `n x m` forward matrix.
    pub forward: Option<String>,
    /// `m x n_t` training parameters.
    pub train_params: Option<String>,
    /// `n x n_t` training data.
    pub train_data: Option<String>,
    /// `n x k` observations to invert, one per column.
    pub observations: Option<String>,
    /// `m x k` true parameters for error reporting.
    pub truth: Option<String>,
    /// `m x 1` prior mean; zero when absent.
    pub prior_mean: Option<String>,
    /// `m x m` prior covariance; identity when absent.
    pub prior_covariance: Option<String>,
    /// `n x n` noise covariance; identity when absent.
    pub noise_covariance: Option<String>,

    /// Grid points on [0, 1].
    pub grid_size: usize,
    pub obs_count: usize,
    /// Blur kernel standard deviation, in units of the unit interval.
    pub kernel_width: f64,
    /// Noise standard deviation as a fraction of `max|G U|`.
    pub noise_fraction: f64,
    /// Smallest fraction used for `Λ` when data are noise free.
    pub noise_floor: f64,
    pub prior_kind: PriorKind,
    pub prior_scale: f64,
    pub boundary_relaxation: f64,
    pub training_size: usize,
    /// Number of held-out observations to invert.
    pub test_size: usize,
    pub seed: u64,

    /// Closed-form method for `solve`.
    pub method: Method,
    pub alpha: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    /// Relative singular-value cutoff of pseudo-inverses.
    pub pinv_tol: f64,

    /// Objective for `train`.
    pub loss: LossKind,
    /// Network architecture, e.g. `16:tanh,linear`.
    pub arch: String,
    pub step_size: f64,
    pub max_iters: usize,
    /// Gradient-norm stopping tolerance.
    pub tol: f64,
    pub momentum: f64,
    pub log_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            forward: None,
            train_params: None,
            train_data: None,
            observations: None,
            truth: None,
            prior_mean: None,
            prior_covariance: None,
            noise_covariance: None,
            grid_size: 200,
            obs_count: 10,
            kernel_width: 0.03,
            noise_fraction: 0.05,
            noise_floor: 1e-3,
            prior_kind: PriorKind::Dirichlet,
            prior_scale: 1.0,
            boundary_relaxation: 1.0,
            training_size: 60,
            test_size: 5,
            seed: 0,
            method: Method::Mcdnn,
            alpha: 1.0,
            alpha1: 0.0,
            alpha2: 0.0,
            beta: 1.0,
            pinv_tol: 1e-12,
            loss: LossKind::Mcdnn,
            arch: "linear".into(),
            step_size: 1e-2,
            max_iters: 20_000,
            tol: 1e-8,
            momentum: 0.9,
            log_every: 10,
        }
    }
}

impl RunConfig {
    /// Rewrites file paths as absolute paths, relative ones taken from `base`.
    pub fn absolutize(&mut self, base: &Path) {
        for p in [
            &mut self.forward,
            &mut self.train_params,
            &mut self.train_data,
            &mut self.observations,
            &mut self.truth,
            &mut self.prior_mean,
            &mut self.prior_covariance,
            &mut self.noise_covariance,
        ]
        .into_iter()
        .flatten()
        {
            let path = PathBuf::from(&*p);
            if path.is_relative() {
                let joined = base.join(path);
                *p = std::fs::canonicalize(&joined).unwrap_or(joined).display().to_string();
            }
        }
    }

    pub fn hyper(&self) -> Hyperparameters {
        Hyperparameters {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            step_size: self.step_size,
            max_iters: self.max_iters,
            tol: self.tol,
            momentum: self.momentum,
            log_every: self.log_every,
            seed: self.seed,
            ..OptimizerConfig::default()
        }
    }
}

pub struct LoadedProblem {
    pub fwd: ForwardOperator,
    pub prior: GaussianPrior,
    pub noise: NoiseModel,
    pub ts: TrainingSet,
    pub observations: DMatrix<f64>,
    pub truth: Option<DMatrix<f64>>,
}

fn required(field: &Option<String>, name: &str) -> Result<DMatrix<f64>> {
    let path = field
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("`{name}` is required when `forward` is set")))?;
    io::read_matrix(Path::new(path))
}

fn optional(field: &Option<String>) -> Result<Option<DMatrix<f64>>> {
    field.as_deref().map(|p| io::read_matrix(Path::new(p))).transpose()
}

fn check_shape(name: &str, m: &DMatrix<f64>, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::InvalidArgument(format!(
            "`{name}` is {}x{}, expected {}x{}",
            m.nrows(),
            m.ncols(),
            shape.0,
            shape.1
        )));
    }
    Ok(())
}

pub fn load_problem(cfg: &RunConfig) -> Result<LoadedProblem> {
    if cfg.forward.is_some() {
        from_files(cfg)
    } else {
        synthetic(cfg)
    }
}

fn from_files(cfg: &RunConfig) -> Result<LoadedProblem> {
    let g = required(&cfg.forward, "forward")?;
    let (n, m) = g.shape();
    let u = required(&cfg.train_params, "train_params")?;
    let y = required(&cfg.train_data, "train_data")?;
    let observations = required(&cfg.observations, "observations")?;
    check_shape("observations", &observations, (n, observations.ncols()))?;
    let truth = optional(&cfg.truth)?;
    if let Some(t) = &truth {
        check_shape("truth", t, (m, observations.ncols()))?;
    }
    let mean = match optional(&cfg.prior_mean)? {
        Some(v) => {
            check_shape("prior_mean", &v, (m, 1))?;
            DVector::from_column_slice(v.as_slice())
        }
        None => DVector::zeros(m),
    };
    let covariance = optional(&cfg.prior_covariance)?.unwrap_or_else(|| DMatrix::identity(m, m));
    check_shape("prior_covariance", &covariance, (m, m))?;
    let noise_cov = optional(&cfg.noise_covariance)?.unwrap_or_else(|| DMatrix::identity(n, n));
    check_shape("noise_covariance", &noise_cov, (n, n))?;
    let ts = TrainingSet::new(u, y)?;
    if ts.param_dim() != m || ts.data_dim() != n {
        return Err(Error::InvalidArgument("training matrices do not match `forward`".into()));
    }
    Ok(LoadedProblem {
        fwd: ForwardOperator::linear(g)?,
        prior: GaussianPrior::from_covariance(mean, covariance)?,
        noise: NoiseModel::from_covariance(noise_cov)?,
        ts,
        observations,
        truth,
    })
}

/// Training and held-out samples share one prior draw, one observation-point
/// draw and one noise level, all from stream `(seed, 0)`.
fn synthetic(cfg: &RunConfig) -> Result<LoadedProblem> {
    if cfg.training_size == 0 || cfg.test_size == 0 {
        return Err(Error::InvalidArgument("training_size and test_size must be positive".into()));
    }
    if !(cfg.noise_floor > 0.0) {
        return Err(Error::InvalidArgument("noise_floor must be positive".into()));
    }
    let mut r = rng::stream(cfg.seed, 0);
    let indices = draw_observation_indices(cfg.grid_size, cfg.obs_count, &mut r)?;
    let fwd = build_gaussian_blur(cfg.grid_size, cfg.kernel_width, &indices)?;
    let prior = build_fe_prior(cfg.prior_kind, cfg.grid_size, cfg.prior_scale, cfg.boundary_relaxation)?;
    let pool = prior.sample_with(cfg.test_size + cfg.training_size, &mut r);
    let mut data = fwd.apply_columns(&pool)?;
    let scale = data.amax();
    let level = NoiseLevel::new(cfg.noise_fraction, NoiseScaling::MaxAbs)?;
    level.perturb_with_sigma(&mut data, cfg.noise_fraction * scale, &mut r);
    let noise = NoiseModel::isotropic(cfg.obs_count, cfg.noise_fraction.max(cfg.noise_floor) * scale)?;
    let ts = TrainingSet::new(
        pool.columns(cfg.test_size, cfg.training_size).into_owned(),
        data.columns(cfg.test_size, cfg.training_size).into_owned(),
    )?;
    Ok(LoadedProblem {
        fwd,
        prior,
        noise,
        ts,
        observations: data.columns(0, cfg.test_size).into_owned(),
        truth: Some(pool.columns(0, cfg.test_size).into_owned()),
    })
}
