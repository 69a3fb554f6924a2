//! The 1D Gaussian-deconvolution benchmark: learned affine inverse maps
//! against a Tikhonov baseline over training sizes and hyperparameter grids.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DEFAULT_PINV_TOL;
use crate::model::{
    build_fe_prior, build_gaussian_blur, draw_observation_indices, GaussianPrior, NoiseLevel, NoiseModel, NoiseScaling,
    PriorKind, TrainingSet,
};
use crate::rng::{self, StreamRng, SHARED_STREAM};
use crate::solvers::{self, MapKind, McdnnFactorization};

/// Benchmark settings. Lengths are in units of the unit interval; noise
/// fractions are relative to `max|G U|` over the repetition's samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Number of grid points on [0, 1].
    pub grid_size: usize,
    /// Number of observed grid points.
    pub obs_count: usize,
    /// Noise standard deviation as a fraction of `max|G U|`.
    pub noise_fraction: f64,
    /// Smallest fraction used for the solvers' `Λ` when data are noise free.
    pub noise_floor: f64,
    pub prior_kinds: Vec<PriorKind>,
    /// Multiplier on the FE precision.
    pub prior_scale: f64,
    /// Boundary term of the relaxed prior.
    pub boundary_relaxation: f64,
    /// Standard deviation of the blur kernel.
    pub kernel_width: f64,
    pub training_sizes: Vec<usize>,
    pub test_size: usize,
    pub repetitions: usize,
    /// Log-spaced α grid for the model-constrained maps and Tikhonov.
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_count: usize,
    /// Log-spaced grid shared by α1 and α2 of the naive map.
    pub ndnn_alpha_min: f64,
    pub ndnn_alpha_max: f64,
    pub ndnn_alpha_count: usize,
    pub seed: u64,
    /// Reuse one set of observation points for every repetition.
    pub fixed_indices: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid_size: 200,
            obs_count: 10,
            noise_fraction: 0.05,
            noise_floor: 1e-3,
            prior_kinds: vec![PriorKind::Dirichlet, PriorKind::Relaxed],
            prior_scale: 1.0,
            boundary_relaxation: 1.0,
            kernel_width: 0.03,
            training_sizes: vec![30, 60, 90, 120, 150],
            test_size: 50,
            repetitions: 100,
            alpha_min: 1e-4,
            alpha_max: 1e4,
            alpha_count: 20,
            ndnn_alpha_min: 1e-4,
            ndnn_alpha_max: 1e4,
            ndnn_alpha_count: 5,
            seed: 0,
            fixed_indices: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.grid_size < 3 || self.obs_count == 0 || self.obs_count > self.grid_size {
            return bad("need grid_size >= 3 and 1 <= obs_count <= grid_size");
        }
        if self.training_sizes.is_empty() || self.training_sizes.contains(&0) {
            return bad("training_sizes must be nonempty and positive");
        }
        if self.test_size == 0 || self.repetitions == 0 {
            return bad("test_size and repetitions must be positive");
        }
        if self.prior_kinds.is_empty() {
            return bad("prior_kinds must be nonempty");
        }
        if !(self.noise_fraction >= 0.0 && self.noise_fraction.is_finite()) {
            return bad("noise_fraction must be nonnegative");
        }
        if !(self.noise_floor > 0.0 && self.noise_floor.is_finite()) {
            return bad("noise_floor must be positive");
        }
        if !(self.kernel_width > 0.0 && self.prior_scale > 0.0 && self.boundary_relaxation >= 0.0) {
            return bad("kernel_width and prior_scale must be positive, boundary_relaxation nonnegative");
        }
        log_grid(self.alpha_min, self.alpha_max, self.alpha_count)?;
        log_grid(self.ndnn_alpha_min, self.ndnn_alpha_max, self.ndnn_alpha_count)?;
        Ok(())
    }

    pub fn alphas(&self) -> Result<Vec<f64>> {
        log_grid(self.alpha_min, self.alpha_max, self.alpha_count)
    }

    pub fn ndnn_alphas(&self) -> Result<Vec<f64>> {
        log_grid(self.ndnn_alpha_min, self.ndnn_alpha_max, self.ndnn_alpha_count)
    }
}

/// `count` points log-spaced from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 || !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::invalid(format!("invalid log grid [{lo}, {hi}] with {count} points")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..count)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ndnn,
    McdnnUnweighted,
    Mcdnn,
    Tikhonov,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ndnn, Method::McdnnUnweighted, Method::Mcdnn, Method::Tikhonov];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ndnn => "ndnn",
            Method::McdnnUnweighted => "mcdnn-unweighted",
            Method::Mcdnn => "mcdnn",
            Method::Tikhonov => "tikhonov",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mean test-set relative error of one method at one grid point in one
/// repetition. `alpha` is α1 and `alpha2` is set for the naive map only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: Method,
    pub prior_kind: PriorKind,
    pub n_t: usize,
    pub alpha: f64,
    pub alpha2: Option<f64>,
    pub repetition: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub method: Method,
    pub prior_kind: PriorKind,
    pub n_t: usize,
    pub alpha: f64,
    pub alpha2: Option<f64>,
    pub repetition: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

impl ErrorReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// `‖û - u*‖ / ‖u*‖`.
pub fn relative_error(u_hat: &DVector<f64>, u_star: &DVector<f64>) -> Result<f64> {
    if u_hat.len() != u_star.len() {
        return Err(Error::invalid("relative error of vectors with different lengths"));
    }
    let denom = u_star.norm();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    Ok((u_hat - u_star).norm() / denom)
}

/// Mean of the column-wise relative errors.
pub fn mean_relative_error(u_hat: &DMatrix<f64>, u_star: &DMatrix<f64>) -> Result<f64> {
    if u_hat.shape() != u_star.shape() || u_star.ncols() == 0 {
        return Err(Error::invalid("prediction and truth have different shapes"));
    }
    let mut total = 0.0;
    for (a, b) in u_hat.column_iter().zip(u_star.column_iter()) {
        total += relative_error(&a.into_owned(), &b.into_owned())?;
    }
    let mean = total / u_star.ncols() as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric {
            location: "relative error".into(),
        });
    }
    Ok(mean)
}

struct Cell {
    method: Method,
    n_t: usize,
    alpha: f64,
    alpha2: Option<f64>,
}

struct RepOutcome {
    rows: Vec<ResultRow>,
    failures: Vec<CellFailure>,
}

impl RepOutcome {
    fn record(&mut self, prior_kind: PriorKind, repetition: usize, cell: Cell, result: Result<f64>) {
        match result {
            Ok(rel_error) => self.rows.push(ResultRow {
                method: cell.method,
                prior_kind,
                n_t: cell.n_t,
                alpha: cell.alpha,
                alpha2: cell.alpha2,
                repetition,
                rel_error,
            }),
            Err(e) => self.failures.push(CellFailure {
                method: cell.method,
                prior_kind,
                n_t: cell.n_t,
                alpha: cell.alpha,
                alpha2: cell.alpha2,
                repetition,
                message: e.to_string(),
            }),
        }
    }
}

fn run_repetition(
    cfg: &ExperimentConfig,
    prior_kind: PriorKind,
    prior: &GaussianPrior,
    fixed: Option<&[usize]>,
    repetition: usize,
) -> Result<RepOutcome> {
    let mut out = RepOutcome {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    let mut r: StreamRng = rng::stream(cfg.seed, repetition as u64);
    let drawn;
    let indices = match fixed {
        Some(idx) => idx,
        None => {
            drawn = draw_observation_indices(cfg.grid_size, cfg.obs_count, &mut r)?;
            &drawn
        }
    };
    let fwd = build_gaussian_blur(cfg.grid_size, cfg.kernel_width, indices)?;
    let max_size = *cfg.training_sizes.iter().max().expect("validated");
    let pool = prior.sample_with(cfg.test_size + max_size, &mut r);
    let mut data = fwd.apply_columns(&pool)?;
    let scale = data.amax();
    let level = NoiseLevel::new(cfg.noise_fraction, NoiseScaling::MaxAbs)?;
    level.perturb_with_sigma(&mut data, cfg.noise_fraction * scale, &mut r);
    let sigma_model = cfg.noise_fraction.max(cfg.noise_floor) * scale;
    let noise = NoiseModel::isotropic(cfg.obs_count, sigma_model)?;

    let u_test = pool.columns(0, cfg.test_size).into_owned();
    let y_test = data.columns(0, cfg.test_size).into_owned();
    let alphas = cfg.alphas()?;
    let ndnn_alphas = cfg.ndnn_alphas()?;

    let evaluate = |map: Result<solvers::AffineMap>| -> Result<f64> {
        mean_relative_error(&map?.predict_columns(&y_test)?, &u_test)
    };

    // The baseline uses no training data; its rows repeat for every size.
    for &alpha in &alphas {
        let result = solvers::tikhonov_solve_columns(&fwd, &noise, prior, alpha, &y_test, prior.mean())
            .and_then(|u_hat| mean_relative_error(&u_hat, &u_test));
        for &n_t in &cfg.training_sizes {
            let cloned = match &result {
                Ok(v) => Ok(*v),
                Err(e) => Err(Error::Internal(e.to_string())),
            };
            out.record(prior_kind, repetition, Cell { method: Method::Tikhonov, n_t, alpha, alpha2: None }, cloned);
        }
    }

    let m = cfg.grid_size;
    let n = cfg.obs_count;
    let identity_m = DMatrix::identity(m, m);
    let identity_n = DMatrix::identity(n, n);
    let mut factors = Vec::with_capacity(2 * alphas.len());
    for &alpha in &alphas {
        factors.push((
            alpha,
            McdnnFactorization::new(&fwd, &identity_m, &identity_n, alpha, MapKind::McdnnUnweighted),
            McdnnFactorization::new(&fwd, prior.precision(), noise.precision(), alpha, MapKind::Mcdnn),
        ));
    }

    for &n_t in &cfg.training_sizes {
        let ts = TrainingSet::new(
            pool.columns(cfg.test_size, n_t).into_owned(),
            data.columns(cfg.test_size, n_t).into_owned(),
        )?;
        for &a1 in &ndnn_alphas {
            for &a2 in &ndnn_alphas {
                let result = evaluate(solvers::solve_ndnn_closed_form(&ts, a1, a2, DEFAULT_PINV_TOL));
                out.record(prior_kind, repetition, Cell { method: Method::Ndnn, n_t, alpha: a1, alpha2: Some(a2) }, result);
            }
        }
        for (alpha, unweighted, weighted) in &factors {
            for (method, factor) in [(Method::McdnnUnweighted, unweighted), (Method::Mcdnn, weighted)] {
                let result = match factor {
                    Ok(f) => evaluate(f.fit(&ts, DEFAULT_PINV_TOL)),
                    Err(e) => Err(Error::Internal(e.to_string())),
                };
                out.record(prior_kind, repetition, Cell { method, n_t, alpha: *alpha, alpha2: None }, result);
            }
        }
    }
    Ok(out)
}

fn method_order(m: Method) -> usize {
    Method::ALL.iter().position(|x| *x == m).expect("listed")
}

/// Runs every repetition for every prior kind. Repetition `r` draws from
/// stream `(seed, r)`, so results do not depend on `parallelism` or on
/// completion order. Solver failures are recorded per cell.
pub fn run_experiment(cfg: &ExperimentConfig, parallelism: usize) -> Result<ErrorReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let fixed = if cfg.fixed_indices {
        Some(draw_observation_indices(
            cfg.grid_size,
            cfg.obs_count,
            &mut rng::stream(cfg.seed, SHARED_STREAM),
        )?)
    } else {
        None
    };

    let mut report = ErrorReport::default();
    for &kind in &cfg.prior_kinds {
        let prior = build_fe_prior(kind, cfg.grid_size, cfg.prior_scale, cfg.boundary_relaxation)?;
        let outcomes: Vec<Result<RepOutcome>> = pool.install(|| {
            (0..cfg.repetitions)
                .into_par_iter()
                .map(|rep| run_repetition(cfg, kind, &prior, fixed.as_deref(), rep))
                .collect()
        });
        for outcome in outcomes {
            let mut o = outcome?;
            o.rows.sort_by_key(|r| (method_order(r.method), r.n_t));
            o.failures.sort_by_key(|r| (method_order(r.method), r.n_t));
            report.rows.append(&mut o.rows);
            report.failures.append(&mut o.failures);
        }
    }
    Ok(report)
}

/// Statistics over repetitions at one (method, prior, size, grid point).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: Method,
    pub prior_kind: PriorKind,
    pub n_t: usize,
    pub alpha: f64,
    pub alpha2: Option<f64>,
    pub mean: f64,
    /// Sample standard deviation; zero for a single repetition.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

type CellKey = (usize, PriorKind, usize, u64, Option<u64>);

fn cell_key(method: Method, prior: PriorKind, n_t: usize, alpha: f64, alpha2: Option<f64>) -> CellKey {
    (method_order(method), prior, n_t, alpha.to_bits(), alpha2.map(f64::to_bits))
}

/// Aggregates over repetitions. Output is sorted by method, prior, size and
/// grid point, independent of row order.
pub fn aggregate(report: &ErrorReport) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<CellKey, (ResultRow, Vec<f64>)> = BTreeMap::new();
    for row in &report.rows {
        cells
            .entry(cell_key(row.method, row.prior_kind, row.n_t, row.alpha, row.alpha2))
            .or_insert_with(|| (*row, Vec::new()))
            .1
            .push(row.rel_error);
    }
    cells
        .into_values()
        .map(|(first, mut values)| {
            values.sort_by(f64::total_cmp);
            let count = values.len();
            let mean = values.iter().sum::<f64>() / count as f64;
            let std = if count > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                method: first.method,
                prior_kind: first.prior_kind,
                n_t: first.n_t,
                alpha: first.alpha,
                alpha2: first.alpha2,
                mean,
                std,
                min: values[0],
                max: values[count - 1],
                count,
            }
        })
        .collect()
}

/// The grid point with the lowest mean error for each (method, prior, size).
pub fn best_by_cell(aggregates: &[AggregateRow]) -> Vec<AggregateRow> {
    let mut best: BTreeMap<(usize, PriorKind, usize), AggregateRow> = BTreeMap::new();
    for row in aggregates {
        best.entry((method_order(row.method), row.prior_kind, row.n_t))
            .and_modify(|b| {
                if row.mean < b.mean {
                    *b = *row;
                }
            })
            .or_insert(*row);
    }
    best.into_values().collect()
}

/// The long-form error surface over (size, α) for every method.
pub fn sweep_hyperparameters(cfg: &ExperimentConfig, parallelism: usize) -> Result<Vec<AggregateRow>> {
    Ok(aggregate(&run_experiment(cfg, parallelism)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub method: Method,
    pub prior_kind: PriorKind,
    pub n_t: usize,
    pub best_error: f64,
    pub tikhonov_error: f64,
    /// `|best_error - tikhonov_error|`, both at their swept optima.
    pub gap: f64,
}

/// Gaps between each learned map and the Tikhonov baseline, each at its
/// swept-optimal hyperparameters.
pub fn convergence_gaps(aggregates: &[AggregateRow]) -> Vec<ConvergenceRow> {
    let best = best_by_cell(aggregates);
    let tikhonov: BTreeMap<(PriorKind, usize), f64> = best
        .iter()
        .filter(|r| r.method == Method::Tikhonov)
        .map(|r| ((r.prior_kind, r.n_t), r.mean))
        .collect();
    best.iter()
        .filter(|r| r.method != Method::Tikhonov)
        .filter_map(|r| {
            tikhonov.get(&(r.prior_kind, r.n_t)).map(|&t| ConvergenceRow {
                method: r.method,
                prior_kind: r.prior_kind,
                n_t: r.n_t,
                best_error: r.mean,
                tikhonov_error: t,
                gap: (r.mean - t).abs(),
            })
        })
        .collect()
}

pub fn convergence_study(cfg: &ExperimentConfig, parallelism: usize) -> Result<Vec<ConvergenceRow>> {
    if cfg.training_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("convergence study needs strictly increasing training sizes"));
    }
    Ok(convergence_gaps(&aggregate(&run_experiment(cfg, parallelism)?)))
}
