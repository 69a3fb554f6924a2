//! Seeded random problem instances for tests, certification and demos.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::model::{ForwardOperator, GaussianPrior, NoiseModel, TrainingSet};
use crate::rng::{self, StreamRng};

/// A small dense linear inverse problem with its training set.
#[derive(Debug, Clone)]
pub struct Instance {
    pub fwd: ForwardOperator,
    pub prior: GaussianPrior,
    pub noise: NoiseModel,
    pub ts: TrainingSet,
}

pub fn uniform_matrix(rows: usize, cols: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// `A A^T / dim + shift I` with `A` uniform in `[-1, 1]`.
pub fn random_spd(dim: usize, shift: f64, rng: &mut StreamRng) -> DMatrix<f64> {
    let a = uniform_matrix(dim, dim, rng);
    let mut s = &a * a.transpose() / dim as f64;
    for i in 0..dim {
        s[(i, i)] += shift;
    }
    crate::linalg::symmetrize(&s)
}

/// Random `G` (n x m), random SPD `Γ` and `Λ`, `n_t` prior-like parameters
/// and data `Y = G U (+ noise)`.
pub fn random_instance(seed: u64, m: usize, n: usize, nt: usize, noisy: bool) -> Instance {
    let mut rng = rng::stream(seed, 0);
    let g = uniform_matrix(n, m, &mut rng);
    let gamma = random_spd(m, 0.5, &mut rng);
    let lambda = random_spd(n, 0.2, &mut rng);
    let mean = DVector::from_fn(m, |_, _| rng.gen_range(-0.5..0.5));
    let prior = GaussianPrior::from_covariance(mean, gamma).expect("random SPD covariance");
    let noise = NoiseModel::from_covariance(lambda).expect("random SPD covariance");
    let u = prior.sample_with(nt, &mut rng);
    let mut y = &g * &u;
    if noisy {
        y += uniform_matrix(n, nt, &mut rng) * 0.1;
    }
    Instance {
        fwd: ForwardOperator::linear(g).expect("finite operator"),
        prior,
        noise,
        ts: TrainingSet::new(u, y).expect("consistent shapes"),
    }
}
