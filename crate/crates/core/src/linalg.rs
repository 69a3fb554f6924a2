//! Dense linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used wherever a pseudo-inverse appears.
pub const DEFAULT_PINV_TOL: f64 = 1e-12;

/// Moore–Penrose pseudo-inverse via SVD.
///
/// Singular values below `tol * sigma_max * max(rows, cols)` are treated as
/// zero. The zero matrix maps to the (transposed) zero matrix.
pub fn pseudo_inverse(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric {
            location: "pseudo-inverse input".into(),
        });
    }
    let svd = verified_svd(m).ok_or_else(|| Error::Internal("SVD failed to converge".into()))?;
    let cutoff = tol * svd.singular_values.max() * rows.max(cols) as f64;
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let mut out = DMatrix::zeros(cols, rows);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            // out += v_k * u_k^T / s
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out.ger(1.0 / s, &vk, &uk, 1.0);
        }
    }
    Ok(out)
}

/// Convergence thresholds tried in turn, as multiples of machine epsilon.
const SVD_EPS_LADDER: [f64; 4] = [5.0, 50.0, 1e3, 1e5];

/// SVD of `m` whose factors reproduce `m`.
///
/// The iteration can stall on rank-deficient inputs at tight thresholds and
/// return factors that do not recompose, so each threshold is checked on `m`
/// and on its transpose.
fn verified_svd(m: &DMatrix<f64>) -> Option<SVD<f64, Dyn, Dyn>> {
    let (rows, cols) = m.shape();
    let bound = 1e-10 * m.amax().max(f64::MIN_POSITIVE) * rows.max(cols) as f64;
    let recomposes = |svd: &SVD<f64, Dyn, Dyn>, target: &DMatrix<f64>| {
        match (svd.u.as_ref(), svd.v_t.as_ref()) {
            (Some(u), Some(v_t)) => {
                (u * DMatrix::from_diagonal(&svd.singular_values) * v_t - target).amax() <= bound
            }
            _ => false,
        }
    };
    for factor in SVD_EPS_LADDER {
        let eps = factor * f64::EPSILON;
        if let Some(svd) = m.clone().try_svd(true, true, eps, 0) {
            if recomposes(&svd, m) {
                return Some(svd);
            }
        }
        let t = m.transpose();
        if let Some(svd) = t.clone().try_svd(true, true, eps, 0) {
            if recomposes(&svd, &t) {
                return Some(SVD {
                    u: svd.v_t.map(|v| v.transpose()),
                    v_t: svd.u.map(|u| u.transpose()),
                    singular_values: svd.singular_values,
                });
            }
        }
    }
    None
}

/// Numerical rank with the same cutoff rule as [`pseudo_inverse`].
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return 0;
    }
    let s = match verified_svd(m) {
        Some(svd) => svd.singular_values,
        None => m.clone().singular_values(),
    };
    let cutoff = tol * s.max() * rows.max(cols) as f64;
    s.iter().filter(|&&v| v > cutoff && v > 0.0).count()
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn spd_factor(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() {
        return Err(Error::invalid(format!("{what} must be square, got {:?}", m.shape())));
    }
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::ConstructionFailure(format!("{what} is not positive definite")))
}

/// Inverse of an SPD matrix through its Cholesky factor, symmetrised.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = spd_factor(m, what)?.inverse();
    Ok(symmetrize(&inv))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root `C` with `C * C = m`, from the eigendecomposition.
pub fn symmetric_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&l| l <= -1e-10 * scale || !l.is_finite()) {
        return Err(Error::ConstructionFailure(format!(
            "{what} has a negative eigenvalue"
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// Symmetry defect `max|m - m^T| / max|m|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).amax() / scale
}

/// `‖a - b‖ / ‖b‖` in the Frobenius norm, falling back to the absolute
/// difference when `b` vanishes.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = (a - b).norm();
    let s = b.norm();
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

pub fn rel_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let d = (a - b).norm();
    let s = b.norm();
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

/// Checks every entry is finite, naming `location` otherwise.
pub fn ensure_finite<'a>(values: impl IntoIterator<Item = &'a f64>, location: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            location: location.into(),
        })
    }
}
