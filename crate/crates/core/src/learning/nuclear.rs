//! Nuclear-norm machinery: singular spectra and singular-value soft
//! thresholding.

use nalgebra::{DMatrix, Dyn, SVD};

/// Iteration cap for the SVD; matrices with overflowing entries may never
/// converge otherwise.
const SVD_MAX_ITERATIONS: usize = 10_000;

/// `None` for non-finite input or when the SVD does not converge.
fn svd(m: &DMatrix<f64>, vectors: bool) -> Option<SVD<f64, Dyn, Dyn>> {
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    m.clone().try_svd(vectors, vectors, f64::EPSILON, SVD_MAX_ITERATIONS)
}

/// Singular values in descending order; all NaN if the SVD fails.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let Some(svd) = svd(m, false) else {
        return vec![f64::NAN; m.nrows().min(m.ncols())];
    };
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().sum()
}

/// Proximal operator of `tau * ||.||_*`: shrinks every singular value by
/// `tau` and clips at zero. Returns a NaN matrix if the SVD fails.
pub fn prox_nuclear(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    assert!(tau >= 0.0, "threshold must be non-negative");
    if tau == 0.0 || m.is_empty() {
        return m.clone();
    }
    let Some(svd) = svd(m, true) else {
        return DMatrix::from_element(m.nrows(), m.ncols(), f64::NAN);
    };
    // Differences below SVD round-off count as zero, so that `tau` equal to
    // a singular value computed elsewhere still removes it.
    let smax = svd.singular_values.max();
    let floor = f64::EPSILON * smax * m.nrows().max(m.ncols()) as f64;
    let shrunk: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|&s| if s - tau > floor { s - tau } else { 0.0 })
        .collect();
    if shrunk.iter().all(|&s| s == 0.0) {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, &s) in shrunk.iter().enumerate() {
        if s > 0.0 {
            out += s * u.column(i) * v_t.row(i);
        }
    }
    out
}
