use nalgebra::{DMatrix, DVector};

use crate::error::{ensure, Error, Result};

pub const ORACLE_MAX_POINTS: usize = 200;

pub fn rbf(x: f64, y: f64, length_scale: f64) -> f64 {
    (-(x - y).powi(2) / (2.0 * length_scale * length_scale)).exp()
}

/// Exact 1-D GP posterior with a unit-variance RBF kernel and Gaussian noise.
/// Returns `(means, variances)` at the queries.
pub fn exact_gp_oracle(
    train_x: &[f64],
    train_y: &[f64],
    queries: &[f64],
    length_scale: f64,
    noise_var: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = train_x.len();
    ensure!(n == train_y.len(), "{n} inputs but {} targets", train_y.len());
    ensure!(n <= ORACLE_MAX_POINTS, "exact oracle limited to {ORACLE_MAX_POINTS} points, got {n}");
    ensure!(noise_var > 0.0, "noise variance must be positive");
    ensure!(length_scale > 0.0, "length scale must be positive");
    if n == 0 {
        return Ok((vec![0.0; queries.len()], vec![1.0; queries.len()]));
    }
    let k = DMatrix::from_fn(n, n, |i, j| rbf(train_x[i], train_x[j], length_scale) + if i == j { noise_var } else { 0.0 });
    let chol = k.cholesky().ok_or_else(|| {
        Error::Numerical(format!("kernel matrix not positive definite with noise variance {noise_var}; try a larger value"))
    })?;
    let alpha = chol.solve(&DVector::from_column_slice(train_y));
    let mut means = Vec::with_capacity(queries.len());
    let mut vars = Vec::with_capacity(queries.len());
    for &q in queries {
        let ks = DVector::from_iterator(n, train_x.iter().map(|&x| rbf(q, x, length_scale)));
        means.push(ks.dot(&alpha));
        let v = chol.solve(&ks);
        vars.push((1.0 - ks.dot(&v)).clamp(0.0, 1.0));
    }
    Ok((means, vars))
}
