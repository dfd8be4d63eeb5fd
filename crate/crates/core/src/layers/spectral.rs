//! Spectral normalisation by warm-started power iteration.
//!
//! A weight of any rank is viewed as a matrix `[out, rest]`. The singular
//! vector estimates persist between calls, so a single iteration per
//! optimiser step tracks the top singular value as the weight drifts.

use crate::diffcore::{RngStream, Tensor};
use crate::error::{ensure, Result};

pub const DEFAULT_BOUND: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    /// Left singular vector estimate, length `out`.
    pub u: Vec<f64>,
    /// Right singular vector estimate, length `rest`.
    pub v: Vec<f64>,
    pub bound: f64,
    pub iterations: usize,
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

fn matrix_dims(weight: &Tensor) -> (usize, usize) {
    let rows = weight.dim(0);
    (rows, weight.len() / rows)
}

/// `W v` for row-major `W: [rows, cols]`.
fn mat_vec(w: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows).map(|r| w[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// `Wᵀ u`.
fn mat_t_vec(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, a) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += a * u[r];
        }
    }
    out
}

impl SpectralState {
    pub fn new(weight_shape: &[usize], bound: f64, iterations: usize, rng: &mut RngStream) -> Result<Self> {
        ensure!(bound > 0.0, "spectral bound must be positive, got {bound}");
        ensure!(iterations >= 1, "need at least one power iteration");
        let rows = weight_shape[0];
        let cols: usize = weight_shape[1..].iter().product::<usize>().max(1);
        let mut u: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
        let mut v: Vec<f64> = (0..cols).map(|_| rng.normal()).collect();
        normalize(&mut u);
        normalize(&mut v);
        Ok(Self { u, v, bound, iterations })
    }

    /// Runs the configured power iterations and returns `σ̂ = uᵀ W v`.
    pub fn estimate(&mut self, weight: &Tensor) -> Result<f64> {
        let (rows, cols) = matrix_dims(weight);
        ensure!(
            self.u.len() == rows && self.v.len() == cols,
            "spectral state sized {}x{} does not match weight {rows}x{cols}",
            self.u.len(),
            self.v.len()
        );
        let w = weight.data();
        for _ in 0..self.iterations {
            let mut v = mat_t_vec(w, rows, cols, &self.u);
            if normalize(&mut v) == 0.0 {
                return Ok(0.0);
            }
            let mut u = mat_vec(w, rows, cols, &v);
            if normalize(&mut u) == 0.0 {
                return Ok(0.0);
            }
            self.u = u;
            self.v = v;
        }
        let wv = mat_vec(w, rows, cols, &self.v);
        let sigma: f64 = self.u.iter().zip(&wv).map(|(a, b)| a * b).sum();
        Ok(sigma.max(0.0))
    }
}

/// Returns `weight * min(1, bound / σ̂)` and the scale applied. A zero weight
/// is returned unscaled.
pub fn spectral_normalize(weight: &Tensor, state: &mut SpectralState) -> Result<(Tensor, f64)> {
    let sigma = state.estimate(weight)?;
    let scale = if sigma > state.bound { state.bound / sigma } else { 1.0 };
    Ok((weight.map(|w| w * scale), scale))
}

/// Spectral norm of `weight` (viewed as `[out, rest]`) by `iterations` fresh
/// power iterations, independent of any training-time state.
pub fn power_iteration_norm(weight: &Tensor, iterations: usize, seed: u64) -> f64 {
    let mut state = SpectralState::new(weight.shape(), 1.0, iterations.max(1), &mut RngStream::new(seed))
        .expect("valid shape");
    state.estimate(weight).expect("matching state")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_for(w: &Tensor, iterations: usize, bound: f64) -> SpectralState {
        SpectralState::new(w.shape(), bound, iterations, &mut RngStream::new(7)).unwrap()
    }

    #[test]
    fn diagonal_matrix_scaled_to_bound() {
        let w = Tensor::new(vec![2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let mut st = state_for(&w, 20, 1.0);
        let (out, scale) = spectral_normalize(&w, &mut st).unwrap();
        assert!((scale - 1.0 / 3.0).abs() < 1e-3);
        // exact singular values of diag(3,1)/3 are 1 and 1/3
        assert!((out.data()[0] - 1.0).abs() < 1e-3);
        assert!((power_iteration_norm(&out, 100, 1) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn within_bound_is_unchanged() {
        let w = Tensor::new(vec![2, 2], vec![0.5, 0.0, 0.0, 0.2]).unwrap();
        let mut st = state_for(&w, 5, 0.95);
        let (out, scale) = spectral_normalize(&w, &mut st).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(out, w);
    }

    #[test]
    fn rank_one_converges_in_one_step() {
        let a = [1.0, -2.0, 2.0];
        let b = [3.0, 4.0];
        let data = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
        let w = Tensor::new(vec![3, 2], data).unwrap();
        let mut st = state_for(&w, 1, 1.0);
        let sigma = st.estimate(&w).unwrap();
        assert!((sigma - 15.0).abs() < 1e-12, "sigma {sigma}");
        let un: f64 = st.u.iter().map(|x| x * x).sum();
        assert!((un - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_matrix_unscaled() {
        let w = Tensor::zeros(&[3, 4]);
        let mut st = state_for(&w, 3, 0.95);
        let (out, scale) = spectral_normalize(&w, &mut st).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(out, w);
    }

    #[test]
    fn conv_weight_viewed_as_matrix() {
        let mut rng = RngStream::new(3);
        let w = crate::diffcore::seeded_init(&[8, 4, 3], crate::diffcore::InitScheme::FanIn, &mut rng).unwrap();
        let mut st = state_for(&w, 50, 0.5);
        let (out, _) = spectral_normalize(&w, &mut st).unwrap();
        assert!(power_iteration_norm(&out, 500, 9) <= 0.5 * (1.0 + 1e-3));
    }
}
