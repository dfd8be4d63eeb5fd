//! Gaussian-process output layer.
//!
//! A frozen random Fourier feature map `φ(h) = sqrt(2/D) · cos(W h + b)`,
//! with `W ~ N(0, 1/ℓ²)` and `b ~ U[0, 2π)`, approximates the RBF kernel
//! `exp(-‖h - h'‖² / 2ℓ²)`. The head output is `βᵀφ(h)`; `β` is trained with
//! the rest of the network. After training, a Laplace-style precision
//!
//! ```text
//! Σ⁻¹ = s·I + Σᵢ wᵢ φᵢ φᵢᵀ
//! ```
//!
//! is accumulated in one pass (`wᵢ = 1` for regression, `p(1-p)` for binary
//! classification) and inverted once. Predictive variance at a query is
//! `φᵀ Σ φ`, which stays small near the training features and grows towards
//! `‖φ‖²/s` away from them.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::diffcore::{
    gemm, seeded_init, Checkpoint, InitScheme, ParamId, ParamStore, RngStream, Tape, Tensor, Var,
};
use crate::error::{ensure, Error, Result};

pub const DEFAULT_FEATURES: usize = 256;
/// Mean-field logit adjustment factor.
pub const MEAN_FIELD_FACTOR: f64 = PI / 8.0;

/// Frozen random Fourier feature projection.
#[derive(Clone, Debug)]
pub struct RffMap {
    /// `[D, m]`, entries `N(0, 1/ℓ²)`.
    pub projection: ParamId,
    /// `[D]`, entries `U[0, 2π)`.
    pub phases: ParamId,
    pub features: usize,
    pub input_dim: usize,
    pub length_scale: f64,
}

impl RffMap {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        features: usize,
        length_scale: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        ensure!(features > 0 && input_dim > 0, "RFF dimensions must be positive");
        ensure!(length_scale > 0.0, "length scale must be positive, got {length_scale}");
        let w = seeded_init(&[features, input_dim], InitScheme::Gaussian { sigma: 1.0 / length_scale }, rng)?;
        let b = seeded_init(&[features], InitScheme::Uniform { lo: 0.0, hi: 2.0 * PI }, rng)?;
        let projection = store.add(format!("{prefix}rff.projection"), w, false);
        let phases = store.add(format!("{prefix}rff.phases"), b, false);
        Ok(Self { projection, phases, features, input_dim, length_scale })
    }

    fn check_width(&self, width: usize) -> Result<()> {
        ensure!(width == self.input_dim, "RFF map expects width {}, got {width}", self.input_dim);
        Ok(())
    }

    /// Differentiable `φ(h)` for `h: [batch, m]`. Gradients reach `h`; the
    /// projection and phases are frozen parameters.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let shape = tape.shape(h);
        ensure!(shape.len() == 2, "RFF map expects [batch, width], got {shape:?}");
        self.check_width(shape[1])?;
        let w = tape.param(store, self.projection);
        let b = tape.param(store, self.phases);
        let z = tape.linear(h, w)?;
        let z = tape.add_bias(z, b)?;
        let c = tape.cos(z);
        Ok(tape.scale(c, (2.0 / self.features as f64).sqrt()))
    }

    /// Plain (untracked) `φ(h)` for `h: [batch, m]`.
    pub fn features(&self, store: &ParamStore, h: &Tensor) -> Result<Tensor> {
        ensure!(h.rank() == 2, "RFF map expects [batch, width], got {:?}", h.shape());
        self.check_width(h.dim(1))?;
        let (n, m, d) = (h.dim(0), self.input_dim, self.features);
        let mut z = vec![0.0; n * d];
        gemm(n, m, d, h.data(), false, store.value(self.projection).data(), true, &mut z, 0.0);
        let b = store.value(self.phases).data();
        let norm = (2.0 / d as f64).sqrt();
        for (i, v) in z.iter_mut().enumerate() {
            *v = norm * (*v + b[i % d]).cos();
        }
        Tensor::new(vec![n, d], z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regression,
    Binary,
}

/// Affine map from head output to logit for the binary task:
/// `logit = scale · (βᵀφ - offset)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogitLink {
    pub offset: f64,
    pub scale: f64,
}

impl Default for LogitLink {
    fn default() -> Self {
        Self { offset: 0.0, scale: 1.0 }
    }
}

impl LogitLink {
    pub fn logit(&self, output: f64) -> f64 {
        self.scale * (output - self.offset)
    }
}

/// Per-row prediction. For [`Task::Binary`], `mean` is the mean-field
/// probability of the positive class; `std` is always `sqrt(φᵀΣφ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub std: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid of a logit with variance `var`, using `logit / sqrt(1 + π/8 · var)`.
pub fn mean_field_probability(logit: f64, var: f64) -> f64 {
    sigmoid(logit / (1.0 + MEAN_FIELD_FACTOR * var).sqrt())
}

#[derive(Clone, Debug)]
pub struct GpHead {
    pub rff: RffMap,
    /// Output weights `[1, D]`.
    pub beta: ParamId,
    pub ridge: f64,
    pub link: LogitLink,
    precision: DMatrix<f64>,
    covariance: Option<DMatrix<f64>>,
}

impl GpHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        features: usize,
        length_scale: f64,
        ridge: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        ensure!(ridge > 0.0, "ridge must be positive, got {ridge}");
        let rff = RffMap::new(store, prefix, input_dim, features, length_scale, rng)?;
        let beta = store.add(format!("{prefix}beta"), Tensor::zeros(&[1, features]), true);
        Ok(Self {
            rff,
            beta,
            ridge,
            link: LogitLink::default(),
            precision: DMatrix::identity(features, features) * ridge,
            covariance: None,
        })
    }

    pub fn features(&self) -> usize {
        self.rff.features
    }

    pub fn is_fitted(&self) -> bool {
        self.covariance.is_some()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> Option<&DMatrix<f64>> {
        self.covariance.as_ref()
    }

    /// Training-time forward: returns `(βᵀφ(h) as [batch, 1], φ(h))`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<(Var, Var)> {
        let phi = self.rff.forward(tape, store, h)?;
        let beta = tape.param(store, self.beta);
        let out = tape.linear(phi, beta)?;
        Ok((out, phi))
    }

    /// `Σ⁻¹ = s·I`, unfitted; `β` is left alone.
    pub fn reset_precision(&mut self) {
        let d = self.features();
        self.precision = DMatrix::identity(d, d) * self.ridge;
        self.covariance = None;
    }

    /// Accumulates `Σ⁻¹ = s·I + Σᵢ wᵢ φᵢφᵢᵀ` from `features: [n, D]` (any
    /// `n`, including an empty set passed as `None`) and inverts it by
    /// Cholesky. With fewer samples than features the inverse is formed
    /// through the `n×n` Woodbury system instead of the `D×D` one.
    pub fn fit_precision(&mut self, features: Option<&Tensor>, weights: &[f64]) -> Result<()> {
        let d = self.features();
        let s = self.ridge;
        let n = features.map_or(0, |f| f.dim(0));
        ensure!(weights.len() == n, "got {} weights for {n} feature rows", weights.len());
        ensure!(weights.iter().all(|&w| w >= 0.0 && w.is_finite()), "precision weights must be nonnegative");

        // Φ̃ = diag(sqrt(w)) Φ, row-major [n, D]
        let scaled: Vec<f64> = match features {
            Some(f) => {
                ensure!(f.rank() == 2 && f.dim(1) == d, "features must be [n, {d}], got {:?}", f.shape());
                f.data().chunks(d).zip(weights).flat_map(|(row, &w)| row.iter().map(move |v| v * w.sqrt())).collect()
            }
            None => Vec::new(),
        };

        let mut gram = vec![0.0; d * d];
        if n > 0 {
            gemm(d, n, d, &scaled, true, &scaled, false, &mut gram, 0.0);
        }
        let mut precision = DMatrix::from_row_slice(d, d, &gram);
        for i in 0..d {
            precision[(i, i)] += s;
        }

        let covariance = if n == 0 {
            DMatrix::identity(d, d) / s
        } else if n < d {
            // Σ = (I - Φ̃ᵀ (sI + Φ̃Φ̃ᵀ)⁻¹ Φ̃) / s
            let mut small = vec![0.0; n * n];
            gemm(n, d, n, &scaled, false, &scaled, true, &mut small, 0.0);
            let mut m = DMatrix::from_row_slice(n, n, &small);
            for i in 0..n {
                m[(i, i)] += s;
            }
            let chol = Cholesky::new(m).ok_or_else(|| factor_error(s))?;
            let phi = DMatrix::from_row_slice(n, d, &scaled);
            let solved = chol.solve(&phi); // [n, D]
            let solved_rows: Vec<f64> = solved.transpose().as_slice().to_vec(); // row-major [n, D]
            let mut corr = vec![0.0; d * d];
            gemm(d, n, d, &scaled, true, &solved_rows, false, &mut corr, 0.0);
            let mut cov = DMatrix::from_row_slice(d, d, &corr) * (-1.0 / s);
            for i in 0..d {
                cov[(i, i)] += 1.0 / s;
            }
            symmetrize(&mut cov);
            cov
        } else {
            let chol = Cholesky::new(precision.clone()).ok_or_else(|| factor_error(s))?;
            let mut cov = chol.inverse();
            symmetrize(&mut cov);
            cov
        };
        if !covariance.iter().all(|v| v.is_finite()) {
            return Err(factor_error(s));
        }
        self.precision = precision;
        self.covariance = Some(covariance);
        Ok(())
    }

    /// `φᵀ Σ φ` per row, clamped at zero.
    pub fn variances(&self, phi: &Tensor) -> Result<Vec<f64>> {
        let cov = self.covariance.as_ref().ok_or_else(|| Error::contract("GP head precision has not been fitted"))?;
        let (n, d) = (phi.dim(0), self.features());
        ensure!(phi.dim(1) == d, "features must have width {d}");
        // nalgebra is column-major; Σ is symmetric so its buffer reads as row-major too
        let mut proj = vec![0.0; n * d];
        gemm(n, d, d, phi.data(), false, cov.as_slice(), false, &mut proj, 0.0);
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let v: f64 = phi.row(r).iter().zip(&proj[r * d..(r + 1) * d]).map(|(a, b)| a * b).sum();
            if v < -1e-10 {
                return Err(Error::Numerical(format!("negative predictive variance {v}")));
            }
            out.push(v.max(0.0));
        }
        Ok(out)
    }

    /// Head outputs `βᵀφ` per row.
    pub fn outputs(&self, store: &ParamStore, phi: &Tensor) -> Vec<f64> {
        let beta = store.value(self.beta).data();
        (0..phi.dim(0)).map(|r| phi.row(r).iter().zip(beta).map(|(a, b)| a * b).sum()).collect()
    }

    /// Predictive mean and standard deviation for `h: [batch, m]`.
    pub fn predict(&self, store: &ParamStore, h: &Tensor, task: Task) -> Result<Vec<Prediction>> {
        ensure!(self.is_fitted(), "GP head precision has not been fitted");
        let phi = self.rff.features(store, h)?;
        self.predict_features(store, &phi, task)
    }

    pub fn predict_features(&self, store: &ParamStore, phi: &Tensor, task: Task) -> Result<Vec<Prediction>> {
        let vars = self.variances(phi)?;
        let outs = self.outputs(store, phi);
        Ok(outs
            .into_iter()
            .zip(vars)
            .map(|(o, v)| {
                let mean = match task {
                    Task::Regression => o,
                    Task::Binary => {
                        let k = self.link.scale;
                        mean_field_probability(self.link.logit(o), k * k * v)
                    }
                };
                Prediction { mean, std: v.sqrt() }
            })
            .collect())
    }

    /// Closed-form ridge solution `β = Σ Φᵀ y` for the features the head was
    /// fitted on (weights 1). With `s = σ²` this is the posterior mean of
    /// Bayesian linear regression on `φ`.
    pub fn ridge_weights(&self, features: &Tensor, targets: &[f64]) -> Result<Tensor> {
        let cov = self.covariance.as_ref().ok_or_else(|| Error::contract("GP head precision has not been fitted"))?;
        ensure!(features.dim(0) == targets.len(), "feature/target count mismatch");
        let d = self.features();
        let phi_t_y: Vec<f64> =
            (0..d).map(|j| (0..targets.len()).map(|i| features.row(i)[j] * targets[i]).sum()).collect();
        let beta = cov * DVector::from_vec(phi_t_y);
        Tensor::new(vec![1, d], beta.as_slice().to_vec())
    }

    pub fn save(&self, ckpt: &mut Checkpoint, prefix: &str) {
        let d = self.features();
        ckpt.push_scalar(format!("{prefix}ridge"), self.ridge);
        ckpt.push_scalar(format!("{prefix}length_scale"), self.rff.length_scale);
        ckpt.push_scalar(format!("{prefix}link.offset"), self.link.offset);
        ckpt.push_scalar(format!("{prefix}link.scale"), self.link.scale);
        ckpt.push_scalar(format!("{prefix}fitted"), if self.is_fitted() { 1.0 } else { 0.0 });
        ckpt.push(
            format!("{prefix}precision"),
            Tensor::new(vec![d, d], self.precision.as_slice().to_vec()).expect("square"),
        );
        if let Some(cov) = &self.covariance {
            ckpt.push(format!("{prefix}covariance"), Tensor::new(vec![d, d], cov.as_slice().to_vec()).expect("square"));
        }
    }

    /// Restores ridge, link and posterior from `ckpt` (parameters are restored
    /// separately through the store).
    pub fn restore(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
        let d = self.features();
        self.ridge = ckpt.scalar(&format!("{prefix}ridge"))?;
        self.rff.length_scale = ckpt.scalar(&format!("{prefix}length_scale"))?;
        self.link = LogitLink {
            offset: ckpt.scalar(&format!("{prefix}link.offset"))?,
            scale: ckpt.scalar(&format!("{prefix}link.scale"))?,
        };
        let square = |name: &str| -> Result<DMatrix<f64>> {
            let t = ckpt.require(name)?;
            ensure!(t.shape() == [d, d], "`{name}` must be {d}x{d}");
            Ok(DMatrix::from_column_slice(d, d, t.data()))
        };
        self.precision = square(&format!("{prefix}precision"))?;
        self.covariance = if ckpt.scalar(&format!("{prefix}fitted"))? != 0.0 {
            Some(square(&format!("{prefix}covariance"))?)
        } else {
            None
        };
        Ok(())
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn factor_error(ridge: f64) -> Error {
    Error::Numerical(format!(
        "posterior precision is not positive definite with ridge {ridge}; increase the ridge"
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(d: usize, m: usize, ridge: f64, seed: u64) -> (ParamStore, GpHead) {
        let mut store = ParamStore::new();
        let h = GpHead::new(&mut store, "gp.", m, d, 1.0, ridge, &mut RngStream::new(seed)).unwrap();
        (store, h)
    }

    fn random_rows(n: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = RngStream::new(seed);
        Tensor::new(vec![n, w], (0..n * w).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_beta_gives_zero_output() {
        let (store, h) = head(16, 3, 1.0, 1);
        let mut tape = Tape::new();
        let x = tape.constant(random_rows(4, 3, 2));
        let (out, _) = h.forward(&mut tape, &store, x).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_beta_selects_feature_and_grad_is_phi() {
        let (mut store, h) = head(8, 3, 1.0, 1);
        let mut e = vec![0.0; 8];
        e[5] = 1.0;
        store.set_value(h.beta, Tensor::new(vec![1, 8], e).unwrap()).unwrap();
        let x = random_rows(1, 3, 4);
        let phi = h.rff.features(&store, &x).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (out, _) = h.forward(&mut tape, &store, xv).unwrap();
        assert!((tape.value(out).item() - phi.data()[5]).abs() < 1e-15);
        let loss = tape.sum(out);
        let g = tape.backward(loss, &store).unwrap();
        assert!(g.get(h.beta).unwrap().max_abs_diff(&phi.reshape(&[1, 8]).unwrap()) < 1e-15);
    }

    #[test]
    fn empty_fit_is_ridge_only() {
        let (_, mut h) = head(6, 2, 0.5, 1);
        h.fit_precision(None, &[]).unwrap();
        let cov = h.covariance().unwrap();
        assert!((cov - DMatrix::identity(6, 6) * 2.0).abs().max() < 1e-15);
    }

    #[test]
    fn single_unit_feature_halves_first_variance() {
        let (_, mut h) = head(4, 2, 1.0, 1);
        let phi = Tensor::new(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        h.fit_precision(Some(&phi), &[1.0]).unwrap();
        let cov = h.covariance().unwrap();
        assert!((cov[(0, 0)] - 0.5).abs() < 1e-12);
        for k in 1..4 {
            assert!((cov[(k, k)] - 1.0).abs() < 1e-12);
        }
        assert!((h.precision()[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn woodbury_and_direct_inverse_agree() {
        let (_, mut small) = head(6, 2, 0.1, 1);
        let (_, mut large) = head(6, 2, 0.1, 1);
        let few = random_rows(3, 6, 7);
        let many = random_rows(9, 6, 8);
        small.fit_precision(Some(&few), &[1.0, 0.5, 2.0]).unwrap();
        let eye = small.covariance().unwrap() * small.precision();
        assert!((eye - DMatrix::identity(6, 6)).abs().max() < 1e-6);
        large.fit_precision(Some(&many), &[1.0; 9]).unwrap();
        let eye = large.covariance().unwrap() * large.precision();
        assert!((eye - DMatrix::identity(6, 6)).abs().max() < 1e-6);
    }

    #[test]
    fn more_data_never_increases_variance() {
        let (store, mut h) = head(8, 2, 0.1, 3);
        let x = random_rows(5, 2, 1);
        let phi = h.rff.features(&store, &x).unwrap();
        let queries = h.rff.features(&store, &random_rows(20, 2, 9)).unwrap();
        h.fit_precision(Some(&phi), &[1.0; 5]).unwrap();
        let before = h.variances(&queries).unwrap();
        let doubled = Tensor::new(vec![10, 8], [phi.data(), phi.data()].concat()).unwrap();
        h.fit_precision(Some(&doubled), &[1.0; 10]).unwrap();
        let after = h.variances(&queries).unwrap();
        for (a, b) in after.iter().zip(&before) {
            assert!(*a <= b + 1e-12);
        }
    }

    #[test]
    fn binary_with_zero_beta_is_one_half() {
        let (store, mut h) = head(8, 2, 1e-3, 3);
        h.fit_precision(None, &[]).unwrap();
        let preds = h.predict(&store, &random_rows(3, 2, 1), Task::Binary).unwrap();
        assert!(preds.iter().all(|p| p.mean == 0.5 && p.std > 0.0));
    }

    #[test]
    fn zero_variance_mean_field_is_plain_sigmoid() {
        assert_eq!(mean_field_probability(1.3, 0.0), sigmoid(1.3));
        assert!(mean_field_probability(1.3, 10.0) < sigmoid(1.3));
    }

    #[test]
    fn predict_requires_fit_and_reset_clears() {
        let (store, mut h) = head(8, 2, 1e-3, 3);
        assert!(h.predict(&store, &random_rows(1, 2, 1), Task::Regression).is_err());
        h.fit_precision(None, &[]).unwrap();
        h.reset_precision();
        assert!(!h.is_fitted());
        assert!((h.precision() - DMatrix::identity(8, 8) * 1e-3).abs().max() == 0.0);
    }

    #[test]
    fn width_mismatch_rejected() {
        let (store, h) = head(8, 3, 1.0, 1);
        assert!(h.rff.features(&store, &random_rows(2, 4, 1)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (store, mut h) = head(5, 2, 0.2, 1);
        let phi = h.rff.features(&store, &random_rows(3, 2, 1)).unwrap();
        h.fit_precision(Some(&phi), &[1.0; 3]).unwrap();
        let mut ck = Checkpoint::new();
        h.save(&mut ck, "gp.");
        let (_, mut other) = head(5, 2, 9.0, 2);
        other.restore(&ck, "gp.").unwrap();
        assert_eq!(other.ridge, 0.2);
        assert_eq!(other.covariance(), h.covariance());
        assert_eq!(other.precision(), h.precision());
    }
}
