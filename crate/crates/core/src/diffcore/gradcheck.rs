//! Central finite-difference verification of tape gradients.

use super::param::ParamStore;
use super::rng::RngStream;
use super::tape::{Tape, Var};
use crate::error::{ensure, Error, Result};

/// Coordinates probed per parameter tensor when it has more than this many.
pub const MIN_PROBED_COORDS: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

fn eval_loss<F>(forward: &mut F, params: &ParamStore) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, params)?;
    let v = tape.value(loss);
    ensure!(v.len() == 1, "gradient check needs a scalar loss, got {:?}", v.shape());
    Ok(v.item())
}

/// Compares the tape gradient of the scalar built by `forward` against
/// central differences with step `step`, for every trainable parameter in
/// `params`; frozen ones are constants of the objective.
///
/// Probe inputs whose gradient should be checked are registered as
/// trainable parameters by the caller. `forward` must be deterministic
/// (dropout off, batch-norm on running statistics).
pub fn finite_diff_check<F>(
    params: &mut ParamStore,
    step: f64,
    coords: usize,
    rng: &mut RngStream,
    mut forward: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    ensure!(step > 0.0 && step <= 1e-2, "finite-difference step must lie in (0, 1e-2], got {step}");
    let coords = coords.max(MIN_PROBED_COORDS);

    let first = eval_loss(&mut forward, params)?;
    let second = eval_loss(&mut forward, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Contract(format!(
            "forward is stochastic ({first} vs {second}); disable dropout and freeze batch statistics"
        )));
    }

    let mut tape = Tape::new();
    let loss = forward(&mut tape, params)?;
    let grads = tape.backward(loss, params)?;

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = params.ids().filter(|&id| params.get(id).trainable).collect();
    for id in ids {
        let n = params.value(id).len();
        let mut picked: Vec<usize> = (0..n).collect();
        if n > coords {
            rng.shuffle(&mut picked);
            picked.truncate(coords);
            picked.sort_unstable();
        }
        let analytic = grads.get(id).expect("backward covers every parameter").clone();
        let mut worst = 0.0f64;
        for &i in &picked {
            let orig = params.value(id).data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + step;
            let up = eval_loss(&mut forward, params);
            params.get_mut(id).value.data_mut()[i] = orig - step;
            let down = eval_loss(&mut forward, params);
            params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up? - down?) / (2.0 * step);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
        report.params.push(ParamCheck {
            name: params.get(id).name.clone(),
            coords_checked: picked.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{seeded_init, InitScheme, Tensor};

    #[test]
    fn dense_layer_matches_central_differences() {
        let mut rng = RngStream::new(5);
        let mut store = ParamStore::new();
        let w = store.add("w", seeded_init(&[4, 6], InitScheme::FanIn, &mut rng).unwrap(), true);
        let b = store.add("b", seeded_init(&[4], InitScheme::Gaussian { sigma: 0.1 }, &mut rng).unwrap(), true);
        let x = store.add("x", seeded_init(&[3, 6], InitScheme::Gaussian { sigma: 1.0 }, &mut rng).unwrap(), true);
        let report = finite_diff_check(&mut store, 1e-5, 32, &mut rng, |tape, s| {
            let (xv, wv, bv) = (tape.param(s, x), tape.param(s, w), tape.param(s, b));
            let h = tape.linear(xv, wv)?;
            let h = tape.add_bias(h, bv)?;
            let h = tape.tanh(h);
            let h = tape.square(h);
            Ok(tape.sum(h))
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
        assert_eq!(report.params.len(), 3);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_vec(vec![1.0, 2.0]), true);
        let report = finite_diff_check(&mut store, 1e-5, 32, &mut RngStream::new(0), |tape, s| {
            let pv = tape.param(s, p);
            let z = tape.scale(pv, 0.0);
            let z = tape.sum(z);
            Ok(tape.add_scalar(z, 3.0))
        })
        .unwrap();
        assert_eq!(report.max_rel_error(), 0.0);
    }

    #[test]
    fn stochastic_forward_refused() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_vec(vec![1.0]), true);
        let mut noise = RngStream::new(1);
        let res = finite_diff_check(&mut store, 1e-5, 32, &mut RngStream::new(0), |tape, s| {
            let pv = tape.param(s, p);
            let z = tape.add_scalar(pv, noise.uniform());
            Ok(tape.sum(z))
        });
        assert!(matches!(res, Err(Error::Contract(_))));
    }

    #[test]
    fn step_out_of_range_refused() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_vec(vec![1.0]), true);
        let res = finite_diff_check(&mut store, 0.1, 32, &mut RngStream::new(0), |tape, s| {
            let pv = tape.param(s, p);
            Ok(tape.sum(pv))
        });
        assert!(res.is_err());
    }
}
