use super::Mode;
use crate::diffcore::{Checkpoint, NormStats, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.99;

/// Batch normalisation over axis 1 of `[batch, channels, ...]`.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`,
/// with the unbiased batch variance.
#[derive(Clone, Debug)]
pub struct BatchNorm1D {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    name: String,
}

impl BatchNorm1D {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let scale = store.add(format!("{name}.scale"), Tensor::full(&[channels], 1.0), true);
        let shift = store.add(format!("{name}.shift"), Tensor::zeros(&[channels]), true);
        Self {
            scale,
            shift,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            name: name.to_string(),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let g = tape.param(store, self.scale);
        let b = tape.param(store, self.shift);
        match mode {
            Mode::Train => {
                let shape = tape.shape(x);
                let n = (shape[0] * shape[2..].iter().product::<usize>()) as f64;
                let (y, stats) = tape.batch_norm(x, g, b, NormStats::Batch, self.eps)?;
                let (mean, var) = stats.expect("batch statistics");
                let m = self.momentum;
                for c in 0..mean.len() {
                    self.running_mean[c] = m * self.running_mean[c] + (1.0 - m) * mean[c];
                    let unbiased = var[c] * n / (n - 1.0);
                    self.running_var[c] = m * self.running_var[c] + (1.0 - m) * unbiased;
                }
                Ok(y)
            }
            Mode::Infer => {
                let stats = NormStats::Running { mean: &self.running_mean, var: &self.running_var };
                Ok(tape.batch_norm(x, g, b, stats, self.eps)?.0)
            }
        }
    }

    pub fn save_buffers(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.push(format!("{prefix}{}.running_mean", self.name), Tensor::from_vec(self.running_mean.clone()));
        ckpt.push(format!("{prefix}{}.running_var", self.name), Tensor::from_vec(self.running_var.clone()));
    }

    pub fn restore_buffers(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
        let mean = ckpt.require(&format!("{prefix}{}.running_mean", self.name))?;
        let var = ckpt.require(&format!("{prefix}{}.running_var", self.name))?;
        crate::error::ensure!(
            mean.len() == self.channels() && var.len() == self.channels(),
            "running statistics for {} have the wrong length",
            self.name
        );
        self.running_mean = mean.data().to_vec();
        self.running_var = var.data().to_vec();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::RngStream;
    use crate::error::Error;

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = RngStream::new(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| 3.0 + 2.0 * rng.normal()).collect()).unwrap()
    }

    #[test]
    fn train_mode_zero_mean_per_channel() {
        let mut store = ParamStore::new();
        let mut bn = BatchNorm1D::new(&mut store, "bn", 3);
        let mut tape = Tape::new();
        let x = tape.constant(random_input(&[4, 3, 5], 1));
        let y = bn.forward(&mut tape, &store, x, Mode::Train).unwrap();
        let out = tape.value(y);
        for c in 0..3 {
            let vals: Vec<f64> =
                (0..4).flat_map(|b| out.data()[(b * 3 + c) * 5..(b * 3 + c + 1) * 5].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
        assert!(bn.running_mean.iter().all(|&m| m != 0.0));
    }

    #[test]
    fn infer_mode_with_identity_stats() {
        let mut store = ParamStore::new();
        let mut bn = BatchNorm1D::new(&mut store, "bn", 2);
        let input = random_input(&[3, 2, 4], 2);
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = bn.forward(&mut tape, &store, x, Mode::Infer).unwrap();
        assert!(tape.value(y).max_abs_diff(&input) < 1e-4 * 10.0);
    }

    #[test]
    fn constant_channel_maps_to_shift() {
        let mut store = ParamStore::new();
        let mut bn = BatchNorm1D::new(&mut store, "bn", 1);
        store.set_value(bn.shift, Tensor::from_vec(vec![0.7])).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[4, 1, 6], 2.5));
        let y = bn.forward(&mut tape, &store, x, Mode::Train).unwrap();
        // variance 0, so x̂ = 0 / sqrt(eps) = 0 and the output is the shift
        assert!(tape.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn single_sample_batch_rejected_in_training() {
        let mut store = ParamStore::new();
        let mut bn = BatchNorm1D::new(&mut store, "bn", 1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 6]));
        assert!(matches!(bn.forward(&mut tape, &store, x, Mode::Train), Err(Error::Contract(_))));
    }
}
