use super::{dropout, BatchNorm1D, Conv1DLayer, Mode};
use crate::diffcore::{Checkpoint, Padding, ParamId, ParamStore, RngStream, Tape, Var};
use crate::error::{Error, Result};

/// Residual block:
/// `dropout(relu(maxpool(bn(conv(x)))) + maxpool(proj(x)))`, where `proj` is a
/// strided 1×1 convolution so both paths end at the same shape.
#[derive(Clone, Debug)]
pub struct ResNetBlock {
    pub conv: Conv1DLayer,
    pub norm: BatchNorm1D,
    pub pool: usize,
    pub dropout: f64,
    pub skip: Option<Conv1DLayer>,
}

impl ResNetBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        pool: usize,
        dropout: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let conv = Conv1DLayer::new(store, &format!("{name}.conv"), in_channels, filters, kernel, stride, Padding::Same, rng)?;
        let norm = BatchNorm1D::new(store, &format!("{name}.bn"), filters);
        let skip = Conv1DLayer::new(store, &format!("{name}.skip"), in_channels, filters, 1, stride, Padding::Same, rng)?;
        Ok(Self { conv, norm, pool, dropout, skip: Some(skip) })
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Var> {
        let h = self.conv.forward(tape, store, x)?;
        let h = self.norm.forward(tape, store, h, mode)?;
        let h = tape.max_pool1d(h, self.pool)?;
        let h = tape.relu(h);
        let s = match &self.skip {
            Some(proj) => {
                let s = proj.forward(tape, store, x)?;
                tape.max_pool1d(s, self.pool)?
            }
            None => x,
        };
        if tape.shape(h) != tape.shape(s) {
            return Err(Error::Internal(format!(
                "residual paths disagree: main {:?} vs skip {:?}",
                tape.shape(h),
                tape.shape(s)
            )));
        }
        let y = tape.add(h, s)?;
        dropout(tape, y, self.dropout, mode, rng)
    }

    pub fn weights(&self) -> Vec<ParamId> {
        let mut w = vec![self.conv.weight];
        w.extend(self.skip.as_ref().map(|s| s.weight));
        w
    }

    pub fn save_buffers(&self, ckpt: &mut Checkpoint, prefix: &str) {
        self.norm.save_buffers(ckpt, prefix);
    }

    pub fn restore_buffers(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
        self.norm.restore_buffers(ckpt, prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn block(store: &mut ParamStore) -> ResNetBlock {
        ResNetBlock::new(store, "b0", 1, 16, 3, 2, 2, 0.05, &mut RngStream::new(1)).unwrap()
    }

    #[test]
    fn output_shape_stride_then_pool() {
        let mut store = ParamStore::new();
        let mut b = block(&mut store);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 1, 256], 0.3));
        let y = b.forward(&mut tape, &store, x, Mode::Infer, &mut RngStream::new(0)).unwrap();
        assert_eq!(tape.shape(y), &[2, 16, 64]);
    }

    #[test]
    fn zero_weights_leave_relu_of_shift() {
        let mut store = ParamStore::new();
        let mut b = block(&mut store);
        for id in b.weights() {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        let shift: Vec<f64> = (0..16).map(|i| i as f64 * 0.1 - 0.8).collect();
        store.set_value(b.norm.shift, Tensor::from_vec(shift.clone())).unwrap();
        b.dropout = 0.0;
        let mut tape = Tape::new();
        let mut rng = RngStream::new(0);
        let x = tape.constant(Tensor::new(vec![2, 1, 32], (0..64).map(|i| (i as f64).sin()).collect()).unwrap());
        let y = b.forward(&mut tape, &store, x, Mode::Train, &mut rng).unwrap();
        let out = tape.value(y);
        for (i, v) in out.data().iter().enumerate() {
            let c = (i / 8) % 16;
            assert!((v - shift[c].max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let mut store = ParamStore::new();
        let mut b = block(&mut store);
        let input = Tensor::new(vec![1, 1, 64], (0..64).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap();
        let mut run = |rng_seed| {
            let mut tape = Tape::new();
            let x = tape.constant(input.clone());
            let y = b.forward(&mut tape, &store, x, Mode::Infer, &mut RngStream::new(rng_seed)).unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(1), run(2));
    }
}
