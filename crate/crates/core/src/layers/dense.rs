use crate::diffcore::{seeded_init, InitScheme, ParamId, ParamStore, RngStream, Tape, Tensor, Var};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::None => x,
        }
    }
}

/// Fully connected layer, weights `[out, in]`. He-initialised in front of a
/// relu, LeCun otherwise.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub units: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        units: usize,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let scheme = if activation == Activation::Relu { InitScheme::FanIn } else { InitScheme::LeCun };
        let w = seeded_init(&[units, inputs], scheme, rng)?;
        let weight = store.add(format!("{name}.w"), w, true);
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[units]), true);
        Ok(Self { weight, bias, inputs, units, activation })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        dense_forward(tape, store, self.weight, self.bias, x, self.activation)
    }
}

/// `activation(x · Wᵀ + b)`.
pub fn dense_forward(
    tape: &mut Tape,
    store: &ParamStore,
    weight: ParamId,
    bias: ParamId,
    x: Var,
    activation: Activation,
) -> Result<Var> {
    ensure!(tape.shape(x).len() == 2, "dense expects [batch, features], got {:?}", tape.shape(x));
    let w = tape.param(store, weight);
    let b = tape.param(store, bias);
    let y = tape.linear(x, w)?;
    let y = tape.add_bias(y, b)?;
    Ok(activation.apply(tape, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(w: Tensor, b: Tensor, x: Tensor, act: Activation) -> Vec<f64> {
        let mut store = ParamStore::new();
        let wi = store.add("w", w, true);
        let bi = store.add("b", b, true);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = dense_forward(&mut tape, &store, wi, bi, xv, act).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn identity_weights() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![-3.0, 4.5]).unwrap();
        assert_eq!(run(eye, Tensor::zeros(&[2]), x, Activation::None), vec![-3.0, 4.5]);
    }

    #[test]
    fn relu_and_tanh() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(run(eye.clone(), Tensor::zeros(&[2]), x, Activation::Relu), vec![0.0, 2.0]);
        let z = Tensor::zeros(&[1, 2]);
        assert_eq!(run(eye, Tensor::zeros(&[2]), z, Activation::Tanh), vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let d = Dense::new(&mut store, "d", 3, 2, Activation::None, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 4]));
        assert!(d.forward(&mut tape, &store, x).is_err());
    }
}
