use super::Mode;
use crate::diffcore::{RngStream, Tape, Tensor, Var};
use crate::error::{ensure, Result};

/// Inverted dropout: in training, zeroes each element with probability
/// `rate` and scales survivors by `1 / (1 - rate)`. Identity in inference.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, mode: Mode, rng: &mut RngStream) -> Result<Var> {
    ensure!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1), got {rate}");
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask = (0..n).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_and_inference_are_identity() {
        let mut tape = Tape::new();
        let mut rng = RngStream::new(0);
        let x = tape.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(dropout(&mut tape, x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut tape, x, 0.1, Mode::Infer, &mut rng).unwrap(), x);
    }

    #[test]
    fn kept_fraction_matches_rate() {
        let mut tape = Tape::new();
        let mut rng = RngStream::new(42);
        let x = tape.constant(Tensor::full(&[1_000_000], 1.0));
        let y = dropout(&mut tape, x, 0.05, Mode::Train, &mut rng).unwrap();
        let out = tape.value(y);
        let kept = out.data().iter().filter(|&&v| v != 0.0).count() as f64 / out.len() as f64;
        assert!((kept - 0.95).abs() < 0.002, "kept {kept}");
        assert!(out.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.95).abs() < 1e-15));
    }

    #[test]
    fn rate_one_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0]));
        assert!(dropout(&mut tape, x, 1.0, Mode::Train, &mut RngStream::new(0)).is_err());
    }
}
