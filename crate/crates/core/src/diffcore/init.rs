use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    Gaussian { sigma: f64 },
    Uniform { lo: f64, hi: f64 },
    /// He initialisation: gaussian with σ = sqrt(2 / fan_in), where fan_in is
    /// the product of every dimension after the first.
    FanIn,
    /// LeCun initialisation, σ = sqrt(1 / fan_in); keeps tanh layers out of
    /// saturation at the start.
    LeCun,
}

pub fn seeded_init(shape: &[usize], scheme: InitScheme, rng: &mut RngStream) -> Result<Tensor> {
    ensure!(!shape.is_empty() && shape.iter().all(|&d| d > 0), "init shape {shape:?} must be nonempty");
    let n: usize = shape.iter().product();
    let data = match scheme {
        InitScheme::Gaussian { sigma } => {
            ensure!(sigma > 0.0, "gaussian init needs sigma > 0, got {sigma}");
            (0..n).map(|_| sigma * rng.normal()).collect()
        }
        InitScheme::Uniform { lo, hi } => {
            ensure!(lo < hi, "uniform init needs lo < hi, got [{lo}, {hi})");
            (0..n).map(|_| rng.uniform_range(lo, hi)).collect()
        }
        InitScheme::FanIn | InitScheme::LeCun => {
            let fan_in: usize = if shape.len() > 1 { shape[1..].iter().product() } else { shape[0] };
            let gain = if scheme == InitScheme::FanIn { 2.0 } else { 1.0 };
            let sigma = (gain / fan_in as f64).sqrt();
            (0..n).map(|_| sigma * rng.normal()).collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn deterministic_per_seed() {
        let a = seeded_init(&[4, 5], InitScheme::FanIn, &mut RngStream::new(1)).unwrap();
        let b = seeded_init(&[4, 5], InitScheme::FanIn, &mut RngStream::new(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_phase_mean_near_pi() {
        let t = seeded_init(&[100_000], InitScheme::Uniform { lo: 0.0, hi: 2.0 * PI }, &mut RngStream::new(2))
            .unwrap();
        let mean = t.sum() / t.len() as f64;
        assert!((mean - PI).abs() < 0.05, "mean {mean}");
        assert!(t.data().iter().all(|&x| (0.0..2.0 * PI).contains(&x)));
    }

    #[test]
    fn unit_gaussian_variance() {
        let t = seeded_init(&[100_000], InitScheme::Gaussian { sigma: 1.0 }, &mut RngStream::new(3)).unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn fan_in_scale() {
        let t = seeded_init(&[200, 50], InitScheme::FanIn, &mut RngStream::new(4)).unwrap();
        let var = t.data().iter().map(|x| x * x).sum::<f64>() / t.len() as f64;
        assert!((var - 2.0 / 50.0).abs() < 0.004, "var {var}");
    }

    #[test]
    fn rejects_bad_schemes() {
        let mut rng = RngStream::new(0);
        assert!(seeded_init(&[3], InitScheme::Gaussian { sigma: 0.0 }, &mut rng).is_err());
        assert!(seeded_init(&[3], InitScheme::Uniform { lo: 1.0, hi: 1.0 }, &mut rng).is_err());
        assert!(seeded_init(&[], InitScheme::FanIn, &mut rng).is_err());
    }
}
