use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` at train time,
/// so eval mode is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        let d = Self { rate };
        d.validate()?;
        Ok(d)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.rate)));
        }
        Ok(())
    }

    pub(crate) fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Option<Vec<T>>)> {
        self.validate()?;
        if mode == Mode::Eval || self.rate == 0.0 {
            return Ok((x.clone(), None));
        }
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < self.rate { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_mode_is_identity() {
        let d = Dropout::new(0.4).unwrap();
        let x = Tensor::<f64>::from_vec(vec![1.0, -2.0, 3.0]).unwrap();
        let (y, mask) = d.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
    }

    #[test]
    fn rate_must_be_in_unit_interval() {
        assert!(matches!(Dropout::new(1.0), Err(Error::Config(_))));
        assert!(Dropout::new(-0.1).is_err());
        assert!(Dropout::new(0.0).is_ok());
        let bad = Dropout { rate: 1.5 };
        let x = Tensor::<f64>::from_vec(vec![1.0]).unwrap();
        assert!(bad.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn inverted_scaling_preserves_expectation() {
        for rate in [0.2, 0.3, 0.4] {
            let d = Dropout::new(rate).unwrap();
            let x = Tensor::<f64>::full(&[100, 100], 1.5).unwrap();
            let (y, _) = d.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
            let mean = y.mean();
            assert!((mean - 1.5).abs() / 1.5 < 0.02, "rate {rate}: mean {mean}");
        }
    }
}
