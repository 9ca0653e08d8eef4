use serde::{Deserialize, Serialize};

use super::expect_shape;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Non-overlapping max pooling (stride equals window). Trailing rows or
/// columns that do not fill a window are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxPool2D {
    pub pool_h: usize,
    pub pool_w: usize,
}

impl MaxPool2D {
    pub fn new(pool_h: usize, pool_w: usize) -> Result<Self> {
        if pool_h == 0 || pool_w == 0 {
            return Err(Error::Config("pool size must be positive".into()));
        }
        Ok(Self { pool_h, pool_w })
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            &[n, h, w, c] if h >= self.pool_h && w >= self.pool_w => {
                Ok(vec![n, h / self.pool_h, w / self.pool_w, c])
            }
            _ => Err(Error::Dimension {
                op: "maxpool2d",
                left: input.to_vec(),
                right: vec![self.pool_h, self.pool_w],
            }),
        }
    }

    /// Returns the pooled tensor and, per output element, the flat input
    /// index that won (first maximum in row-major window order).
    pub(crate) fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let out_shape = self.output_shape(x.shape())?;
        let (h, w, c) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        let (n, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
        let xs = x.data();
        let mut out = Vec::with_capacity(n * oh * ow * c);
        let mut argmax = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best_i = ((b * h + oy * self.pool_h) * w + ox * self.pool_w) * c + ch;
                        let mut best = xs[best_i];
                        for dy in 0..self.pool_h {
                            for dx in 0..self.pool_w {
                                let i = ((b * h + oy * self.pool_h + dy) * w + ox * self.pool_w + dx) * c + ch;
                                if xs[i] > best {
                                    best = xs[i];
                                    best_i = i;
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_i);
                    }
                }
            }
        }
        Ok((Tensor::from_parts(out_shape, out), argmax))
    }

    pub(crate) fn backward<T: Scalar>(
        &self,
        grad_out: &Tensor<T>,
        argmax: &[usize],
        input_shape: &[usize],
    ) -> Result<Tensor<T>> {
        expect_shape("maxpool2d backward", grad_out, &self.output_shape(input_shape)?)?;
        let mut grad_in = vec![T::zero(); input_shape.iter().product()];
        for (&i, &g) in argmax.iter().zip(grad_out.data()) {
            grad_in[i] += g;
        }
        Tensor::new(input_shape.to_vec(), grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_picks_max() {
        let pool = MaxPool2D::new(2, 2).unwrap();
        let x = Tensor::<f64>::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = pool.apply(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    /// Every window of a random image checked against an exhaustive max.
    #[test]
    fn exhaustive_window_oracle() {
        let pool = MaxPool2D::new(2, 2).unwrap();
        let data: Vec<f64> = (0..2 * 7 * 7 * 3).map(|i| ((i * 7919) % 101) as f64).collect();
        let x = Tensor::new(vec![2, 7, 7, 3], data).unwrap();
        let (y, _) = pool.apply(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3, 3]);
        for b in 0..2 {
            for oy in 0..3 {
                for ox in 0..3 {
                    for c in 0..3 {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(x.get(&[b, 2 * oy + dy, 2 * ox + dx, c]).unwrap());
                            }
                        }
                        assert_eq!(y.get(&[b, oy, ox, c]).unwrap(), m);
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_routes_to_winner() {
        let pool = MaxPool2D::new(2, 2).unwrap();
        let x = Tensor::<f64>::new(vec![1, 2, 2, 1], vec![1.0, 5.0, 3.0, 4.0]).unwrap();
        let (_, arg) = pool.apply(&x).unwrap();
        let g = Tensor::new(vec![1, 1, 1, 1], vec![2.5]).unwrap();
        let gi = pool.backward(&g, &arg, x.shape()).unwrap();
        assert_eq!(gi.data(), &[0.0, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn too_small_input_is_rejected() {
        let pool = MaxPool2D::new(2, 2).unwrap();
        assert!(pool.output_shape(&[1, 1, 4, 1]).is_err());
        assert!(MaxPool2D::new(0, 2).is_err());
    }
}
