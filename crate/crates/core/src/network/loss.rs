//! Losses and classification metrics over `N x K` raw outputs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{log_sum_exp, softmax_in_place, Tensor};

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `(1 / (N K)) * sum((out - target)^2)`, accumulated in `f64`.
pub fn mean_squared_error<T: Scalar>(out: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    same_shape("mean_squared_error", out, target)?;
    let total: f64 = out
        .data()
        .iter()
        .zip(target.data())
        .map(|(&o, &t)| {
            let d = o.widen() - t.widen();
            d * d
        })
        .sum();
    Ok(total / out.len() as f64)
}

/// Gradient of [`mean_squared_error`] with respect to `out`.
pub fn mean_squared_error_grad<T: Scalar>(out: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mean_squared_error_grad", out, target)?;
    let scale = T::lit(2.0 / out.len() as f64);
    out.sub(target).map(|d| d.scale(scale))
}

/// Summed cross-entropy `-sum_i sum_k y_ik log softmax(raw_i)_k`, accumulated in `f64`.
pub fn cross_entropy_sum<T: Scalar>(raw: &Tensor<T>, labels: &Tensor<T>) -> Result<f64> {
    same_shape("cross_entropy", raw, labels)?;
    let (_, k) = raw.expect_matrix("cross_entropy")?;
    let mut total = 0.0;
    let mut row64 = vec![0.0; k];
    for (row, y) in raw.data().chunks(k).zip(labels.data().chunks(k)) {
        for (dst, &v) in row64.iter_mut().zip(row) {
            *dst = v.widen();
        }
        let lse = log_sum_exp(&row64);
        for (&f, &yk) in row64.iter().zip(y) {
            if yk != T::zero() {
                total += yk.widen() * (lse - f);
            }
        }
    }
    Ok(total)
}

/// Mean cross-entropy over rows.
pub fn cross_entropy<T: Scalar>(raw: &Tensor<T>, labels: &Tensor<T>) -> Result<f64> {
    Ok(cross_entropy_sum(raw, labels)? / raw.rows() as f64)
}

/// Gradient of [`cross_entropy`] with respect to `raw`: `(softmax(raw) - y) / N`.
pub fn cross_entropy_grad<T: Scalar>(raw: &Tensor<T>, labels: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("cross_entropy_grad", raw, labels)?;
    let (n, k) = raw.expect_matrix("cross_entropy_grad")?;
    let inv_n = T::one() / T::lit(n as f64);
    let mut data = raw.data().to_vec();
    for (row, y) in data.chunks_mut(k).zip(labels.data().chunks(k)) {
        softmax_in_place(row);
        for (p, &yk) in row.iter_mut().zip(y) {
            *p = (*p - yk) * inv_n;
        }
    }
    Tensor::new(raw.shape().to_vec(), data)
}

/// Fraction of rows whose argmax matches the one-hot label.
pub fn accuracy<T: Scalar>(raw: &Tensor<T>, labels: &Tensor<T>) -> Result<f64> {
    same_shape("accuracy", raw, labels)?;
    let hits = raw
        .argmax_rows()
        .iter()
        .zip(labels.argmax_rows())
        .filter(|(a, b)| *a == b)
        .count();
    Ok(hits as f64 / raw.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{numeric_gradient, relative_error};

    #[test]
    fn uniform_prediction_costs_ln_k() {
        let raw = Tensor::<f64>::zeros(&[3, 4]).unwrap();
        let y = Tensor::from_rows(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 1.0]]).unwrap();
        assert!((cross_entropy(&raw, &y).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ce_grad_matches_finite_differences() {
        let raw = Tensor::<f64>::from_rows(&[&[0.3, -1.2, 2.0], &[1.0, 0.5, -0.5]]).unwrap();
        let y = Tensor::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]).unwrap();
        let g = cross_entropy_grad(&raw, &y).unwrap();
        let n = numeric_gradient(
            |p| cross_entropy(&Tensor::new(vec![2, 3], p.to_vec()).unwrap(), &y).unwrap(),
            raw.data(),
        );
        for (&a, &b) in g.data().iter().zip(&n) {
            assert!(relative_error(a, b) < 1e-6);
        }
    }

    #[test]
    fn mse_and_grad() {
        let out = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let t = Tensor::from_rows(&[&[1.0, 0.0], &[3.0, 5.0]]).unwrap();
        assert_eq!(mean_squared_error(&out, &t).unwrap(), 5.0 / 4.0);
        assert_eq!(mean_squared_error_grad(&out, &t).unwrap().data(), &[0.0, 1.0, 0.0, -0.5]);
        assert!(mean_squared_error(&out, &Tensor::zeros(&[2, 3]).unwrap()).is_err());
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let raw = Tensor::<f64>::from_rows(&[&[0.9, 0.1], &[0.2, 0.8], &[0.6, 0.4]]).unwrap();
        let y = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]).unwrap();
        assert!((accuracy(&raw, &y).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }
}
