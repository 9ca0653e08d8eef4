//! Central finite-difference gradient checks.
//!
//! These helpers never call a backward pass to compute the numeric side;
//! they only perturb inputs and parameters and re-run forward passes, so
//! they serve as an independent oracle for the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{Layer, Mode};
use crate::tensor::Tensor;

/// Step used for central differences.
pub const STEP: f64 = 1e-5;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Location of the worst entry, e.g. `"input[3]"` or `"param0[5]"`.
    pub worst: String,
    pub checked: usize,
}

impl GradCheck {
    fn new() -> Self {
        Self { max_rel_error: 0.0, worst: String::new(), checked: 0 }
    }

    fn record(&mut self, analytic: f64, numeric: f64, label: impl FnOnce() -> String) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = err;
            self.worst = label();
        }
    }

    pub fn merge(mut self, other: GradCheck) -> GradCheck {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central difference of `f` with respect to every coordinate of `point`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, point: &[f64]) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let up = f(&x);
            x[i] = orig - STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Random tensor with entries uniform in `[-1, 1)`.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("positive shape")
}

/// Checks input and parameter gradients of a single layer.
///
/// The scalar objective is `sum(forward(x) * G)` for a fixed random `G`.
/// Every forward pass reuses the same RNG seed, so dropout masks are fixed.
pub fn check_layer(layer: Layer<f64>, x: &Tensor, mode: Mode, seed: u64) -> Result<GradCheck> {
    let mut analytic_layer = layer.clone();
    let (y, cache) = analytic_layer.forward(x, mode, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let weights = random_tensor(y.shape(), seed ^ 0x5eed);
    let grad_in = analytic_layer.backward(&weights, &cache)?;

    let objective = |l: &Layer<f64>, input: &Tensor| -> f64 {
        let mut l = l.clone();
        let (y, _) = l
            .forward(input, mode, &mut ChaCha8Rng::seed_from_u64(seed))
            .expect("forward succeeded once");
        y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };

    let mut report = GradCheck::new();
    let numeric = numeric_gradient(
        |p| objective(&layer, &Tensor::new(x.shape().to_vec(), p.to_vec()).unwrap()),
        x.data(),
    );
    for (i, (&a, &n)) in grad_in.data().iter().zip(&numeric).enumerate() {
        report.record(a, n, || format!("input[{i}]"));
    }

    let analytic_params: Vec<Vec<f64>> = analytic_layer
        .params()
        .iter()
        .map(|p| p.grad().to_vec())
        .collect();
    let param_values: Vec<Vec<f64>> = layer.params().iter().map(|p| p.value().data().to_vec()).collect();
    for (pi, values) in param_values.iter().enumerate() {
        let numeric = numeric_gradient(
            |p| {
                let mut l = layer.clone();
                l.params_mut()[pi].0.value_mut().data_mut().copy_from_slice(p);
                objective(&l, x)
            },
            values,
        );
        for (i, (&a, &n)) in analytic_params[pi].iter().zip(&numeric).enumerate() {
            report.record(a, n, || format!("param{pi}[{i}]"));
        }
    }
    Ok(report)
}
