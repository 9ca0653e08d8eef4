use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{log_sum_exp, Tensor};

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearchConfig {
    pub lower: f64,
    pub upper: f64,
    /// Bracket width for each 1-D search and the per-cycle improvement
    /// threshold on the summed log-loss.
    pub tolerance: f64,
    pub max_cycles: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self { lower: 0.0, upper: 10.0, tolerance: 1e-6, max_cycles: 50 }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower >= 0.0 && self.lower < self.upper && self.upper.is_finite()) {
            return Err(Error::Config(format!(
                "line search bounds must satisfy 0 <= lower < upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        if !(self.tolerance > 0.0) || self.max_cycles == 0 {
            return Err(Error::Config("line search needs a positive tolerance and at least one cycle".into()));
        }
        Ok(())
    }
}

/// The objective `rho -> -sum_i sum_k y_ik log softmax(f_i + rho * s_i)_k`
/// over fixed `f`, `s` and `y`, held in `f64`.
pub struct RhoObjective {
    f: Vec<f64>,
    s: Vec<f64>,
    y: Vec<f64>,
    k: usize,
}

impl RhoObjective {
    pub fn new<T: Scalar>(f_prev: &Tensor<T>, s_out: &Tensor<T>, labels: &Tensor<T>) -> Result<Self> {
        let (_, k) = f_prev.expect_matrix("line search")?;
        for (other, op) in [(s_out, "line search stage output"), (labels, "line search labels")] {
            if other.shape() != f_prev.shape() {
                return Err(Error::Dimension { op, left: f_prev.shape().to_vec(), right: other.shape().to_vec() });
            }
        }
        let widen = |t: &Tensor<T>| t.data().iter().map(|v| v.widen()).collect::<Vec<f64>>();
        Ok(Self { f: widen(f_prev), s: widen(s_out), y: widen(labels), k })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn value(&self, rho: &[f64]) -> f64 {
        let k = self.k;
        let mut z = vec![0.0; k];
        let mut total = 0.0;
        for ((f, s), y) in self.f.chunks(k).zip(self.s.chunks(k)).zip(self.y.chunks(k)) {
            for j in 0..k {
                z[j] = f[j] + rho[j] * s[j];
            }
            let lse = log_sum_exp(&z);
            for j in 0..k {
                if y[j] != 0.0 {
                    total += y[j] * (lse - z[j]);
                }
            }
        }
        total
    }

    /// `d/d rho_k = sum_i (p_ik - y_ik) s_ik` with `p` from the shifted logits.
    pub fn gradient(&self, rho: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut z = vec![0.0; k];
        let mut g = vec![0.0; k];
        for ((f, s), y) in self.f.chunks(k).zip(self.s.chunks(k)).zip(self.y.chunks(k)) {
            for j in 0..k {
                z[j] = f[j] + rho[j] * s[j];
            }
            let lse = log_sum_exp(&z);
            for j in 0..k {
                g[j] += ((z[j] - lse).exp() - y[j]) * s[j];
            }
        }
        g
    }

    fn checked(&self, rho: &[f64]) -> Result<f64> {
        let v = self.value(rho);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("non-finite log-loss {v} at rho = {rho:?}")))
        }
    }
}

/// Golden-section minimization of `g` on `[a, b]` until the bracket is
/// narrower than `tol`.
fn golden(mut g: impl FnMut(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut gc = g(c)?;
    let mut gd = g(d)?;
    while b - a > tol {
        if gc <= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - INV_PHI * (b - a);
            gc = g(c)?;
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + INV_PHI * (b - a);
            gd = g(d)?;
        }
    }
    // The bracket ends are also candidates so that boundary optima are exact.
    let mut best = if gc <= gd { (c, gc) } else { (d, gd) };
    for x in [a, b] {
        let v = g(x)?;
        if v < best.1 {
            best = (x, v);
        }
    }
    Ok(best)
}

/// Per-class multipliers minimizing the log-loss of `f_prev + rho * s_out`
/// over the box `[lower, upper]^K`.
///
/// Coordinate-wise golden-section sweeps start at `rho = 1`; after each
/// sweep a golden-section step along the sweep's net displacement speeds up
/// progress in curved valleys. Sweeps stop when one improves the summed
/// log-loss by less than the tolerance. The result is never worse than
/// `rho = 0` or `rho = 1` (when inside the box).
pub fn line_search<T: Scalar>(
    f_prev: &Tensor<T>,
    s_out: &Tensor<T>,
    labels: &Tensor<T>,
    cfg: &LineSearchConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let obj = RhoObjective::new(f_prev, s_out, labels)?;
    let k = obj.num_classes();
    if obj.s.iter().all(|&v| v == 0.0) {
        return Ok(vec![1.0; k]);
    }
    let (lo, hi) = (cfg.lower, cfg.upper);
    let mut rho = vec![1.0f64.clamp(lo, hi); k];
    let mut current = obj.checked(&rho)?;

    for _ in 0..cfg.max_cycles {
        let start = rho.clone();
        let before = current;
        for j in 0..k {
            let mut trial = rho.clone();
            let (x, v) = golden(
                |r| {
                    trial[j] = r;
                    obj.checked(&trial)
                },
                lo,
                hi,
                cfg.tolerance,
            )?;
            if v < current {
                rho[j] = x;
                current = v;
            }
        }

        let dir: Vec<f64> = rho.iter().zip(&start).map(|(a, b)| a - b).collect();
        let t_max = dir
            .iter()
            .zip(&rho)
            .filter(|(d, _)| d.abs() > 0.0)
            .map(|(&d, &r)| if d > 0.0 { (hi - r) / d } else { (lo - r) / d })
            .fold(f64::INFINITY, f64::min);
        if t_max.is_finite() && t_max > 0.0 {
            let at = |t: f64| -> Vec<f64> {
                rho.iter().zip(&dir).map(|(r, d)| (r + t * d).clamp(lo, hi)).collect()
            };
            let scale = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            let (t, v) = golden(|t| obj.checked(&at(t)), 0.0, t_max, cfg.tolerance / scale)?;
            if v < current {
                rho = at(t);
                current = v;
            }
        }

        if before - current < cfg.tolerance {
            break;
        }
    }

    for anchor in [0.0, 1.0] {
        if (lo..=hi).contains(&anchor) {
            let candidate = vec![anchor; k];
            let v = obj.checked(&candidate)?;
            if v < current {
                rho = candidate;
                current = v;
            }
        }
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{numeric_gradient, random_tensor, relative_error};

    fn onehot(rows: &[usize], k: usize) -> Tensor {
        let mut data = vec![0.0; rows.len() * k];
        for (i, &c) in rows.iter().enumerate() {
            data[i * k + c] = 1.0;
        }
        Tensor::new(vec![rows.len(), k], data).unwrap()
    }

    #[test]
    fn zero_stage_output_returns_one() {
        let f = random_tensor(&[4, 3], 1);
        let s = Tensor::zeros(&[4, 3]).unwrap();
        let y = onehot(&[0, 1, 2, 0], 3);
        assert_eq!(line_search(&f, &s, &y, &LineSearchConfig::default()).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn monotone_objective_hits_upper_bound() {
        let f = Tensor::zeros(&[1, 2]).unwrap();
        let s = Tensor::from_rows(&[&[1.0, -1.0]]).unwrap();
        let y = onehot(&[0], 2);
        let rho = line_search(&f, &s, &y, &LineSearchConfig::default()).unwrap();
        assert!(rho.iter().all(|&r| (r - 10.0).abs() < 1e-6), "{rho:?}");
        // Grid check of monotonicity in rho1 + rho2.
        let obj = RhoObjective::new(&f, &s, &y).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let r = i as f64 * 0.1;
            let v = obj.value(&[r, r]);
            assert!(v < prev);
            assert!((v - (1.0 + (-2.0 * r).exp()).ln()).abs() < 1e-12);
            prev = v;
        }
    }

    /// Brute-force minimum over the box: a 0.01 grid, then a 0.001 grid
    /// around the coarse winner.
    fn grid_minimum(obj: &RhoObjective) -> (f64, f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=1000 {
            for j in 0..=1000 {
                let (a, b) = (i as f64 * 0.01, j as f64 * 0.01);
                let v = obj.value(&[a, b]);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        let (ca, cb) = (best.1, best.2);
        for i in -20..=20 {
            for j in -20..=20 {
                let a = (ca + i as f64 * 0.001).clamp(0.0, 10.0);
                let b = (cb + j as f64 * 0.001).clamp(0.0, 10.0);
                let v = obj.value(&[a, b]);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        best
    }

    #[test]
    fn opposing_labels_interior_optimum() {
        // Each class sees one instance pulling its multiplier up and one,
        // with a weaker stage output, pulling it down.
        let f = Tensor::zeros(&[4, 2]).unwrap();
        let s = Tensor::from_rows(&[&[2.0, 0.0], &[1.0, 0.0], &[0.0, 2.0], &[0.0, 1.0]]).unwrap();
        let y = onehot(&[0, 1, 1, 0], 2);
        let rho = line_search(&f, &s, &y, &LineSearchConfig::default()).unwrap();
        let obj = RhoObjective::new(&f, &s, &y).unwrap();
        let (v, a, b) = grid_minimum(&obj);
        assert!(a > 0.05 && a < 9.95 && b > 0.05 && b < 9.95, "optimum not interior: {a} {b}");
        assert!((rho[0] - a).abs() < 1e-2 && (rho[1] - b).abs() < 1e-2, "{rho:?} vs ({a}, {b})");
        assert!(obj.value(&rho) <= v + 1e-9);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let f = random_tensor(&[6, 3], 2);
        let s = random_tensor(&[6, 3], 3);
        let y = onehot(&[0, 1, 2, 2, 1, 0], 3);
        let obj = RhoObjective::new(&f, &s, &y).unwrap();
        let rho = [0.7, 2.5, 1.3];
        let g = obj.gradient(&rho);
        let n = numeric_gradient(|r| obj.value(r), &rho);
        for (a, b) in g.iter().zip(&n) {
            assert!(relative_error(*a, *b) < 1e-6);
        }
    }

    #[test]
    fn never_worse_than_anchors() {
        for seed in 0..20 {
            let f = random_tensor(&[10, 4], 100 + seed).scale(3.0);
            let s = random_tensor(&[10, 4], 200 + seed).scale(2.0);
            let y = onehot(&[0, 1, 2, 3, 0, 1, 2, 3, 0, 1], 4);
            let obj = RhoObjective::new(&f, &s, &y).unwrap();
            let rho = line_search(&f, &s, &y, &LineSearchConfig::default()).unwrap();
            let v = obj.value(&rho);
            assert!(v <= obj.value(&[0.0; 4]).min(obj.value(&[1.0; 4])) + 1e-6);
            assert!(rho.iter().all(|r| (0.0..=10.0).contains(r)));
        }
    }

    #[test]
    fn invalid_bounds_rejected() {
        let cfg = LineSearchConfig { lower: 2.0, upper: 1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = LineSearchConfig { lower: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
