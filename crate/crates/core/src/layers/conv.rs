use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{expect_shape, he_uniform, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn_acc, Tensor};

/// 2-D convolution over `N x H x W x C` batches, stride 1, "same" padding.
///
/// Filters are laid out `kh x kw x in_channels x out_channels`, which is
/// the row-major `(kh*kw*in) x out` matrix the im2col product needs. For even kernel
/// sizes the extra padding row/column goes to the bottom/right.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Conv2D<T: Scalar> {
    pub filters: Param<T>,
    pub bias: Param<T>,
    pub frozen: bool,
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    /// Input coordinate for output position `o` and kernel offset `k`, if inside.
    #[inline]
    fn source(o: usize, k: usize, pad: usize, len: usize) -> Option<usize> {
        let i = (o + k).checked_sub(pad)?;
        (i < len).then_some(i)
    }
}

impl<T: Scalar> Conv2D<T> {
    pub fn new<R: Rng + ?Sized>(
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel_h == 0 || kernel_w == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::Config("conv2d dimensions must be positive".into()));
        }
        let shape = [kernel_h, kernel_w, in_channels, out_channels];
        let filters = he_uniform(&shape, kernel_h * kernel_w * in_channels, rng)?;
        Ok(Self {
            filters: Param::new(filters),
            bias: Param::new(Tensor::zeros(&[out_channels])?),
            frozen: false,
        })
    }

    pub fn from_parts(filters: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if filters.rank() != 4 || bias.shape() != [filters.shape()[3]] {
            return Err(Error::Dimension {
                op: "conv2d parameters",
                left: filters.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            filters: Param::new(filters),
            bias: Param::new(bias),
            frozen: false,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.filters.value().shape()[3]
    }

    fn geometry(&self, input: &[usize]) -> Result<Geometry> {
        let f = self.filters.value().shape();
        match input {
            &[n, h, w, c] if c == f[2] => Ok(Geometry {
                n,
                h,
                w,
                cin: c,
                cout: f[3],
                kh: f[0],
                kw: f[1],
                pad_top: (f[0] - 1) / 2,
                pad_left: (f[1] - 1) / 2,
            }),
            _ => Err(Error::Dimension {
                op: "conv2d",
                left: input.to_vec(),
                right: f.to_vec(),
            }),
        }
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let g = self.geometry(input)?;
        Ok(vec![g.n, g.h, g.w, g.cout])
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.geometry(x.shape())?;
        let filt = self.filters.value().data();
        let bias = self.bias.value().data();
        let (pixels, width) = (g.h * g.w, g.col_width());
        let mut out = vec![T::zero(); g.n * pixels * g.cout];
        let mut col = Vec::new();
        for start in (0..g.n).step_by(g.chunk()) {
            let count = g.chunk().min(g.n - start);
            g.im2col(x.data(), start, count, &mut col);
            let rows = count * pixels;
            let dst = &mut out[start * pixels * g.cout..(start * pixels + rows) * g.cout];
            gemm_nn(&col, filt, dst, rows, width, g.cout);
            for row in dst.chunks_mut(g.cout) {
                for (v, &b) in row.iter_mut().zip(bias) {
                    *v += b;
                }
            }
        }
        Ok(Tensor::from_parts(vec![g.n, g.h, g.w, g.cout], out))
    }

    pub(crate) fn backward(&mut self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.geometry(input.shape())?;
        expect_shape("conv2d backward", grad_out, &[g.n, g.h, g.w, g.cout])?;
        let gs = grad_out.data();
        {
            let gb = self.bias.grad_mut();
            for row in gs.chunks(g.cout) {
                for (acc, &v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let (pixels, width) = (g.h * g.w, g.col_width());
        let mut grad_in = vec![T::zero(); input.len()];
        let mut col = Vec::new();
        let mut grad_col = Vec::new();
        let (filt, gf) = self.filters.value_and_grad_mut();
        for start in (0..g.n).step_by(g.chunk()) {
            let count = g.chunk().min(g.n - start);
            let rows = count * pixels;
            let go = &gs[start * pixels * g.cout..(start * pixels + rows) * g.cout];
            g.im2col(input.data(), start, count, &mut col);
            gemm_tn_acc(&col, go, gf, rows, width, g.cout);
            grad_col.resize(rows * width, T::zero());
            gemm_nt(go, filt, &mut grad_col, rows, g.cout, width);
            g.col2im_acc(&grad_col, start, count, &mut grad_in);
        }
        Ok(Tensor::from_parts(input.shape().to_vec(), grad_in))
    }
}

/// Upper bound on im2col buffer entries, to keep large batches in cache-sized pieces.
const COL_BUDGET: usize = 1 << 20;

impl Geometry {
    fn col_width(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Samples per im2col chunk.
    fn chunk(&self) -> usize {
        (COL_BUDGET / (self.h * self.w * self.col_width()).max(1)).max(1)
    }

    /// Fills `col` with one row per output pixel of samples `start..start+count`;
    /// each row holds the zero-padded receptive field in filter order.
    fn im2col<T: Scalar>(&self, xs: &[T], start: usize, count: usize, col: &mut Vec<T>) {
        let width = self.col_width();
        col.clear();
        col.resize(count * self.h * self.w * width, T::zero());
        let mut rows = col.chunks_mut(width);
        for n in start..start + count {
            for oy in 0..self.h {
                for ox in 0..self.w {
                    let row = rows.next().expect("im2col row count");
                    for ky in 0..self.kh {
                        let Some(iy) = Geometry::source(oy, ky, self.pad_top, self.h) else { continue };
                        for kx in 0..self.kw {
                            let Some(ix) = Geometry::source(ox, kx, self.pad_left, self.w) else { continue };
                            let i = ((n * self.h + iy) * self.w + ix) * self.cin;
                            let f = (ky * self.kw + kx) * self.cin;
                            row[f..f + self.cin].copy_from_slice(&xs[i..i + self.cin]);
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters column gradients back onto the input.
    fn col2im_acc<T: Scalar>(&self, col: &[T], start: usize, count: usize, grad: &mut [T]) {
        let width = self.col_width();
        let mut rows = col.chunks(width);
        for n in start..start + count {
            for oy in 0..self.h {
                for ox in 0..self.w {
                    let row = rows.next().expect("col2im row count");
                    for ky in 0..self.kh {
                        let Some(iy) = Geometry::source(oy, ky, self.pad_top, self.h) else { continue };
                        for kx in 0..self.kw {
                            let Some(ix) = Geometry::source(ox, kx, self.pad_left, self.w) else { continue };
                            let i = ((n * self.h + iy) * self.w + ix) * self.cin;
                            let f = (ky * self.kw + kx) * self.cin;
                            for (acc, &v) in grad[i..i + self.cin].iter_mut().zip(&row[f..f + self.cin]) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let filters = Tensor::<f64>::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let conv = Conv2D::from_parts(filters, Tensor::zeros(&[1]).unwrap()).unwrap();
        let x = Tensor::new(vec![1, 3, 2, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(conv.apply(&x).unwrap(), x);
    }

    #[test]
    fn same_padding_keeps_spatial_dims() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2D::<f64>::new(3, 3, 2, 5, &mut rng).unwrap();
        assert_eq!(conv.output_shape(&[4, 28, 28, 2]).unwrap(), vec![4, 28, 28, 5]);
        assert!(conv.output_shape(&[4, 28, 28, 3]).is_err());
        assert!(conv.output_shape(&[4, 28]).is_err());
    }

    /// Direct evaluation of the zero-padded correlation sum at one output.
    #[test]
    fn matches_direct_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2D::<f64>::new(3, 3, 2, 2, &mut rng).unwrap();
        let data: Vec<f64> = (0..2 * 4 * 3 * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Tensor::new(vec![2, 4, 3, 2], data).unwrap();
        let y = conv.apply(&x).unwrap();
        let f = conv.filters.value();
        for n in 0..2 {
            for oy in 0..4 {
                for ox in 0..3 {
                    for co in 0..2 {
                        let mut s = conv.bias.value().data()[co];
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let iy = oy as i64 + ky - 1;
                                let ix = ox as i64 + kx - 1;
                                if iy < 0 || ix < 0 || iy >= 4 || ix >= 3 {
                                    continue;
                                }
                                for ci in 0..2 {
                                    s += x.get(&[n, iy as usize, ix as usize, ci]).unwrap()
                                        * f.get(&[ky as usize, kx as usize, ci, co]).unwrap();
                                }
                            }
                        }
                        assert!((y.get(&[n, oy, ox, co]).unwrap() - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    use rand::SeedableRng;
}
