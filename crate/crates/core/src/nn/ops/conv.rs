use rayon::prelude::*;

use super::linalg::{matmul, matmul_ta, matmul_tb};
use crate::nn::{Graph, NnError, Scalar, Tensor, Var};

pub fn conv_out_dim(dim: usize, k: usize, stride: usize, pad: usize) -> usize {
    (dim + 2 * pad - k) / stride + 1
}

fn im2col<F: Scalar>(
    x: &[F],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    col: &mut [F],
) {
    let ho = conv_out_dim(h, k, stride, pad);
    let wo = conv_out_dim(w, k, stride, pad);
    let mut idx = 0;
    for ci in 0..c_in {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        col[idx] = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize]
                        } else {
                            F::zero()
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

fn col2im<F: Scalar>(
    col: &[F],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    x: &mut [F],
) {
    let ho = conv_out_dim(h, k, stride, pad);
    let wo = conv_out_dim(w, k, stride, pad);
    let mut idx = 0;
    for ci in 0..c_in {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += col[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

impl<F: Scalar> Graph<F> {
    /// 2-d cross-correlation over `[N, C_in, H, W]` with kernel
    /// `[C_out, C_in, k, k]` and per-channel bias. "Same" spatial size
    /// at stride 1 when `pad = k/2`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NnError> {
        let (n, c_in, h, wd) = self.values[x.0].dims4()?;
        let wshape = self.values[w.0].shape().to_vec();
        let (c_out, wc_in, k) = match wshape[..] {
            [co, ci, k1, k2] if k1 == k2 => (co, ci, k1),
            _ => {
                return Err(NnError::ShapeMismatch(format!(
                    "conv kernel must be [C_out, C_in, k, k], got {:?}",
                    wshape
                )))
            }
        };
        if wc_in != c_in {
            return Err(NnError::ShapeMismatch(format!(
                "input has {c_in} channels, kernel expects {wc_in}"
            )));
        }
        if self.values[b.0].shape() != [c_out] {
            return Err(NnError::ShapeMismatch(format!(
                "bias shape {:?}, expected [{c_out}]",
                self.values[b.0].shape()
            )));
        }
        let ho = conv_out_dim(h, k, stride, pad);
        let wo = conv_out_dim(wd, k, stride, pad);
        let ckk = c_in * k * k;
        let spatial = ho * wo;

        let xv = self.values[x.0].data();
        let wv = self.values[w.0].data();
        let bv = self.values[b.0].data();

        let per_sample: Vec<Vec<F>> = (0..n)
            .into_par_iter()
            .map(|s| {
                let mut col = vec![F::zero(); ckk * spatial];
                im2col(
                    &xv[s * c_in * h * wd..(s + 1) * c_in * h * wd],
                    c_in,
                    h,
                    wd,
                    k,
                    stride,
                    pad,
                    &mut col,
                );
                let mut out = vec![F::zero(); c_out * spatial];
                matmul(wv, &col, c_out, ckk, spatial, &mut out);
                for co in 0..c_out {
                    let bias = bv[co];
                    for v in &mut out[co * spatial..(co + 1) * spatial] {
                        *v += bias;
                    }
                }
                out
            })
            .collect();
        let value = Tensor::from_vec(&[n, c_out, ho, wo], per_sample.concat())?;

        Ok(self.push(
            value,
            vec![x.0, w.0, b.0],
            Box::new(move |vals, g| {
                let xv = vals[x.0].data();
                let wv = vals[w.0].data();
                let gv = g.data();

                let mut db = vec![F::zero(); c_out];
                for s in 0..n {
                    for co in 0..c_out {
                        let base = (s * c_out + co) * spatial;
                        db[co] += gv[base..base + spatial].iter().copied().sum();
                    }
                }

                // per-sample dW partials and dX, reduced in fixed order
                let parts: Vec<(Vec<F>, Vec<F>)> = (0..n)
                    .into_par_iter()
                    .map(|s| {
                        let mut col = vec![F::zero(); ckk * spatial];
                        im2col(
                            &xv[s * c_in * h * wd..(s + 1) * c_in * h * wd],
                            c_in,
                            h,
                            wd,
                            k,
                            stride,
                            pad,
                            &mut col,
                        );
                        let gout = &gv[s * c_out * spatial..(s + 1) * c_out * spatial];
                        let mut dw = vec![F::zero(); c_out * ckk];
                        matmul_tb(gout, &col, c_out, spatial, ckk, &mut dw);
                        let mut dcol = vec![F::zero(); ckk * spatial];
                        matmul_ta(wv, gout, ckk, c_out, spatial, &mut dcol);
                        let mut dx = vec![F::zero(); c_in * h * wd];
                        col2im(&dcol, c_in, h, wd, k, stride, pad, &mut dx);
                        (dw, dx)
                    })
                    .collect();

                let mut dw = vec![F::zero(); c_out * ckk];
                let mut dx = Vec::with_capacity(n * c_in * h * wd);
                for (dw_s, dx_s) in parts {
                    for (a, b) in dw.iter_mut().zip(&dw_s) {
                        *a += *b;
                    }
                    dx.extend_from_slice(&dx_s);
                }

                vec![
                    (x.0, Tensor::from_vec(&[n, c_in, h, wd], dx).unwrap()),
                    (
                        w.0,
                        Tensor::from_vec(&[c_out, c_in, k, k], dw).unwrap(),
                    ),
                    (b.0, Tensor::from_vec(&[c_out], db).unwrap()),
                ]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_through() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap());
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::full(&[1, 2, 3, 3], 7.0));
        let w = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let b = g.constant(Tensor::from_vec(&[1], vec![0.25]).unwrap());
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.25));
        assert_eq!(g.value(y).shape(), &[1, 1, 3, 3]);
    }

    #[test]
    fn same_padding_preserves_size_stride1() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3, 8, 8]));
        let w = g.constant(Tensor::zeros(&[4, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[4]));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 4, 8, 8]);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let w = g.constant(Tensor::zeros(&[2, 5, 3, 3]));
        let b = g.constant(Tensor::zeros(&[2]));
        assert!(g.conv2d(x, w, b, 1, 1).is_err());
    }
}
