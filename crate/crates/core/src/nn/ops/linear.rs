use super::linalg::{matmul, matmul_ta, matmul_tb};
use crate::nn::{Graph, NnError, Scalar, Tensor, Var};

impl<F: Scalar> Graph<F> {
    /// Affine map over the last dimension: `y = x W^T + b` with
    /// `W: [D_out, D_in]`, applied to every leading index of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let xshape = self.values[x.0].shape().to_vec();
        let d_in = *xshape.last().ok_or_else(|| {
            NnError::ShapeMismatch("linear requires at least 1-d input".into())
        })?;
        let wshape = self.values[w.0].shape().to_vec();
        let (d_out, wd_in) = match wshape[..] {
            [o, i] => (o, i),
            _ => {
                return Err(NnError::ShapeMismatch(format!(
                    "linear weight must be 2-d, got {:?}",
                    wshape
                )))
            }
        };
        if wd_in != d_in || self.values[b.0].shape() != [d_out] {
            return Err(NnError::ShapeMismatch(format!(
                "linear shapes: x {:?}, w {:?}, b {:?}",
                xshape,
                wshape,
                self.values[b.0].shape()
            )));
        }
        let rows = self.values[x.0].numel() / d_in;
        let mut out = vec![F::zero(); rows * d_out];
        matmul_tb(
            self.values[x.0].data(),
            self.values[w.0].data(),
            rows,
            d_in,
            d_out,
            &mut out,
        );
        let bv = self.values[b.0].data();
        for r in 0..rows {
            for (o, &bb) in out[r * d_out..(r + 1) * d_out].iter_mut().zip(bv) {
                *o += bb;
            }
        }
        let mut oshape = xshape.clone();
        *oshape.last_mut().unwrap() = d_out;
        let value = Tensor::from_vec(&oshape, out)?;

        Ok(self.push(
            value,
            vec![x.0, w.0, b.0],
            Box::new(move |vals, g| {
                let gd = g.data();
                // dX = dY * W
                let mut dx = vec![F::zero(); rows * d_in];
                matmul(gd, vals[w.0].data(), rows, d_out, d_in, &mut dx);
                // dW = dY^T * X
                let mut dw = vec![F::zero(); d_out * d_in];
                matmul_ta(gd, vals[x.0].data(), d_out, rows, d_in, &mut dw);
                let mut db = vec![F::zero(); d_out];
                for r in 0..rows {
                    for (d, &gv) in db.iter_mut().zip(&gd[r * d_out..(r + 1) * d_out]) {
                        *d += gv;
                    }
                }
                vec![
                    (x.0, Tensor::from_vec(&xshape, dx).unwrap()),
                    (w.0, Tensor::from_vec(&[d_out, d_in], dw).unwrap()),
                    (b.0, Tensor::from_vec(&[d_out], db).unwrap()),
                ]
            }),
        ))
    }

    /// Batched matmul: `[B, M, K] x [B, K, N] -> [B, M, N]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let ashape = self.values[a.0].shape().to_vec();
        let bshape = self.values[b.0].shape().to_vec();
        let (ba, m, k) = match ashape[..] {
            [x, y, z] => (x, y, z),
            _ => return Err(NnError::ShapeMismatch(format!("bmm lhs {:?}", ashape))),
        };
        let (bb, k2, n) = match bshape[..] {
            [x, y, z] => (x, y, z),
            _ => return Err(NnError::ShapeMismatch(format!("bmm rhs {:?}", bshape))),
        };
        if ba != bb || k != k2 {
            return Err(NnError::ShapeMismatch(format!(
                "bmm {:?} x {:?}",
                ashape, bshape
            )));
        }
        let av = self.values[a.0].data();
        let bv = self.values[b.0].data();
        let mut out = vec![F::zero(); ba * m * n];
        for s in 0..ba {
            matmul(
                &av[s * m * k..(s + 1) * m * k],
                &bv[s * k * n..(s + 1) * k * n],
                m,
                k,
                n,
                &mut out[s * m * n..(s + 1) * m * n],
            );
        }
        let value = Tensor::from_vec(&[ba, m, n], out)?;

        Ok(self.push(
            value,
            vec![a.0, b.0],
            Box::new(move |vals, g| {
                let av = vals[a.0].data();
                let bv = vals[b.0].data();
                let gd = g.data();
                let mut da = vec![F::zero(); ba * m * k];
                let mut db = vec![F::zero(); ba * k * n];
                for s in 0..ba {
                    let gslab = &gd[s * m * n..(s + 1) * m * n];
                    // dA = dC * B^T; B stored [K, N] is already the
                    // layout matmul_tb expects for its transposed rhs
                    matmul_tb(
                        gslab,
                        &bv[s * k * n..(s + 1) * k * n],
                        m,
                        n,
                        k,
                        &mut da[s * m * k..(s + 1) * m * k],
                    );
                    // dB = A^T * dC
                    matmul_ta(
                        &av[s * m * k..(s + 1) * m * k],
                        gslab,
                        k,
                        m,
                        n,
                        &mut db[s * k * n..(s + 1) * k * n],
                    );
                }
                vec![
                    (a.0, Tensor::from_vec(&[ba, m, k], da).unwrap()),
                    (b.0, Tensor::from_vec(&[ba, k, n], db).unwrap()),
                ]
            }),
        ))
    }

    /// Swap the last two dimensions (contiguous copy).
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var, NnError> {
        let shape = self.values[x.0].shape().to_vec();
        if shape.len() < 2 {
            return Err(NnError::ShapeMismatch(format!(
                "transpose needs >= 2 dims, got {:?}",
                shape
            )));
        }
        let d = shape.len();
        let (m, n) = (shape[d - 2], shape[d - 1]);
        let batch = self.values[x.0].numel() / (m * n);
        let transpose = move |src: &[F]| {
            let mut out = vec![F::zero(); src.len()];
            for s in 0..batch {
                let sl = &src[s * m * n..(s + 1) * m * n];
                let ol = &mut out[s * m * n..(s + 1) * m * n];
                for i in 0..m {
                    for j in 0..n {
                        ol[j * m + i] = sl[i * n + j];
                    }
                }
            }
            out
        };
        let mut oshape = shape.clone();
        oshape[d - 2] = n;
        oshape[d - 1] = m;
        let value = Tensor::from_vec(&oshape, transpose(self.values[x.0].data()))?;

        Ok(self.push(
            value,
            vec![x.0],
            Box::new(move |_, g| {
                // transposing back swaps m and n
                let gd = g.data();
                let mut out = vec![F::zero(); gd.len()];
                for s in 0..batch {
                    let sl = &gd[s * m * n..(s + 1) * m * n];
                    let ol = &mut out[s * m * n..(s + 1) * m * n];
                    for i in 0..n {
                        for j in 0..m {
                            ol[j * n + i] = sl[i * m + j];
                        }
                    }
                }
                vec![(x.0, Tensor::from_vec(&shape, out).unwrap())]
            }),
        ))
    }

    /// Numerically stable softmax over the last dimension.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var, NnError> {
        let shape = self.values[x.0].shape().to_vec();
        let d = *shape.last().ok_or_else(|| {
            NnError::ShapeMismatch("softmax requires at least 1-d input".into())
        })?;
        let rows = self.values[x.0].numel() / d;
        let xv = self.values[x.0].data();
        let mut out = vec![F::zero(); rows * d];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mx).exp();
                sum += *o;
            }
            for o in &mut out[r * d..(r + 1) * d] {
                *o = *o / sum;
            }
        }
        let value = Tensor::from_vec(&shape, out)?;
        let out_idx = self.values.len();

        Ok(self.push(
            value,
            vec![x.0],
            Box::new(move |vals, g| {
                let y = vals[out_idx].data();
                let gd = g.data();
                let mut dx = vec![F::zero(); rows * d];
                for r in 0..rows {
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &gd[r * d..(r + 1) * d];
                    let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for i in 0..d {
                        dx[r * d + i] = yr[i] * (gr[i] - dot);
                    }
                }
                let xshape = vals[x.0].shape().to_vec();
                vec![(x.0, Tensor::from_vec(&xshape, dx).unwrap())]
            }),
        ))
    }
}
