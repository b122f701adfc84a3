use crate::nn::{Graph, NnError, Scalar, Tensor, Var};

impl<F: Scalar> Graph<F> {
    /// View with a new shape (element count must match).
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let old = self.values[x.0].shape().to_vec();
        let value = self.values[x.0].clone().reshaped(shape)?;
        Ok(self.push(
            value,
            vec![x.0],
            Box::new(move |_, g| {
                vec![(x.0, g.clone().reshaped(&old).unwrap())]
            }),
        ))
    }

    /// Permute dimensions (contiguous copy). `axes` must be a
    /// permutation of `0..rank`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, NnError> {
        let shape = self.values[x.0].shape().to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(NnError::ShapeMismatch(format!(
                "bad permutation {:?} for rank {rank}",
                axes
            )));
        }
        let axes = axes.to_vec();
        let value = permute_copy(&self.values[x.0], &axes)?;
        // inverse permutation for the gradient
        let mut inv = vec![0usize; rank];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        Ok(self.push(
            value,
            vec![x.0],
            Box::new(move |_, g| vec![(x.0, permute_copy(g, &inv).unwrap())]),
        ))
    }

    /// Concatenate `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var, NnError> {
        if xs.is_empty() {
            return Err(NnError::ShapeMismatch("concat of zero tensors".into()));
        }
        let (n, _, h, w) = self.values[xs[0].0].dims4()?;
        let mut chans = Vec::with_capacity(xs.len());
        for &x in xs {
            let (xn, xc, xh, xw) = self.values[x.0].dims4()?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(NnError::ShapeMismatch(format!(
                    "concat operand {:?} incompatible with [{n}, _, {h}, {w}]",
                    self.values[x.0].shape()
                )));
            }
            chans.push(xc);
        }
        let c_total: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = vec![F::zero(); n * c_total * hw];
        for ni in 0..n {
            let mut c_off = 0;
            for (&x, &xc) in xs.iter().zip(&chans) {
                let src = self.values[x.0].data();
                let src_slab = &src[ni * xc * hw..(ni + 1) * xc * hw];
                out[(ni * c_total + c_off) * hw..(ni * c_total + c_off + xc) * hw]
                    .copy_from_slice(src_slab);
                c_off += xc;
            }
        }
        let value = Tensor::from_vec(&[n, c_total, h, w], out)?;
        let parent_ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        let chans2 = chans.clone();
        let parents = parent_ids.clone();
        Ok(self.push(
            value,
            parent_ids,
            Box::new(move |_, g| {
                let gd = g.data();
                let mut outs: Vec<Vec<F>> = chans2.iter().map(|&c| vec![F::zero(); n * c * hw]).collect();
                for ni in 0..n {
                    let mut c_off = 0;
                    for (slab, &xc) in outs.iter_mut().zip(&chans2) {
                        slab[ni * xc * hw..(ni + 1) * xc * hw].copy_from_slice(
                            &gd[(ni * c_total + c_off) * hw..(ni * c_total + c_off + xc) * hw],
                        );
                        c_off += xc;
                    }
                }
                parents
                    .iter()
                    .zip(outs)
                    .zip(&chans2)
                    .map(|((&p, o), &c)| (p, Tensor::from_vec(&[n, c, h, w], o).unwrap()))
                    .collect()
            }),
        ))
    }

    /// Select a subset of channels of a `[N, C, H, W]` tensor, in the
    /// given order. Gradients route back to the selected slices only.
    pub fn select_channels(&mut self, x: Var, idx: &[usize]) -> Result<Var, NnError> {
        let (n, c, h, w) = self.values[x.0].dims4()?;
        for &i in idx {
            if i >= c {
                return Err(NnError::IndexOutOfRange {
                    index: i,
                    channels: c,
                });
            }
        }
        let hw = h * w;
        let k = idx.len();
        let src = self.values[x.0].data();
        let mut out = vec![F::zero(); n * k * hw];
        for ni in 0..n {
            for (j, &i) in idx.iter().enumerate() {
                out[(ni * k + j) * hw..(ni * k + j + 1) * hw]
                    .copy_from_slice(&src[(ni * c + i) * hw..(ni * c + i + 1) * hw]);
            }
        }
        let value = Tensor::from_vec(&[n, k, h, w], out)?;
        let idx = idx.to_vec();
        Ok(self.push(
            value,
            vec![x.0],
            Box::new(move |_, g| {
                let gd = g.data();
                let mut dx = vec![F::zero(); n * c * hw];
                for ni in 0..n {
                    for (j, &i) in idx.iter().enumerate() {
                        let dst = &mut dx[(ni * c + i) * hw..(ni * c + i + 1) * hw];
                        for (d, &gv) in dst.iter_mut().zip(&gd[(ni * k + j) * hw..(ni * k + j + 1) * hw]) {
                            *d += gv;
                        }
                    }
                }
                vec![(x.0, Tensor::from_vec(&[n, c, h, w], dx).unwrap())]
            }),
        ))
    }
}

fn permute_copy<F: Scalar>(t: &Tensor<F>, axes: &[usize]) -> Result<Tensor<F>, NnError> {
    let shape = t.shape();
    let rank = shape.len();
    let oshape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let src = t.data();
    let mut out = vec![F::zero(); t.numel()];
    let mut coord = vec![0usize; rank];
    for o in out.iter_mut() {
        let mut off = 0;
        for (c, s) in coord.iter().zip(&strides) {
            off += c * s;
        }
        *o = src[off];
        for d in (0..rank).rev() {
            coord[d] += 1;
            if coord[d] < oshape[d] {
                break;
            }
            coord[d] = 0;
        }
    }
    Tensor::from_vec(&oshape, out)
}
