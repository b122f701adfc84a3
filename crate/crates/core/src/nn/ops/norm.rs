use crate::nn::params::BnState;
use crate::nn::{Graph, NnError, Scalar, Tensor, Var};

impl<F: Scalar> Graph<F> {
    /// Batch normalization over `[N, C, H, W]` with per-channel affine
    /// parameters. Train mode normalizes by batch statistics (biased
    /// variance) and updates the running stats in `state`; eval mode
    /// normalizes by the running stats.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BnState<F>,
        train: bool,
    ) -> Result<Var, NnError> {
        let (n, c, h, w) = self.values[x.0].dims4()?;
        if self.values[gamma.0].shape() != [c] || self.values[beta.0].shape() != [c] {
            return Err(NnError::ShapeMismatch(format!(
                "batchnorm affine params must be [{c}]"
            )));
        }
        let eps = state.eps;
        let m = (n * h * w) as f64;
        let hw = h * w;
        let xv = self.values[x.0].data();

        let (mean, var) = if train {
            let mut mean = vec![F::zero(); c];
            let mut var = vec![F::zero(); c];
            for ci in 0..c {
                let mut s = F::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * hw;
                    s += xv[base..base + hw].iter().copied().sum::<F>();
                }
                mean[ci] = s * F::f(1.0 / m);
            }
            for ci in 0..c {
                let mu = mean[ci];
                let mut s = F::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * hw;
                    for &v in &xv[base..base + hw] {
                        let d = v - mu;
                        s += d * d;
                    }
                }
                var[ci] = s * F::f(1.0 / m);
            }
            let mom = state.momentum;
            for ci in 0..c {
                let rm = state.mean.data_mut();
                rm[ci] = (F::one() - mom) * rm[ci] + mom * mean[ci];
                let rv = state.var.data_mut();
                rv[ci] = (F::one() - mom) * rv[ci] + mom * var[ci];
            }
            (mean, var)
        } else {
            (state.mean.data().to_vec(), state.var.data().to_vec())
        };

        let sigma: Vec<F> = var.iter().map(|&v| (v + eps).sqrt()).collect();
        let gv = self.values[gamma.0].data();
        let bv = self.values[beta.0].data();
        let mut out = vec![F::zero(); n * c * hw];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                let (mu, sg, ga, be) = (mean[ci], sigma[ci], gv[ci], bv[ci]);
                for i in 0..hw {
                    out[base + i] = ga * (xv[base + i] - mu) / sg + be;
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, h, w], out)?;

        let mean_c = mean;
        let sigma_c = sigma;
        Ok(self.push(
            value,
            vec![x.0, gamma.0, beta.0],
            Box::new(move |vals, g| {
                let xv = vals[x.0].data();
                let ga = vals[gamma.0].data();
                let gd = g.data();
                let mut dx = vec![F::zero(); n * c * hw];
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                let inv_m = F::f(1.0 / m);
                for ci in 0..c {
                    let (mu, sg) = (mean_c[ci], sigma_c[ci]);
                    let mut sum_g = F::zero();
                    let mut sum_gx = F::zero();
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        for i in 0..hw {
                            let xhat = (xv[base + i] - mu) / sg;
                            sum_g += gd[base + i];
                            sum_gx += gd[base + i] * xhat;
                        }
                    }
                    dgamma[ci] = sum_gx;
                    dbeta[ci] = sum_g;
                    if train {
                        let mg = sum_g * inv_m;
                        let mgx = sum_gx * inv_m;
                        for ni in 0..n {
                            let base = (ni * c + ci) * hw;
                            for i in 0..hw {
                                let xhat = (xv[base + i] - mu) / sg;
                                dx[base + i] = ga[ci] / sg * (gd[base + i] - mg - xhat * mgx);
                            }
                        }
                    } else {
                        for ni in 0..n {
                            let base = (ni * c + ci) * hw;
                            for i in 0..hw {
                                dx[base + i] = ga[ci] / sg * gd[base + i];
                            }
                        }
                    }
                }
                vec![
                    (x.0, Tensor::from_vec(&[n, c, h, w], dx).unwrap()),
                    (gamma.0, Tensor::from_vec(&[c], dgamma).unwrap()),
                    (beta.0, Tensor::from_vec(&[c], dbeta).unwrap()),
                ]
            }),
        ))
    }

    /// Layer normalization over the last dimension.
    pub fn layernorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: F,
    ) -> Result<Var, NnError> {
        let shape = self.values[x.0].shape().to_vec();
        let d = *shape.last().ok_or_else(|| {
            NnError::ShapeMismatch("layernorm requires at least 1-d input".into())
        })?;
        if self.values[gamma.0].shape() != [d] || self.values[beta.0].shape() != [d] {
            return Err(NnError::ShapeMismatch(format!(
                "layernorm affine params must be [{d}]"
            )));
        }
        let rows = self.values[x.0].numel() / d;
        let xv = self.values[x.0].data();
        let gv = self.values[gamma.0].data();
        let bv = self.values[beta.0].data();

        let mut mean = vec![F::zero(); rows];
        let mut sigma = vec![F::zero(); rows];
        let mut out = vec![F::zero(); rows * d];
        let inv_d = F::f(1.0 / d as f64);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() * inv_d;
            let sg = (var + eps).sqrt();
            mean[r] = mu;
            sigma[r] = sg;
            for i in 0..d {
                out[r * d + i] = gv[i] * (row[i] - mu) / sg + bv[i];
            }
        }
        let value = Tensor::from_vec(&shape, out)?;

        Ok(self.push(
            value,
            vec![x.0, gamma.0, beta.0],
            Box::new(move |vals, g| {
                let xv = vals[x.0].data();
                let ga = vals[gamma.0].data();
                let gd = g.data();
                let mut dx = vec![F::zero(); rows * d];
                let mut dgamma = vec![F::zero(); d];
                let mut dbeta = vec![F::zero(); d];
                for r in 0..rows {
                    let (mu, sg) = (mean[r], sigma[r]);
                    let mut mg = F::zero();
                    let mut mgx = F::zero();
                    for i in 0..d {
                        let xhat = (xv[r * d + i] - mu) / sg;
                        let dxhat = gd[r * d + i] * ga[i];
                        dgamma[i] += gd[r * d + i] * xhat;
                        dbeta[i] += gd[r * d + i];
                        mg += dxhat;
                        mgx += dxhat * xhat;
                    }
                    mg = mg * inv_d;
                    mgx = mgx * inv_d;
                    for i in 0..d {
                        let xhat = (xv[r * d + i] - mu) / sg;
                        let dxhat = gd[r * d + i] * ga[i];
                        dx[r * d + i] = (dxhat - mg - xhat * mgx) / sg;
                    }
                }
                let xshape = vals[x.0].shape().to_vec();
                vec![
                    (x.0, Tensor::from_vec(&xshape, dx).unwrap()),
                    (gamma.0, Tensor::from_vec(&[d], dgamma).unwrap()),
                    (beta.0, Tensor::from_vec(&[d], dbeta).unwrap()),
                ]
            }),
        ))
    }
}
