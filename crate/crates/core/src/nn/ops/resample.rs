use crate::nn::{Graph, NnError, Scalar, Tensor, Var};

// align-corners=false: output pixel o samples source coordinate
// (o + 0.5) / 2 - 0.5, clamped into the source grid.
fn src_coord(o: usize) -> f64 {
    (o as f64 + 0.5) / 2.0 - 0.5
}

impl<F: Scalar> Graph<F> {
    /// Bilinear upsampling by exactly 2x in each spatial dimension
    /// (align-corners=false convention).
    pub fn bilinear_up2(&mut self, x: Var) -> Result<Var, NnError> {
        let (n, c, h, w) = self.values[x.0].dims4()?;
        let (h2, w2) = (2 * h, 2 * w);

        // precompute 1-d sampling taps, shared by both axes
        let taps = |src_len: usize, dst_len: usize| -> Vec<(usize, usize, f64)> {
            (0..dst_len)
                .map(|o| {
                    let s = src_coord(o).clamp(0.0, (src_len - 1) as f64);
                    let i0 = s.floor() as usize;
                    let i1 = (i0 + 1).min(src_len - 1);
                    (i0, i1, s - i0 as f64)
                })
                .collect()
        };
        let ty = taps(h, h2);
        let tx = taps(w, w2);

        let xv = self.values[x.0].data();
        let mut out = vec![F::zero(); n * c * h2 * w2];
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let v00 = src[y0 * w + x0].to64();
                    let v01 = src[y0 * w + x1].to64();
                    let v10 = src[y1 * w + x0].to64();
                    let v11 = src[y1 * w + x1].to64();
                    let top = v00 * (1.0 - fx) + v01 * fx;
                    let bot = v10 * (1.0 - fx) + v11 * fx;
                    dst[oy * w2 + ox] = F::f(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, h2, w2], out)?;

        Ok(self.push(
            value,
            vec![x.0],
            Box::new(move |_, g| {
                let gd = g.data();
                let mut dx = vec![F::zero(); n * c * h * w];
                for p in 0..n * c {
                    let gsrc = &gd[p * h2 * w2..(p + 1) * h2 * w2];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let gv = gsrc[oy * w2 + ox];
                            dst[y0 * w + x0] += gv * F::f((1.0 - fx) * (1.0 - fy));
                            dst[y0 * w + x1] += gv * F::f(fx * (1.0 - fy));
                            dst[y1 * w + x0] += gv * F::f((1.0 - fx) * fy);
                            dst[y1 * w + x1] += gv * F::f(fx * fy);
                        }
                    }
                }
                vec![(x.0, Tensor::from_vec(&[n, c, h, w], dx).unwrap())]
            }),
        ))
    }
}
