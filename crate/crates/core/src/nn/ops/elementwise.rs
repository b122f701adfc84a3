use crate::nn::{Graph, NnError, Scalar, Tensor, Var};

fn check_same_shape<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<F: Scalar> Graph<F> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        check_same_shape(&self.values[a.0], &self.values[b.0])?;
        let value = self.values[a.0]
            .zip_map(&self.values[b.0], |x, y| x + y)
            .unwrap();
        Ok(self.push(
            value,
            vec![a.0, b.0],
            Box::new(move |_, g| vec![(a.0, g.clone()), (b.0, g.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        check_same_shape(&self.values[a.0], &self.values[b.0])?;
        let value = self.values[a.0]
            .zip_map(&self.values[b.0], |x, y| x - y)
            .unwrap();
        Ok(self.push(
            value,
            vec![a.0, b.0],
            Box::new(move |_, g| vec![(a.0, g.clone()), (b.0, g.map(|v| -v))]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        check_same_shape(&self.values[a.0], &self.values[b.0])?;
        let value = self.values[a.0]
            .zip_map(&self.values[b.0], |x, y| x * y)
            .unwrap();
        Ok(self.push(
            value,
            vec![a.0, b.0],
            Box::new(move |vals, g| {
                vec![
                    (a.0, g.zip_map(&vals[b.0], |gv, bv| gv * bv).unwrap()),
                    (b.0, g.zip_map(&vals[a.0], |gv, av| gv * av).unwrap()),
                ]
            }),
        ))
    }

    /// Elementwise division `a / b`.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        check_same_shape(&self.values[a.0], &self.values[b.0])?;
        let value = self.values[a.0]
            .zip_map(&self.values[b.0], |x, y| x / y)
            .unwrap();
        Ok(self.push(
            value,
            vec![a.0, b.0],
            Box::new(move |vals, g| {
                let da = g.zip_map(&vals[b.0], |gv, bv| gv / bv).unwrap();
                let mut db = g
                    .zip_map(&vals[a.0], |gv, av| -gv * av)
                    .unwrap();
                for (d, &bv) in db.data_mut().iter_mut().zip(vals[b.0].data()) {
                    *d = *d / (bv * bv);
                }
                vec![(a.0, da), (b.0, db)]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let value = self.values[a.0].map(|x| x * c);
        self.push(
            value,
            vec![a.0],
            Box::new(move |_, g| vec![(a.0, g.map(|v| v * c))]),
        )
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let value = self.values[a.0].map(|x| x + c);
        self.push(
            value,
            vec![a.0],
            Box::new(move |_, g| vec![(a.0, g.clone())]),
        )
    }

    /// ReLU, with the subgradient at exactly 0 defined as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.values[a.0].map(|x| if x > F::zero() { x } else { F::zero() });
        self.push(
            value,
            vec![a.0],
            Box::new(move |vals, g| {
                let d = g
                    .zip_map(&vals[a.0], |gv, x| if x > F::zero() { gv } else { F::zero() })
                    .unwrap();
                vec![(a.0, d)]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let sig = |x: F| F::one() / (F::one() + (-x).exp());
        let value = self.values[a.0].map(sig);
        let out_idx = self.values.len();
        self.push(
            value,
            vec![a.0],
            Box::new(move |vals, g| {
                let d = g
                    .zip_map(&vals[out_idx], |gv, y| gv * y * (F::one() - y))
                    .unwrap();
                vec![(a.0, d)]
            }),
        )
    }

    /// GELU in the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = F::f(0.7978845608028654); // sqrt(2/pi)
        let k = F::f(0.044715);
        let half = F::f(0.5);
        let fwd = move |x: F| half * x * (F::one() + (c * (x + k * x * x * x)).tanh());
        let value = self.values[a.0].map(fwd);
        self.push(
            value,
            vec![a.0],
            Box::new(move |vals, g| {
                let d = g
                    .zip_map(&vals[a.0], |gv, x| {
                        let u = c * (x + k * x * x * x);
                        let t = u.tanh();
                        let sech2 = F::one() - t * t;
                        let du = c * (F::one() + F::f(3.0) * k * x * x);
                        gv * (half * (F::one() + t) + half * x * sech2 * du)
                    })
                    .unwrap();
                vec![(a.0, d)]
            }),
        )
    }

    /// Add `p` (shape = `x.shape()[1..]`) to every batch slice of `x`.
    pub fn add_batched(&mut self, x: Var, p: Var) -> Result<Var, NnError> {
        let xshape = self.values[x.0].shape().to_vec();
        let pshape = self.values[p.0].shape().to_vec();
        if xshape.len() < 2 || xshape[1..] != pshape[..] {
            return Err(NnError::ShapeMismatch(format!(
                "broadcast add {:?} + {:?}",
                xshape, pshape
            )));
        }
        let batch = xshape[0];
        let inner: usize = pshape.iter().product();
        let pv = self.values[p.0].data();
        let mut out = self.values[x.0].data().to_vec();
        for b in 0..batch {
            for (o, &pp) in out[b * inner..(b + 1) * inner].iter_mut().zip(pv) {
                *o += pp;
            }
        }
        let value = Tensor::from_vec(&xshape, out)?;
        Ok(self.push(
            value,
            vec![x.0, p.0],
            Box::new(move |_, g| {
                let gd = g.data();
                let mut dp = vec![F::zero(); inner];
                for b in 0..batch {
                    for (d, &gv) in dp.iter_mut().zip(&gd[b * inner..(b + 1) * inner]) {
                        *d += gv;
                    }
                }
                vec![
                    (x.0, g.clone()),
                    (p.0, Tensor::from_vec(&pshape, dp).unwrap()),
                ]
            }),
        ))
    }

    /// Sum of all elements, producing a 0-d tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let shape = self.values[a.0].shape().to_vec();
        let value = Tensor::scalar(self.values[a.0].sum());
        self.push(
            value,
            vec![a.0],
            Box::new(move |_, g| {
                let gv = g.item();
                vec![(a.0, Tensor::full(&shape, gv))]
            }),
        )
    }

    /// Mean of all elements.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.values[a.0].numel();
        let s = self.sum_all(a);
        self.scale(s, F::f(1.0 / n as f64))
    }

    /// Reduce `[N, C, H, W]` to `[N, C]` by summing the spatial dims.
    pub fn sum_spatial(&mut self, a: Var) -> Result<Var, NnError> {
        let (n, c, h, w) = self.values[a.0].dims4()?;
        let hw = h * w;
        let src = self.values[a.0].data();
        let mut out = vec![F::zero(); n * c];
        for (i, o) in out.iter_mut().enumerate() {
            *o = src[i * hw..(i + 1) * hw].iter().copied().sum();
        }
        let value = Tensor::from_vec(&[n, c], out)?;
        Ok(self.push(
            value,
            vec![a.0],
            Box::new(move |_, g| {
                let mut d = vec![F::zero(); n * c * hw];
                for (i, &gv) in g.data().iter().enumerate() {
                    for v in &mut d[i * hw..(i + 1) * hw] {
                        *v = gv;
                    }
                }
                vec![(a.0, Tensor::from_vec(&[n, c, h, w], d).unwrap())]
            }),
        ))
    }
}
