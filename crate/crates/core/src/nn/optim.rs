use serde::{Deserialize, Serialize};

use super::{NnError, Scalar, Tensor};

/// AdamW hyperparameters (decoupled weight decay).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW optimizer state: per-parameter first/second moments and the
/// shared step counter.
#[derive(Debug, Clone)]
pub struct AdamW<F: Scalar> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(config: AdamWConfig, params: &[Tensor<F>]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One update over all parameters. Decoupled decay:
    /// `p -= lr * wd * p` before the moment-based step.
    pub fn step(
        &mut self,
        params: &mut [Tensor<F>],
        grads: &[Tensor<F>],
        lr: f64,
    ) -> Result<(), NnError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(NnError::ShapeMismatch(format!(
                "optimizer state for {} params, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::f(self.config.beta1);
        let b2 = F::f(self.config.beta2);
        let eps = F::f(self.config.eps);
        let lr_f = F::f(lr);
        let decay = F::f(lr * self.config.weight_decay);
        let bc1 = F::f(1.0 - self.config.beta1.powi(t));
        let bc2 = F::f(1.0 - self.config.beta2.powi(t));

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "param {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *pv -= decay * *pv;
                *mv = b1 * *mv + (F::one() - b1) * gv;
                *vv = b2 * *vv + (F::one() - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr_f * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Linear decay: `lr(e) = initial_lr * (1 - e / total_epochs)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> Result<f64, NnError> {
        if epoch > self.total_epochs {
            return Err(NnError::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        Ok(self.initial_lr * (1.0 - epoch as f64 / self.total_epochs as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_no_decay_leaves_params() {
        let mut p = vec![Tensor::<f64>::from_vec(&[2], vec![1.0, -2.0]).unwrap()];
        let g = vec![Tensor::<f64>::zeros(&[2])];
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // at t=1, m_hat/sqrt(v_hat) = g/|g| for a scalar, so the update
        // magnitude is ~lr (up to eps)
        let mut p = vec![Tensor::<f64>::from_vec(&[1], vec![0.5]).unwrap()];
        let g = vec![Tensor::<f64>::from_vec(&[1], vec![3.0]).unwrap()];
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &g, 0.01).unwrap();
        assert!((p[0].data()[0] - (0.5 - 0.01)).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_shrinks_params() {
        let mut p = vec![Tensor::<f64>::from_vec(&[1], vec![2.0]).unwrap()];
        let g = vec![Tensor::<f64>::zeros(&[1])];
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &g, 0.5).unwrap();
        assert!((p[0].data()[0] - 2.0 * (1.0 - 0.5 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn linear_schedule_endpoints() {
        let s = LrSchedule {
            initial_lr: 0.001,
            total_epochs: 250,
        };
        assert_eq!(s.lr(0).unwrap(), 0.001);
        assert_eq!(s.lr(250).unwrap(), 0.0);
        assert!((s.lr(125).unwrap() - 0.0005).abs() < 1e-12);
        assert!(s.lr(251).is_err());
    }
}
