//! Layer structs: thin bundles of parameter ids plus a forward that
//! records ops on a session graph.

use rand::Rng;

use super::params::BnId;
use super::{init, BnStore, NnError, ParamId, ParamStore, Scalar, Session, Tensor, Var};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let w = store.add(
            format!("{name}.weight"),
            init::he_normal(&[out_ch, in_ch, k, k], fan_in, rng),
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Self {
            w,
            b,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        sess: &mut Session<F>,
        x: Var,
    ) -> Result<Var, NnError> {
        let w = sess.param(store, self.w);
        let b = sess.param(store, self.b);
        sess.graph.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state: BnId,
}

impl BatchNorm2d {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        bns: &mut BnStore<F>,
        name: &str,
        channels: usize,
    ) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[channels], F::one()));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        let state = bns.add(channels);
        Self { gamma, beta, state }
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        bns: &mut BnStore<F>,
        sess: &mut Session<F>,
        x: Var,
        train: bool,
    ) -> Result<Var, NnError> {
        let gamma = sess.param(store, self.gamma);
        let beta = sess.param(store, self.beta);
        sess.graph
            .batchnorm2d(x, gamma, beta, bns.get_mut(self.state), train)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            init::xavier_normal(&[d_out, d_in], d_in, rng),
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Self { w, b }
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        sess: &mut Session<F>,
        x: Var,
    ) -> Result<Var, NnError> {
        let w = sess.param(store, self.w);
        let b = sess.param(store, self.b);
        sess.graph.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[d], F::one()));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[d]));
        Self { gamma, beta }
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        sess: &mut Session<F>,
        x: Var,
    ) -> Result<Var, NnError> {
        let gamma = sess.param(store, self.gamma);
        let beta = sess.param(store, self.beta);
        sess.graph.layernorm(x, gamma, beta, F::f(1e-6))
    }
}

/// Pre-norm transformer block: LN -> multi-head self-attention ->
/// residual -> LN -> MLP(GELU) -> residual. With all projection and
/// MLP weights zero the block is the identity map.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub heads: usize,
    pub width: usize,
}

impl TransformerBlock {
    pub fn new<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        width: usize,
        heads: usize,
        mlp_dim: usize,
    ) -> Result<Self, NnError> {
        if width % heads != 0 {
            return Err(NnError::HeadsDontDivide { width, heads });
        }
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), width),
            q: Linear::new(store, rng, &format!("{name}.q"), width, width),
            k: Linear::new(store, rng, &format!("{name}.k"), width, width),
            v: Linear::new(store, rng, &format!("{name}.v"), width, width),
            proj: Linear::new(store, rng, &format!("{name}.proj"), width, width),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), width),
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), width, mlp_dim),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), mlp_dim, width),
            heads,
            width,
        })
    }

    /// `x` has shape `[B, T, D]`.
    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        sess: &mut Session<F>,
        x: Var,
    ) -> Result<Var, NnError> {
        let shape = sess.graph.value(x).shape().to_vec();
        let (b, t, d) = match shape[..] {
            [b, t, d] => (b, t, d),
            _ => {
                return Err(NnError::ShapeMismatch(format!(
                    "transformer block expects [B, T, D], got {:?}",
                    shape
                )))
            }
        };
        if d != self.width {
            return Err(NnError::ShapeMismatch(format!(
                "token width {d}, block width {}",
                self.width
            )));
        }
        let h = self.heads;
        let dh = d / h;

        let split = |sess: &mut Session<F>, v: Var| -> Result<Var, NnError> {
            // [B, T, D] -> [B*H, T, dh]
            let r = sess.graph.reshape(v, &[b, t, h, dh])?;
            let p = sess.graph.permute(r, &[0, 2, 1, 3])?;
            sess.graph.reshape(p, &[b * h, t, dh])
        };

        let normed = self.ln1.forward(store, sess, x)?;
        let q = self.q.forward(store, sess, normed)?;
        let k = self.k.forward(store, sess, normed)?;
        let v = self.v.forward(store, sess, normed)?;
        let qh = split(sess, q)?;
        let kh = split(sess, k)?;
        let vh = split(sess, v)?;

        let kt = sess.graph.transpose_last2(kh)?;
        let scores = sess.graph.bmm(qh, kt)?;
        let scaled = sess.graph.scale(scores, F::f(1.0 / (dh as f64).sqrt()));
        let att = sess.graph.softmax_lastdim(scaled)?;
        let ctx = sess.graph.bmm(att, vh)?;

        // [B*H, T, dh] -> [B, T, D]
        let r = sess.graph.reshape(ctx, &[b, h, t, dh])?;
        let p = sess.graph.permute(r, &[0, 2, 1, 3])?;
        let merged = sess.graph.reshape(p, &[b, t, d])?;
        let attended = self.proj.forward(store, sess, merged)?;
        let res1 = sess.graph.add(x, attended)?;

        let normed2 = self.ln2.forward(store, sess, res1)?;
        let hmid = self.fc1.forward(store, sess, normed2)?;
        let act = sess.graph.gelu(hmid);
        let out = self.fc2.forward(store, sess, act)?;
        sess.graph.add(res1, out)
    }
}
