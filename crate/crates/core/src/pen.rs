//! Preprocessing ensemble: run N classical enhancement pipelines,
//! stack the results as channels, and compress to 3 channels with a
//! trainable 7x7 convolution + ReLU so downstream stages see a fixed
//! 3-channel input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::imgproc::{apply_pipeline, ClaheParams, GrayImage, ImgError, PipelineSpec};
use crate::nn::layers::Conv2d;
use crate::nn::{NnError, ParamStore, Scalar, Session, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenConfig {
    /// Enhancement pipelines, one stack channel each, in fixed order.
    pub pipelines: Vec<PipelineSpec>,
    /// When false, the learned convolution is dropped and the first
    /// pipeline's output is replicated into 3 channels (the
    /// "without ensemble" ablation).
    pub learned: bool,
}

impl Default for PenConfig {
    fn default() -> Self {
        Self {
            pipelines: PipelineSpec::default_ensemble(ClaheParams::default()),
            learned: true,
        }
    }
}

impl PenConfig {
    /// Gray-value replication into 3 channels, no learned fusion.
    pub fn replicate() -> Self {
        Self {
            pipelines: vec!["identity".parse().unwrap()],
            learned: false,
        }
    }

    pub fn num_pipelines(&self) -> usize {
        self.pipelines.len()
    }
}

/// Apply every configured pipeline and stack the results as a
/// `[N, H, W]` float tensor scaled to `[0, 1]`.
pub fn apply_algorithms<F: Scalar>(
    img: &GrayImage,
    config: &PenConfig,
) -> Result<Tensor<F>, ImgError> {
    let (w, h) = (img.width(), img.height());
    let n = config.num_pipelines();
    let mut data = Vec::with_capacity(n * h * w);
    for spec in &config.pipelines {
        let enhanced = apply_pipeline(spec, img)?;
        data.extend(enhanced.data().iter().map(|&p| F::f(p as f64 / 255.0)));
    }
    Ok(Tensor::from_vec(&[n, h, w], data).unwrap())
}

/// The trainable fusion layer.
#[derive(Debug, Clone)]
pub struct PenLayer {
    pub config: PenConfig,
    conv: Option<Conv2d>,
}

impl PenLayer {
    pub const OUT_CHANNELS: usize = 3;

    pub fn new<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        config: PenConfig,
    ) -> Self {
        let conv = config.learned.then(|| {
            Conv2d::new(
                store,
                rng,
                "pen.conv",
                config.num_pipelines(),
                Self::OUT_CHANNELS,
                7,
                1,
            )
        });
        Self { config, conv }
    }

    /// `stack` has shape `[B, N, H, W]`; output is `[B, 3, H, W]`,
    /// non-negative (ReLU).
    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        sess: &mut Session<F>,
        stack: Var,
    ) -> Result<Var, NnError> {
        let (_, c, _, _) = sess.graph.value(stack).dims4()?;
        if c != self.config.num_pipelines() {
            return Err(NnError::ShapeMismatch(format!(
                "stack has {c} channels, config expects {}",
                self.config.num_pipelines()
            )));
        }
        match &self.conv {
            Some(conv) => {
                let y = conv.forward(store, sess, stack)?;
                Ok(sess.graph.relu(y))
            }
            None => {
                let first = sess.graph.select_channels(stack, &[0])?;
                sess.graph.concat_channels(&[first, first, first])
            }
        }
    }
}
