//! Cascaded inference: a sequence of transformer-UNet segmentation
//! stages. Stage 1 sees the 3-channel enhanced image; every later
//! stage sees that image concatenated with the *logit* channels of the
//! selected context regions from the previous stage. All stage outputs
//! are per-region sigmoid probabilities (multi-label, unnormalized
//! across channels).

mod stage;

pub use stage::{StageNet, StageTrace};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imgproc::GrayImage;
use crate::nn::{BnStore, NnError, ParamStore, Scalar, Session, Tensor, Var};
use crate::pen::{apply_algorithms, PenConfig, PenLayer};
use crate::region::{Region, NUM_REGIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Table-scale backbone: 224 input, ResNet-style encoder, 12
    /// transformer blocks of width 768.
    Paper,
    /// Desk-scale backbone: 64 input, three conv levels (16/32/64),
    /// 2 transformer blocks of width 64, 4 heads.
    Mini,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CinConfig {
    pub preset: Preset,
    /// Number of cascade stages `S >= 1`.
    pub stages: usize,
    /// Context sets `T'_i` between stage i and i+1; length `S - 1`,
    /// each non-empty.
    pub contexts: Vec<Vec<Region>>,
    pub pen: PenConfig,
    /// Input resolution (square). Must be divisible by 8 for the mini
    /// preset, 16 for the paper preset.
    pub resolution: usize,
    pub seed: u64,
}

impl CinConfig {
    pub fn mini() -> Self {
        Self {
            preset: Preset::Mini,
            stages: 2,
            contexts: vec![crate::region::default_context()],
            pen: PenConfig::default(),
            resolution: 64,
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            resolution: 224,
            ..Self::mini()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.stages == 0 {
            return Err(NnError::ConfigInvalid("stages must be >= 1".into()));
        }
        if self.contexts.len() != self.stages - 1 {
            return Err(NnError::ConfigInvalid(format!(
                "{} stages need {} context sets, got {}",
                self.stages,
                self.stages - 1,
                self.contexts.len()
            )));
        }
        if self.contexts.iter().any(|c| c.is_empty()) {
            return Err(NnError::ConfigInvalid(
                "context sets must be non-empty".into(),
            ));
        }
        let align = match self.preset {
            Preset::Mini => 8,
            Preset::Paper => 16,
        };
        if self.resolution == 0 || self.resolution % align != 0 {
            return Err(NnError::ConfigInvalid(format!(
                "resolution {} must be a positive multiple of {align}",
                self.resolution
            )));
        }
        Ok(())
    }

    /// Channel-count law: stage 1 takes 3 channels; stage `i >= 2`
    /// takes `3 + |T'_{i-1}|`.
    pub fn stage_in_channels(&self, stage: usize) -> usize {
        if stage == 0 {
            PenLayer::OUT_CHANNELS
        } else {
            PenLayer::OUT_CHANNELS + self.contexts[stage - 1].len()
        }
    }
}

/// The full model: preprocessing ensemble plus cascade stages, with
/// all parameters in one store.
pub struct CinModel<F: Scalar> {
    pub config: CinConfig,
    pub pen: PenLayer,
    pub stages: Vec<StageNet>,
    pub params: ParamStore<F>,
    pub bns: BnStore<F>,
}

/// All graph handles produced by one forward pass.
pub struct CinForward<F: Scalar> {
    pub sess: Session<F>,
    /// PEN output `x̄`.
    pub xbar: Var,
    /// Raw logits per stage.
    pub logits: Vec<Var>,
    /// Sigmoid probabilities per stage.
    pub probs: Vec<Var>,
    /// Post-activation decoder block outputs per stage (4 blocks).
    pub decoder_acts: Vec<Vec<Var>>,
}

impl<F: Scalar> CinModel<F> {
    pub fn build(config: CinConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut bns = BnStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let pen = PenLayer::new(&mut params, &mut rng, config.pen.clone());
        let mut stages = Vec::with_capacity(config.stages);
        for i in 0..config.stages {
            let in_ch = config.stage_in_channels(i);
            stages.push(StageNet::new(
                &mut params,
                &mut bns,
                &mut rng,
                &format!("stage{i}"),
                config.preset,
                in_ch,
                NUM_REGIONS,
                config.resolution,
            )?);
        }
        Ok(Self {
            config,
            pen,
            stages,
            params,
            bns,
        })
    }

    /// Enhance a raw frame into the `[N, H, W]` pipeline stack.
    pub fn enhance(&self, img: &GrayImage) -> Result<Tensor<F>, crate::imgproc::ImgError> {
        apply_algorithms(img, &self.pen.config)
    }

    /// Forward through PEN and all stages. `stack` is `[B, N, H, W]`.
    pub fn forward(&mut self, stack: &Tensor<F>, train: bool) -> Result<CinForward<F>, NnError> {
        self.forward_injected(stack, train, None)
    }

    /// Forward with an optional logit perturbation added to stage
    /// `inject.0`'s output before context selection (test hook for
    /// the context-asymmetry property).
    pub fn forward_injected(
        &mut self,
        stack: &Tensor<F>,
        train: bool,
        inject: Option<(usize, &Tensor<F>)>,
    ) -> Result<CinForward<F>, NnError> {
        let mut sess = Session::new(&self.params);
        let input = sess.graph.constant(stack.clone());
        let xbar = self.pen.forward(&self.params, &mut sess, input)?;

        let mut logits = Vec::with_capacity(self.stages.len());
        let mut probs = Vec::with_capacity(self.stages.len());
        let mut decoder_acts = Vec::with_capacity(self.stages.len());
        let mut prev_context_logits: Option<Var> = None;

        for (i, stage) in self.stages.iter().enumerate() {
            let stage_in = match prev_context_logits {
                None => xbar,
                Some(ctx) => sess.graph.concat_channels(&[xbar, ctx])?,
            };
            let trace = stage.forward(&self.params, &mut self.bns, &mut sess, stage_in, train)?;
            let mut a_i = trace.logits;
            if let Some((stage_idx, delta)) = inject {
                if stage_idx == i {
                    let d = sess.graph.constant(delta.clone());
                    a_i = sess.graph.add(a_i, d)?;
                }
            }
            let y_i = sess.graph.sigmoid(a_i);
            if i + 1 < self.stages.len() {
                let idx: Vec<usize> = self.config.contexts[i].iter().map(|r| r.index()).collect();
                prev_context_logits = Some(sess.graph.select_channels(a_i, &idx)?);
            }
            logits.push(a_i);
            probs.push(y_i);
            decoder_acts.push(trace.decoder_acts);
        }

        Ok(CinForward {
            sess,
            xbar,
            logits,
            probs,
            decoder_acts,
        })
    }

    /// Inference on one frame: final-stage probabilities plus binary
    /// maps at threshold `theta` (ties resolve positive).
    pub fn predict(
        &mut self,
        img: &GrayImage,
        theta: f64,
    ) -> Result<(Tensor<F>, Vec<u8>), PredictError> {
        let (h, w) = (img.height(), img.width());
        let stack = self.enhance(img)?;
        let n = stack.shape()[0];
        let stack4 = stack.reshaped(&[1, n, h, w])?;
        let fwd = self.forward(&stack4, false)?;
        let probs = fwd.sess.graph.value(*fwd.probs.last().unwrap()).clone();
        let probs = probs.reshaped(&[NUM_REGIONS, h, w])?;
        let th = F::f(theta);
        let masks = probs.data().iter().map(|&p| u8::from(p >= th)).collect();
        Ok((probs, masks))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error(transparent)]
    Img(#[from] crate::imgproc::ImgError),
    #[error(transparent)]
    Nn(#[from] NnError),
}
