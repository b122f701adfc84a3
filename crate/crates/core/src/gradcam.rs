//! GradCAM importance maps over the decoder blocks of the final
//! stage, plus the region-ranking procedure used to pick the context
//! set: regions whose pixels carry the most per-pixel heatmap mass
//! when segmenting a target region.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cin::{CinModel, PredictError};
use crate::data::Sample;
use crate::nn::{NnError, Scalar, Tensor};
use crate::region::{Region, ALL_REGIONS, NUM_REGIONS};

pub const NUM_DECODER_BLOCKS: usize = 4;

/// Non-negative importance raster, max-normalized to 1 (all-zero
/// allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Choice of the scalar the gradients are taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetScalar {
    /// Sum of the target-region logit channel over the whole map.
    #[default]
    FullMap,
    /// Sum restricted to the ground-truth region mask.
    GtMasked,
}

#[derive(Debug, Error)]
pub enum GradCamError {
    #[error("decoder block {0} out of range 1..={NUM_DECODER_BLOCKS}")]
    BlockOutOfRange(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Predict(#[from] PredictError),
}

impl From<crate::imgproc::ImgError> for GradCamError {
    fn from(e: crate::imgproc::ImgError) -> Self {
        GradCamError::Predict(PredictError::Img(e))
    }
}

/// Bilinear resize (align corners false) of a single-channel map.
fn bilinear_resize(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; dw * dh];
    for oy in 0..dh {
        let sy = ((oy as f64 + 0.5) * sh as f64 / dh as f64 - 0.5).clamp(0.0, sh as f64 - 1.0);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = sy - y0 as f64;
        for ox in 0..dw {
            let sx = ((ox as f64 + 0.5) * sw as f64 / dw as f64 - 0.5).clamp(0.0, sw as f64 - 1.0);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = sx - x0 as f64;
            let top = (1.0 - wx) * src[y0 * sw + x0] + wx * src[y0 * sw + x1];
            let bot = (1.0 - wx) * src[y1 * sw + x0] + wx * src[y1 * sw + x1];
            out[oy * dw + ox] = (1.0 - wy) * top + wy * bot;
        }
    }
    out
}

/// GradCAM heatmap of one decoder block (1..=4) of the final stage for
/// a target region, resized to the input raster and max-normalized.
pub fn gradcam_map<F: Scalar>(
    model: &mut CinModel<F>,
    sample: &Sample,
    target: Region,
    block: usize,
    scalar: TargetScalar,
) -> Result<Heatmap, GradCamError> {
    if block == 0 || block > NUM_DECODER_BLOCKS {
        return Err(GradCamError::BlockOutOfRange(block));
    }
    let (w, h) = (sample.image.width(), sample.image.height());
    let stack = model.enhance(&sample.image)?;
    let n = stack.shape()[0];
    let stack4 = stack.reshaped(&[1, n, h, w])?;
    let mut fwd = model.forward(&stack4, false)?;

    let logits = *fwd.logits.last().unwrap();
    let chan = fwd
        .sess
        .graph
        .select_channels(logits, &[target.index()])?;
    let objective = match scalar {
        TargetScalar::FullMap => chan,
        TargetScalar::GtMasked => {
            let mask_data: Vec<F> = sample
                .masks
                .channel(target.index())
                .iter()
                .map(|&v| F::f(f64::from(v)))
                .collect();
            let mask = fwd
                .sess
                .graph
                .constant(Tensor::from_vec(&[1, 1, h, w], mask_data)?);
            fwd.sess.graph.mul(chan, mask)?
        }
    };
    let loss = fwd.sess.graph.sum_all(objective);
    let grads = fwd.sess.graph.backward(loss)?;

    let act_var = fwd.decoder_acts.last().unwrap()[block - 1];
    let act = fwd.sess.graph.value(act_var);
    let (_, c, ah, aw) = act.dims4()?;
    let grad = grads.grad_or_zeros(act_var, act.shape());

    let mut cam = vec![0.0f64; ah * aw];
    let hw = ah * aw;
    for k in 0..c {
        let g = &grad.data()[k * hw..(k + 1) * hw];
        let alpha: f64 = g.iter().map(|v| v.to64()).sum::<f64>() / hw as f64;
        let a = &act.data()[k * hw..(k + 1) * hw];
        for (o, v) in cam.iter_mut().zip(a) {
            *o += alpha * v.to64();
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let mut data = bilinear_resize(&cam, aw, ah, w, h);
    let max = data.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in &mut data {
            *v = (*v / max).clamp(0.0, 1.0);
        }
    }
    Ok(Heatmap {
        width: w,
        height: h,
        data,
    })
}

/// Per-pixel mean heatmap mass within each region's ground truth,
/// averaged over all images and all four decoder blocks, returned in
/// descending order. Regions with no positive pixels anywhere score 0.
pub fn region_importance<F: Scalar>(
    model: &mut CinModel<F>,
    dataset: &[Sample],
    target: Region,
    scalar: TargetScalar,
) -> Result<Vec<(Region, f64)>, GradCamError> {
    if dataset.is_empty() {
        return Err(GradCamError::EmptyDataset);
    }
    let mut mass = [0.0f64; NUM_REGIONS];
    let mut pixels = [0u64; NUM_REGIONS];
    for sample in dataset {
        for block in 1..=NUM_DECODER_BLOCKS {
            let map = gradcam_map(model, sample, target, block, scalar)?;
            for r in 0..NUM_REGIONS {
                for (i, &m) in sample.masks.channel(r).iter().enumerate() {
                    if m != 0 {
                        mass[r] += map.data[i];
                        pixels[r] += 1;
                    }
                }
            }
        }
    }
    let mut ranked: Vec<(Region, f64)> = ALL_REGIONS
        .iter()
        .map(|&r| {
            let i = r.index();
            let score = if pixels[i] == 0 {
                0.0
            } else {
                mass[i] / pixels[i] as f64
            };
            (r, score)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.index().cmp(&b.0.index())));
    Ok(ranked)
}
