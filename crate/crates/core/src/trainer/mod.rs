//! Training loop (AdamW, linear LR decay, summed per-stage Dice
//! losses), evaluation, and the ablation harnesses.

mod ablate;

pub use ablate::{
    ablate_context, ablate_preprocessing, ablate_stages, context_choices,
    preprocessing_variants, Table,
};

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cin::{CinConfig, CinModel, PredictError};
use crate::data::{save_checkpoint, CkptError, DataError, Sample};
use crate::losses::{dice_score, total_loss_graph, LossWeights};
use crate::nn::{AdamW, AdamWConfig, LrSchedule, NnError, Tensor};
use crate::region::{Region, ALL_REGIONS, NUM_REGIONS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: CinConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub seed: u64,
    /// Binarization threshold for evaluation.
    pub theta: f64,
    pub adamw: AdamWConfig,
    /// Optional global step cap (desk-scale runs).
    pub max_steps: Option<usize>,
    /// Early stop once the train-split bolus Dice reaches this value.
    pub stop_at_train_bolus: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: CinConfig::mini(),
            epochs: 250,
            batch_size: 16,
            initial_lr: 0.001,
            seed: 0,
            theta: 0.5,
            adamw: AdamWConfig::default(),
            max_steps: None,
            stop_at_train_bolus: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 {
            return Err(NnError::ConfigInvalid("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::ConfigInvalid("batch_size must be >= 1".into()));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(NnError::ConfigInvalid(format!(
                "theta {} outside (0, 1)",
                self.theta
            )));
        }
        if !(self.initial_lr > 0.0) {
            return Err(NnError::ConfigInvalid("initial_lr must be > 0".into()));
        }
        self.model.validate()
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ckpt(#[from] CkptError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Img(#[from] crate::imgproc::ImgError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_dice: Option<[f64; NUM_REGIONS]>,
    pub val_mean: Option<f64>,
}

pub struct TrainResult {
    /// Model at the best validation bolus Dice (last epoch when no
    /// validation split was given).
    pub model: CinModel<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_bolus: f64,
    pub steps: usize,
}

struct Prepared {
    stack: Tensor<f32>,
    target_ch: Vec<f32>,
    n_pipelines: usize,
    h: usize,
    w: usize,
}

fn prepare(model: &CinModel<f32>, samples: &[Sample]) -> Result<Vec<Prepared>, TrainError> {
    samples
        .iter()
        .map(|s| {
            let stack = model.enhance(&s.image)?;
            let (h, w) = (s.image.height(), s.image.width());
            let n = stack.shape()[0];
            let mut target_ch = Vec::with_capacity(NUM_REGIONS * h * w);
            for r in 0..NUM_REGIONS {
                target_ch.extend(s.masks.channel(r).iter().map(|&v| f32::from(v)));
            }
            Ok(Prepared {
                stack,
                target_ch,
                n_pipelines: n,
                h,
                w,
            })
        })
        .collect()
}

fn batch_tensors(prepared: &[Prepared], idx: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
    let b = idx.len();
    let (n, h, w) = (prepared[idx[0]].n_pipelines, prepared[idx[0]].h, prepared[idx[0]].w);
    let mut xs = Vec::with_capacity(b * n * h * w);
    let mut ys = Vec::with_capacity(b * NUM_REGIONS * h * w);
    for &i in idx {
        xs.extend_from_slice(prepared[i].stack.data());
        ys.extend_from_slice(&prepared[i].target_ch);
    }
    (
        Tensor::from_vec(&[b, n, h, w], xs).unwrap(),
        Tensor::from_vec(&[b, NUM_REGIONS, h, w], ys).unwrap(),
    )
}

/// Fit an existing model in place. Returns the log plus the best
/// (epoch, val bolus Dice) pair; the model is left at the best state.
pub fn train_model(
    cfg: &TrainConfig,
    model: &mut CinModel<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    log_dir: Option<&Path>,
) -> Result<(Vec<EpochLog>, usize, f64, usize), TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let prepared = prepare(model, train_set)?;
    let weights = LossWeights::default_for_stages(cfg.model.stages);
    let schedule = LrSchedule {
        initial_lr: cfg.initial_lr,
        total_epochs: cfg.epochs,
    };
    let mut opt = AdamW::new(cfg.adamw, model.params.tensors());

    let mut log = Vec::new();
    let mut log_file = match log_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(fs::File::create(dir.join("log.jsonl"))?)
        }
        None => None,
    };
    let mut best: Option<(usize, f64, crate::nn::ParamStore<f32>, crate::nn::BnStore<f32>)> = None;
    let mut steps = 0usize;
    let mut indices: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        indices.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let (stack, target) = batch_tensors(&prepared, chunk);
            let mut fwd = model.forward(&stack, true)?;
            let loss = total_loss_graph(&mut fwd.sess.graph, &fwd.probs, &target, &weights)?;
            let loss_val = fwd.sess.graph.value(loss).item();
            if !loss_val.is_finite() {
                return Err(TrainError::Diverged { epoch, step: steps });
            }
            let grads = fwd.sess.graph.backward(loss)?;
            let gvecs = fwd.sess.collect_grads(&model.params, &grads);
            opt.step(model.params.tensors_mut(), &gvecs, lr)?;
            loss_sum += f64::from(loss_val);
            batches += 1;
            steps += 1;
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
        }
        let train_loss = loss_sum / batches as f64;

        let (val_dice, val_mean) = if val_set.is_empty() {
            (None, None)
        } else {
            let t = evaluate(model, val_set, cfg.theta)?;
            (Some(t.per_region), Some(t.average))
        };
        let entry = EpochLog {
            epoch,
            lr,
            train_loss,
            val_dice,
            val_mean,
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&entry).unwrap())?;
        }
        log.push(entry);

        let score = val_dice.map(|d| d[Region::Bolus.index()]);
        if let Some(s) = score {
            if best.as_ref().map_or(true, |(_, b, _, _)| s > *b) {
                best = Some((epoch, s, model.params.clone(), model.bns.clone()));
            }
        }

        if let Some(target_dice) = cfg.stop_at_train_bolus {
            let t = evaluate(model, train_set, cfg.theta)?;
            if t.per_region[Region::Bolus.index()] >= target_dice {
                break 'epochs;
            }
        }
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }

    let (best_epoch, best_val) = match best {
        Some((e, s, params, bns)) => {
            model.params = params;
            model.bns = bns;
            (e, s)
        }
        None => (log.len().saturating_sub(1), f64::NAN),
    };
    if let Some(dir) = log_dir {
        save_checkpoint(model, Some(&opt), &dir.join("best.ckpt"))?;
    }
    Ok((log, best_epoch, best_val, steps))
}

/// Build a model from the config and fit it.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    log_dir: Option<&Path>,
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    let mut model: CinModel<f32> = CinModel::build(cfg.model.clone())?;
    let (log, best_epoch, best_val_bolus, steps) =
        train_model(cfg, &mut model, train_set, val_set, log_dir)?;
    Ok(TrainResult {
        model,
        log,
        best_epoch,
        best_val_bolus,
        steps,
    })
}

/// Macro-averaged per-image Dice per region plus the six-region mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub per_region: [f64; NUM_REGIONS],
    pub average: f64,
    pub n_images: usize,
}

impl EvalTable {
    /// Columns in canonical region order, then `average`.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<&str> = ALL_REGIONS.iter().map(|r| r.name()).collect();
        header.push("average");
        let vals: Vec<String> = self
            .per_region
            .iter()
            .chain(std::iter::once(&self.average))
            .map(|v| format!("{v:.4}"))
            .collect();
        format!("{}\n{}\n", header.join(","), vals.join(","))
    }
}

/// Evaluate arbitrary binary predictions (flattened `[6, H, W]`, 0/1).
pub fn evaluate_with<P>(split: &[Sample], mut predict: P) -> Result<EvalTable, TrainError>
where
    P: FnMut(&Sample) -> Result<Vec<u8>, TrainError>,
{
    if split.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut sums = [0.0f64; NUM_REGIONS];
    for s in split {
        let pred = predict(s)?;
        let hw = s.masks.width() * s.masks.height();
        for r in 0..NUM_REGIONS {
            sums[r] += dice_score(&pred[r * hw..(r + 1) * hw], s.masks.channel(r));
        }
    }
    let n = split.len();
    let per_region = sums.map(|v| v / n as f64);
    Ok(EvalTable {
        per_region,
        average: per_region.iter().sum::<f64>() / NUM_REGIONS as f64,
        n_images: n,
    })
}

pub fn evaluate(
    model: &mut CinModel<f32>,
    split: &[Sample],
    theta: f64,
) -> Result<EvalTable, TrainError> {
    evaluate_with(split, |s| {
        let (_, masks) = model.predict(&s.image, theta)?;
        Ok(masks)
    })
}


#[cfg(test)]
mod tests {
    use super::tests_support::tiny16;
    use super::*;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            model: CinConfig {
                resolution: 16,
                seed: 3,
                ..CinConfig::mini()
            },
            epochs: 2,
            batch_size: 2,
            initial_lr: 1e-3,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> Vec<Sample> {
        tiny16()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.theta = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_train_set_rejected() {
        assert!(matches!(
            train(&tiny_cfg(), &[], &[], None),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn deterministic_first_epoch_loss() {
        let data = tiny_data();
        let cfg = TrainConfig {
            epochs: 1,
            ..tiny_cfg()
        };
        let a = train(&cfg, &data, &[], None).unwrap();
        let b = train(&cfg, &data, &[], None).unwrap();
        assert_eq!(a.log[0].train_loss.to_bits(), b.log[0].train_loss.to_bits());
    }

    #[test]
    fn logs_val_and_keeps_best() {
        let data = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let res = train(&tiny_cfg(), &data, &data, Some(dir.path())).unwrap();
        assert_eq!(res.log.len(), 2);
        assert!(res.log.iter().all(|e| e.val_dice.is_some()));
        assert!(res.best_val_bolus.is_finite());
        assert!(dir.path().join("best.ckpt").exists());
        let lines = fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 2);
    }

    #[test]
    fn nan_model_diverges() {
        let data = tiny_data();
        let cfg = tiny_cfg();
        let mut model: CinModel<f32> = CinModel::build(cfg.model.clone()).unwrap();
        // poison the final head bias: it feeds sigmoid directly, so the
        // NaN cannot be masked by an intervening ReLU
        let id = model.params.by_name("stage1.head.bias").unwrap();
        model.params.get_mut(id).data_mut()[0] = f32::NAN;
        assert!(matches!(
            train_model(&cfg, &mut model, &data, &[], None),
            Err(TrainError::Diverged { epoch: 0, .. })
        ));
    }

    #[test]
    fn max_steps_caps_training() {
        let data = tiny_data();
        let cfg = TrainConfig {
            epochs: 50,
            max_steps: Some(3),
            ..tiny_cfg()
        };
        let res = train(&cfg, &data, &[], None).unwrap();
        assert_eq!(res.steps, 3);
    }

    #[test]
    fn oracle_predictions_score_one() {
        let data = tiny_data();
        let t = evaluate_with(&data, |s| {
            let hw = s.masks.width() * s.masks.height();
            let mut out = Vec::with_capacity(NUM_REGIONS * hw);
            for r in 0..NUM_REGIONS {
                out.extend_from_slice(s.masks.channel(r));
            }
            Ok(out)
        })
        .unwrap();
        assert_eq!(t.per_region, [1.0; NUM_REGIONS]);
        assert_eq!(t.average, 1.0);
    }

    #[test]
    fn all_zero_predictions_zero_bolus() {
        // keep only frames whose bolus mask is nonempty (empty-vs-empty
        // scores 1.0 by convention)
        let data: Vec<Sample> = tiny_data()
            .into_iter()
            .filter(|s| s.masks.channel(Region::Bolus.index()).iter().any(|&v| v != 0))
            .collect();
        assert!(!data.is_empty());
        let t = evaluate_with(&data, |s| {
            Ok(vec![0u8; NUM_REGIONS * s.masks.width() * s.masks.height()])
        })
        .unwrap();
        assert_eq!(t.per_region[Region::Bolus.index()], 0.0);
    }

    #[test]
    fn csv_column_order_is_canonical() {
        let t = EvalTable {
            per_region: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            average: 0.35,
            n_images: 1,
        };
        let csv = t.to_csv();
        assert!(csv.starts_with(
            "bolus,mandible,hyoid_bone,vocal_fold,cervical_spine,soft_tissue,average\n"
        ));
        assert!(csv.contains("0.1000,0.2000"));
    }

    #[test]
    fn pen_receives_gradient() {
        let data = tiny_data();
        let cfg = TrainConfig {
            epochs: 1,
            ..tiny_cfg()
        };
        let before: CinModel<f32> = CinModel::build(cfg.model.clone()).unwrap();
        let res = train(&cfg, &data, &[], None).unwrap();
        let id = res.model.params.by_name("pen.conv.weight").unwrap();
        let id0 = before.params.by_name("pen.conv.weight").unwrap();
        let moved = res
            .model
            .params
            .get(id)
            .data()
            .iter()
            .zip(before.params.get(id0).data())
            .any(|(a, b)| a != b);
        assert!(moved, "PEN weights did not move");
    }
}
