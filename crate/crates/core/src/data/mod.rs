//! Dataset model, on-disk format, patient-ID splitting, checkpoint
//! persistence, and the synthetic translucent-phantom generator that
//! stands in for clinical data.

mod checkpoint;
mod dataset;
mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, CkptError, CHECKPOINT_VERSION};
pub use dataset::{load_dataset, save_dataset, split_by_patient, ManifestEntry, MaskSet, Sample};
pub use synth::{corridor_deviation, synth_generate, synth_samples, SynthParams};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("bad mask {path}: {reason}")]
    BadMaskShape { path: PathBuf, reason: String },
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("need at least 3 distinct patients, have {0}")]
    TooFewPatients(usize),
    #[error("bad synth params: {0}")]
    BadParams(String),
    #[error(transparent)]
    Img(#[from] crate::imgproc::ImgError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
