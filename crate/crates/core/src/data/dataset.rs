//! Samples, the JSON-lines manifest format, and patient-ID splitting.
//!
//! Layout: `<root>/manifest.jsonl`, `<root>/images/*.png`,
//! `<root>/masks/<region>/*.png`. Masks are binary PNGs (0/255), one
//! per region, overlap allowed.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::imgproc::GrayImage;
use crate::nn::{Scalar, Tensor};
use crate::region::{ALL_REGIONS, NUM_REGIONS};

/// Six binary masks over the same raster; values are 0/1 in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    width: usize,
    height: usize,
    channels: Vec<Vec<u8>>,
}

impl MaskSet {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            channels: vec![vec![0; width * height]; NUM_REGIONS],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Mask pixels of one region channel (row-major, 0/1).
    pub fn channel(&self, region: usize) -> &[u8] {
        &self.channels[region]
    }

    pub fn channel_mut(&mut self, region: usize) -> &mut [u8] {
        &mut self.channels[region]
    }

    /// Stack into a `[1, 6, H, W]` float target.
    pub fn to_target<F: Scalar>(&self) -> Tensor<F> {
        let mut data = Vec::with_capacity(NUM_REGIONS * self.height * self.width);
        for c in &self.channels {
            data.extend(c.iter().map(|&v| F::f(f64::from(v))));
        }
        Tensor::from_vec(&[1, NUM_REGIONS, self.height, self.width], data).unwrap()
    }

    /// Centroid (x, y) of a channel's positive pixels, if any.
    pub fn centroid(&self, region: usize) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u64);
        for (i, &v) in self.channels[region].iter().enumerate() {
            if v != 0 {
                sx += (i % self.width) as f64;
                sy += (i / self.width) as f64;
                n += 1;
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub masks: MaskSet,
    pub patient_id: String,
    pub frame_id: String,
}

/// One manifest line: relative paths plus identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    /// Six mask paths in canonical region order.
    pub masks: Vec<String>,
    pub patient_id: String,
    pub frame_id: String,
}

fn load_mask_channel(path: &Path, width: usize, height: usize) -> Result<Vec<u8>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let img = GrayImage::load_png(path)?;
    if img.width() != width || img.height() != height {
        return Err(DataError::BadMaskShape {
            path: path.to_path_buf(),
            reason: format!(
                "mask is {}x{}, image is {width}x{height}",
                img.width(),
                img.height()
            ),
        });
    }
    img.data()
        .iter()
        .map(|&v| match v {
            0 => Ok(0),
            255 => Ok(1),
            other => Err(DataError::BadMaskShape {
                path: path.to_path_buf(),
                reason: format!("non-binary pixel value {other}"),
            }),
        })
        .collect()
}

/// Load a dataset directory, validating every sample. Order follows
/// the manifest.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>, DataError> {
    let manifest = dir.join("manifest.jsonl");
    if !manifest.exists() {
        return Err(DataError::MissingFile(manifest));
    }
    let reader = BufReader::new(fs::File::open(&manifest)?);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| DataError::BadManifest(format!("line {}: {e}", lineno + 1)))?;
        if entry.patient_id.is_empty() {
            return Err(DataError::BadManifest(format!(
                "line {}: empty patient_id",
                lineno + 1
            )));
        }
        if entry.masks.len() != NUM_REGIONS {
            return Err(DataError::BadManifest(format!(
                "line {}: {} mask paths, expected {NUM_REGIONS}",
                lineno + 1,
                entry.masks.len()
            )));
        }
        let img_path = dir.join(&entry.image);
        if !img_path.exists() {
            return Err(DataError::MissingFile(img_path));
        }
        let image = GrayImage::load_png(&img_path)?;
        let mut masks = MaskSet::new(image.width(), image.height());
        for (r, rel) in entry.masks.iter().enumerate() {
            let ch = load_mask_channel(&dir.join(rel), image.width(), image.height())?;
            masks.channel_mut(r).copy_from_slice(&ch);
        }
        samples.push(Sample {
            image,
            masks,
            patient_id: entry.patient_id,
            frame_id: entry.frame_id,
        });
    }
    Ok(samples)
}

/// Write samples as the standard directory layout and manifest.
pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<(), DataError> {
    fs::create_dir_all(dir.join("images"))?;
    for r in ALL_REGIONS {
        fs::create_dir_all(dir.join("masks").join(r.name()))?;
    }
    let mut manifest = fs::File::create(dir.join("manifest.jsonl"))?;
    for s in samples {
        let stem = format!("{}_{}.png", s.patient_id, s.frame_id);
        let img_rel = format!("images/{stem}");
        s.image.save_png(&dir.join(&img_rel))?;
        let mut mask_rels = Vec::with_capacity(NUM_REGIONS);
        for (i, r) in ALL_REGIONS.iter().enumerate() {
            let rel = format!("masks/{}/{stem}", r.name());
            let pixels = s.masks.channel(i).iter().map(|&v| v * 255).collect();
            GrayImage::from_vec(s.masks.width(), s.masks.height(), pixels)?
                .save_png(&dir.join(&rel))?;
            mask_rels.push(rel);
        }
        let entry = ManifestEntry {
            image: img_rel,
            masks: mask_rels,
            patient_id: s.patient_id.clone(),
            frame_id: s.frame_id.clone(),
        };
        writeln!(manifest, "{}", serde_json::to_string(&entry).unwrap())?;
    }
    Ok(())
}

/// Split whole patients (never frames) into train/val/test by shuffled
/// cumulative ratio. Remainders go to train.
pub fn split_by_patient(
    samples: &[Sample],
    ratios: (usize, usize, usize),
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>), DataError> {
    let mut patients: Vec<&str> = Vec::new();
    for s in samples {
        if !patients.contains(&s.patient_id.as_str()) {
            patients.push(&s.patient_id);
        }
    }
    if patients.len() < 3 {
        return Err(DataError::TooFewPatients(patients.len()));
    }
    let total = ratios.0 + ratios.1 + ratios.2;
    if total == 0 || ratios.0 == 0 {
        return Err(DataError::BadParams(format!("bad split ratios {ratios:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);

    let n = patients.len();
    let take = |r: usize| -> usize {
        if r == 0 {
            0
        } else {
            (n * r / total).max(1)
        }
    };
    let n_val = take(ratios.1);
    let n_test = take(ratios.2);
    if n_val + n_test >= n {
        return Err(DataError::TooFewPatients(n));
    }
    let val_set = &patients[..n_val];
    let test_set = &patients[n_val..n_val + n_test];

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        let p = s.patient_id.as_str();
        if val_set.contains(&p) {
            val.push(s.clone());
        } else if test_set.contains(&p) {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn sample(patient: &str, frame: &str) -> Sample {
        let mut masks = MaskSet::new(8, 8);
        masks.channel_mut(0)[10] = 1;
        masks.channel_mut(1)[10] = 1;
        Sample {
            image: GrayImage::random(8, 8, 1),
            masks,
            patient_id: patient.into(),
            frame_id: frame.into(),
        }
    }

    #[test]
    fn roundtrip_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![sample("p000", "f000")];
        save_dataset(dir.path(), &samples).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, samples);
    }

    #[test]
    fn empty_manifest_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("manifest.jsonl"), "").unwrap();
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn non_binary_mask_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &[sample("p0", "f0")]).unwrap();
        let bad = dir.path().join("masks/bolus/p0_f0.png");
        let mut m = GrayImage::load_png(&bad).unwrap();
        m.data_mut()[3] = 37;
        m.save_png(&bad).unwrap();
        match load_dataset(dir.path()) {
            Err(DataError::BadMaskShape { reason, .. }) => {
                assert!(reason.contains("37"), "{reason}")
            }
            other => panic!("expected BadMaskShape, got {other:?}"),
        }
    }

    #[test]
    fn missing_image_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &[sample("p0", "f0")]).unwrap();
        fs::remove_file(dir.path().join("images/p0_f0.png")).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DataError::MissingFile(_))
        ));
    }

    #[test]
    fn wrong_mask_dims_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &[sample("p0", "f0")]).unwrap();
        let bad = dir.path().join("masks/mandible/p0_f0.png");
        GrayImage::new(4, 4).save_png(&bad).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DataError::BadMaskShape { .. })
        ));
    }

    #[test]
    fn split_811_over_ten_patients() {
        let samples: Vec<Sample> = (0..10)
            .flat_map(|p| (0..3).map(move |f| sample(&format!("p{p}"), &format!("f{f}"))))
            .collect();
        let (train, val, test) = split_by_patient(&samples, (8, 1, 1), 7).unwrap();
        let count = |v: &[Sample]| {
            v.iter()
                .map(|s| s.patient_id.clone())
                .collect::<HashSet<_>>()
                .len()
        };
        assert_eq!((count(&train), count(&val), count(&test)), (8, 1, 1));
        assert_eq!(train.len() + val.len() + test.len(), 30);
    }

    #[test]
    fn same_seed_same_split() {
        let samples: Vec<Sample> = (0..10)
            .map(|p| sample(&format!("p{p}"), "f0"))
            .collect();
        let a = split_by_patient(&samples, (8, 1, 1), 42).unwrap();
        let b = split_by_patient(&samples, (8, 1, 1), 42).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn too_few_patients_rejected() {
        let samples = vec![sample("a", "f0"), sample("b", "f0")];
        assert!(matches!(
            split_by_patient(&samples, (8, 1, 1), 0),
            Err(DataError::TooFewPatients(2))
        ));
    }

    proptest! {
        #[test]
        fn patient_disjointness(
            n_patients in 3usize..20,
            frames in 1usize..4,
            r0 in 1usize..9,
            r1 in 0usize..3,
            r2 in 0usize..3,
            seed in any::<u64>(),
        ) {
            let samples: Vec<Sample> = (0..n_patients)
                .flat_map(|p| (0..frames).map(move |f| sample(&format!("p{p}"), &format!("f{f}"))))
                .collect();
            if let Ok((train, val, test)) = split_by_patient(&samples, (r0, r1, r2), seed) {
                let ids = |v: &[Sample]| v.iter().map(|s| s.patient_id.clone()).collect::<HashSet<_>>();
                let (a, b, c) = (ids(&train), ids(&val), ids(&test));
                prop_assert!(a.is_disjoint(&b));
                prop_assert!(a.is_disjoint(&c));
                prop_assert!(b.is_disjoint(&c));
                prop_assert_eq!(train.len() + val.len() + test.len(), samples.len());
            }
        }
    }
}
