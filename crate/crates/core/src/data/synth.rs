//! Synthetic translucent-fluoroscopy phantom generator.
//!
//! Frames are composited with an attenuation model: every region
//! contributes a density over its indicator set and the observed
//! intensity is `255 * exp(-sum densities) + noise`. Anatomy is drawn
//! once per patient; the bolus travels along a path anchored to the
//! mandible centroid and the spine column, so at high ambiguity
//! (bolus density near soft tissue, plus off-path distractor blobs of
//! the same density) only that anatomical context identifies it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{save_dataset, MaskSet, Sample};
use super::DataError;
use crate::imgproc::{round_clamp_u8, GrayImage};
use crate::region::Region;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Square frame size in pixels.
    pub size: usize,
    // geometry ranges, as fractions of `size`
    pub spine_x: (f64, f64),
    pub spine_half_w: (f64, f64),
    pub mandible_cx: (f64, f64),
    pub mandible_cy: (f64, f64),
    pub mandible_r: (f64, f64),
    pub hyoid_r: (f64, f64),
    pub vocal_r: (f64, f64),
    pub bolus_r: (f64, f64),
    // attenuation densities
    pub spine_density: f64,
    pub mandible_density: f64,
    pub hyoid_density: f64,
    pub vocal_density: f64,
    pub soft_density: f64,
    /// Bolus density at ambiguity 0 (clearly darker than tissue).
    pub bolus_density_clear: f64,
    /// Gaussian noise sigma in intensity units.
    pub noise: f64,
    /// 0 = obvious bolus, 1 = bolus density equals soft tissue and
    /// distractor blobs appear off the swallowing path.
    pub ambiguity: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            size: 64,
            spine_x: (0.70, 0.80),
            spine_half_w: (0.035, 0.055),
            mandible_cx: (0.28, 0.40),
            mandible_cy: (0.18, 0.28),
            mandible_r: (0.05, 0.07),
            hyoid_r: (0.030, 0.045),
            vocal_r: (0.030, 0.050),
            bolus_r: (0.055, 0.080),
            spine_density: 2.5,
            mandible_density: 2.0,
            hyoid_density: 1.2,
            vocal_density: 1.0,
            soft_density: 0.35,
            bolus_density_clear: 1.8,
            noise: 4.0,
            ambiguity: 0.0,
        }
    }
}

impl SynthParams {
    /// Default parameter set at a given ambiguity level.
    pub fn with_ambiguity(ambiguity: f64) -> Self {
        Self {
            ambiguity,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.size < 32 {
            return Err(DataError::BadParams(format!("size {} < 32", self.size)));
        }
        let ranges = [
            ("spine_x", self.spine_x),
            ("spine_half_w", self.spine_half_w),
            ("mandible_cx", self.mandible_cx),
            ("mandible_cy", self.mandible_cy),
            ("mandible_r", self.mandible_r),
            ("hyoid_r", self.hyoid_r),
            ("vocal_r", self.vocal_r),
            ("bolus_r", self.bolus_r),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo < hi && lo > 0.0 && hi < 1.0) {
                return Err(DataError::BadParams(format!(
                    "range {name} = ({lo}, {hi}) is degenerate"
                )));
            }
        }
        let densities = [
            self.spine_density,
            self.mandible_density,
            self.hyoid_density,
            self.vocal_density,
            self.soft_density,
            self.bolus_density_clear,
        ];
        if densities.iter().any(|&d| d <= 0.0) {
            return Err(DataError::BadParams("densities must be positive".into()));
        }
        if self.noise < 0.0 {
            return Err(DataError::BadParams(format!("noise {} < 0", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return Err(DataError::BadParams(format!(
                "ambiguity {} outside [0, 1]",
                self.ambiguity
            )));
        }
        Ok(())
    }

    fn bolus_density(&self) -> f64 {
        self.bolus_density_clear + self.ambiguity * (self.soft_density - self.bolus_density_clear)
    }
}

/// Per-patient anatomy in pixel coordinates.
struct Anatomy {
    spine_x: f64,
    spine_half_w: f64,
    mandible_p0: (f64, f64),
    mandible_p1: (f64, f64),
    mandible_r: f64,
    hyoid_c: (f64, f64),
    hyoid_r: f64,
    vocal_c: (f64, f64),
    vocal_r: f64,
    soft_c: (f64, f64),
    soft_rx: f64,
    soft_ry: f64,
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + rng.gen::<f64>() * (hi - lo)
}

impl Anatomy {
    fn sample(rng: &mut impl Rng, p: &SynthParams) -> Self {
        let s = p.size as f64;
        let spine_x = draw(rng, p.spine_x) * s;
        let cx = draw(rng, p.mandible_cx) * s;
        let cy = draw(rng, p.mandible_cy) * s;
        // symmetric capsule so the mask centroid is (cx, cy)
        let (dx, dy) = (0.12 * s, 0.045 * s);
        Self {
            spine_x,
            spine_half_w: draw(rng, p.spine_half_w) * s,
            mandible_p0: (cx - dx, cy + dy),
            mandible_p1: (cx + dx, cy - dy),
            mandible_r: draw(rng, p.mandible_r) * s,
            hyoid_c: (cx + 0.06 * s, cy + 0.24 * s),
            hyoid_r: draw(rng, p.hyoid_r) * s,
            vocal_c: (draw(rng, (0.50, 0.60)) * s, draw(rng, (0.64, 0.74)) * s),
            vocal_r: draw(rng, p.vocal_r) * s,
            soft_c: (0.45 * s, 0.52 * s),
            soft_rx: 0.38 * s,
            soft_ry: 0.45 * s,
        }
    }

    fn mandible_centroid(&self) -> (f64, f64) {
        (
            0.5 * (self.mandible_p0.0 + self.mandible_p1.0),
            0.5 * (self.mandible_p0.1 + self.mandible_p1.1),
        )
    }
}

fn in_ellipse(x: f64, y: f64, c: (f64, f64), rx: f64, ry: f64) -> bool {
    let (dx, dy) = ((x - c.0) / rx, (y - c.1) / ry);
    dx * dx + dy * dy <= 1.0
}

fn seg_dist(x: f64, y: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((x - a.0) * vx + (y - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    let (px, py) = (a.0 + t * vx, a.1 + t * vy);
    ((x - px).powi(2) + (y - py).powi(2)).sqrt()
}

fn bezier(p0: (f64, f64), c: (f64, f64), p2: (f64, f64), t: f64) -> (f64, f64) {
    let u = 1.0 - t;
    (
        u * u * p0.0 + 2.0 * u * t * c.0 + t * t * p2.0,
        u * u * p0.1 + 2.0 * u * t * c.1 + t * t * p2.1,
    )
}

/// Swallowing path anchors: start at the mandible centroid, end left
/// of the spine column near the frame bottom. Everything is derived
/// from mask-recoverable quantities.
fn path_anchors(
    mandible_centroid: (f64, f64),
    spine_x: f64,
    size: usize,
) -> ((f64, f64), (f64, f64), (f64, f64)) {
    let s = size as f64;
    let p0 = mandible_centroid;
    let p2 = (spine_x - 0.12 * s, 0.88 * s);
    let c = (
        0.5 * (p0.0 + p2.0) - 0.08 * s,
        0.5 * (p0.1 + p2.1) + 0.12 * s,
    );
    (p0, c, p2)
}

/// Spine indicator: a vertical vertebra column with periodic gaps.
fn in_spine(x: f64, y: f64, a: &Anatomy, size: usize) -> bool {
    let s = size as f64;
    if (x - a.spine_x).abs() > a.spine_half_w || y < 0.05 * s || y > 0.95 * s {
        return false;
    }
    let period = 0.08 * s;
    (y / period).fract() < 0.75
}

fn render_frame(
    a: &Anatomy,
    p: &SynthParams,
    rng: &mut impl Rng,
    t: f64,
) -> (GrayImage, MaskSet) {
    let s = p.size as f64;
    let (p0, c, p2) = path_anchors(a.mandible_centroid(), a.spine_x, p.size);
    let bolus_c = bezier(p0, c, p2, t);
    let bolus_r = draw(rng, p.bolus_r) * s;

    // off-path distractors share the bolus density but get no mask
    let n_distractors = (p.ambiguity * 3.0).ceil() as usize;
    let mut distractors: Vec<((f64, f64), f64)> = Vec::new();
    'outer: for _ in 0..n_distractors {
        for _ in 0..50 {
            let cand = (draw(rng, (0.08, 0.92)) * s, draw(rng, (0.08, 0.92)) * s);
            let min_path_dist = (0..=40)
                .map(|i| {
                    let q = bezier(p0, c, p2, i as f64 / 40.0);
                    ((cand.0 - q.0).powi(2) + (cand.1 - q.1).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            if min_path_dist > 0.20 * s {
                distractors.push((cand, draw(rng, p.bolus_r) * s));
                continue 'outer;
            }
        }
    }

    let noise = Normal::new(0.0, p.noise.max(f64::MIN_POSITIVE)).unwrap();
    let bolus_d = p.bolus_density();
    let mut img = GrayImage::new(p.size, p.size);
    let mut masks = MaskSet::new(p.size, p.size);
    for yi in 0..p.size {
        for xi in 0..p.size {
            let (x, y) = (xi as f64 + 0.5, yi as f64 + 0.5);
            let idx = yi * p.size + xi;
            let mut density = 0.0;
            let mut mark = |region: Region, hit: bool, d: f64, density: &mut f64| {
                if hit {
                    masks.channel_mut(region.index())[idx] = 1;
                    *density += d;
                }
            };
            mark(
                Region::CervicalSpine,
                in_spine(x, y, a, p.size),
                p.spine_density,
                &mut density,
            );
            mark(
                Region::Mandible,
                seg_dist(x, y, a.mandible_p0, a.mandible_p1) <= a.mandible_r,
                p.mandible_density,
                &mut density,
            );
            mark(
                Region::HyoidBone,
                in_ellipse(x, y, a.hyoid_c, a.hyoid_r, a.hyoid_r * 0.8),
                p.hyoid_density,
                &mut density,
            );
            mark(
                Region::VocalFold,
                in_ellipse(x, y, a.vocal_c, a.vocal_r, a.vocal_r),
                p.vocal_density,
                &mut density,
            );
            mark(
                Region::SoftTissue,
                in_ellipse(x, y, a.soft_c, a.soft_rx, a.soft_ry),
                p.soft_density,
                &mut density,
            );
            mark(
                Region::Bolus,
                in_ellipse(x, y, bolus_c, bolus_r, bolus_r),
                bolus_d,
                &mut density,
            );
            for &(dc, dr) in &distractors {
                if in_ellipse(x, y, dc, dr, dr) {
                    density += bolus_d;
                }
            }
            let v = 255.0 * (-density).exp() + noise.sample(rng);
            img.data_mut()[idx] = round_clamp_u8(v);
        }
    }
    (img, masks)
}

fn frame_rng(seed: u64, patient: usize, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((patient as u64 + 1) << 20) | (frame as u64 + 1));
    rng
}

/// Generate samples in memory. Frame 0 of every patient places the
/// bolus at the path start (over the mandible) so each patient
/// exhibits a true bolus/mandible overlap.
pub fn synth_samples(
    n_patients: usize,
    frames_per_patient: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<Vec<Sample>, DataError> {
    params.validate()?;
    if n_patients == 0 || frames_per_patient == 0 {
        return Err(DataError::BadParams(
            "need at least 1 patient and 1 frame".into(),
        ));
    }
    let mut samples = Vec::with_capacity(n_patients * frames_per_patient);
    for patient in 0..n_patients {
        let mut arng = ChaCha8Rng::seed_from_u64(seed);
        arng.set_stream(patient as u64 + 1);
        let anatomy = Anatomy::sample(&mut arng, params);
        for frame in 0..frames_per_patient {
            let mut rng = frame_rng(seed, patient, frame);
            let t = if frame == 0 {
                0.0
            } else {
                draw(&mut rng, (0.05, 1.0))
            };
            let (image, masks) = render_frame(&anatomy, params, &mut rng, t);
            samples.push(Sample {
                image,
                masks,
                patient_id: format!("p{patient:03}"),
                frame_id: format!("f{frame:03}"),
            });
        }
    }
    Ok(samples)
}

/// Generate and write a dataset directory.
pub fn synth_generate(
    dir: &Path,
    n_patients: usize,
    frames_per_patient: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<Vec<Sample>, DataError> {
    let samples = synth_samples(n_patients, frames_per_patient, seed, params)?;
    save_dataset(dir, &samples)?;
    Ok(samples)
}

/// Distance from the bolus mask centroid to the swallowing path
/// reconstructed from the spine and mandible masks of the same frame.
pub fn corridor_deviation(sample: &Sample, params: &SynthParams) -> Result<f64, DataError> {
    let mandible = sample
        .masks
        .centroid(Region::Mandible.index())
        .ok_or_else(|| DataError::BadParams("empty mandible mask".into()))?;
    let spine = sample
        .masks
        .centroid(Region::CervicalSpine.index())
        .ok_or_else(|| DataError::BadParams("empty spine mask".into()))?;
    let bolus = sample
        .masks
        .centroid(Region::Bolus.index())
        .ok_or_else(|| DataError::BadParams("empty bolus mask".into()))?;
    let (p0, c, p2) = path_anchors(mandible, spine.0, params.size);
    let dev = (0..=200)
        .map(|i| {
            let q = bezier(p0, c, p2, i as f64 / 200.0);
            ((bolus.0 - q.0).powi(2) + (bolus.1 - q.1).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    Ok(dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_dataset;
    use crate::region::NUM_REGIONS;
    use std::fs;

    #[test]
    fn deterministic_in_memory_and_on_disk() {
        let p = SynthParams::with_ambiguity(0.5);
        let a = synth_samples(3, 2, 9, &p).unwrap();
        let b = synth_samples(3, 2, 9, &p).unwrap();
        assert_eq!(a, b);

        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        synth_generate(d1.path(), 2, 2, 9, &p).unwrap();
        synth_generate(d2.path(), 2, 2, 9, &p).unwrap();
        for rel in ["manifest.jsonl", "images/p000_f001.png", "masks/bolus/p001_f000.png"] {
            assert_eq!(
                fs::read(d1.path().join(rel)).unwrap(),
                fs::read(d2.path().join(rel)).unwrap(),
                "{rel} differs"
            );
        }
        assert_eq!(load_dataset(d1.path()).unwrap().len(), 4);
    }

    #[test]
    fn every_frame_has_channel_overlap() {
        let samples = synth_samples(4, 3, 1, &SynthParams::default()).unwrap();
        for s in &samples {
            let n = s.masks.width() * s.masks.height();
            let overlap = (0..n).any(|i| {
                (0..NUM_REGIONS)
                    .filter(|&r| s.masks.channel(r)[i] != 0)
                    .count()
                    >= 2
            });
            assert!(overlap, "{}/{} has no overlap", s.patient_id, s.frame_id);
        }
    }

    #[test]
    fn first_frame_bolus_overlaps_mandible() {
        let samples = synth_samples(5, 2, 3, &SynthParams::default()).unwrap();
        for s in samples.iter().filter(|s| s.frame_id == "f000") {
            let n = s.masks.width() * s.masks.height();
            let bolus = s.masks.channel(Region::Bolus.index());
            let mand = s.masks.channel(Region::Mandible.index());
            assert!(
                (0..n).any(|i| bolus[i] != 0 && mand[i] != 0),
                "{} frame 0 lacks bolus/mandible overlap",
                s.patient_id
            );
        }
    }

    #[test]
    fn bolus_centroid_stays_in_corridor() {
        let p = SynthParams::with_ambiguity(1.0);
        let samples = synth_samples(6, 4, 11, &p).unwrap();
        let limit = p.bolus_r.1 * p.size as f64 + 3.0;
        for s in &samples {
            let dev = corridor_deviation(s, &p).unwrap();
            assert!(
                dev <= limit,
                "{}/{} deviation {dev} > {limit}",
                s.patient_id,
                s.frame_id
            );
        }
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = SynthParams::default();
        p.ambiguity = 1.5;
        assert!(matches!(p.validate(), Err(DataError::BadParams(_))));
        let mut p = SynthParams::default();
        p.bolus_r = (0.08, 0.05);
        assert!(matches!(p.validate(), Err(DataError::BadParams(_))));
        let mut p = SynthParams::default();
        p.size = 16;
        assert!(p.validate().is_err());
        assert!(synth_samples(0, 2, 0, &SynthParams::default()).is_err());
    }

    #[test]
    fn ambiguity_reduces_bolus_contrast() {
        // same seed, ambiguity 0 vs 1: the bolus density moves to the
        // soft-tissue density
        let clear = SynthParams::with_ambiguity(0.0);
        let hard = SynthParams::with_ambiguity(1.0);
        assert!((hard.bolus_density() - hard.soft_density).abs() < 1e-12);
        assert!(clear.bolus_density() > hard.bolus_density());
    }
}
