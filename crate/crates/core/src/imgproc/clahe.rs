use serde::{Deserialize, Serialize};

use super::{round_clamp_u8, GrayImage, ImgError};

pub const BINS: usize = 256;

/// Parameters of contrast-limited adaptive histogram equalization.
///
/// `clip_limit` is a relative factor: the absolute per-bin ceiling is
/// `max(1, round(clip_limit * tile_pixels / 256))`. `None` disables
/// clipping entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub clip_limit: Option<f64>,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tiles_x: 8,
            tiles_y: 8,
            clip_limit: Some(2.0),
        }
    }
}

/// Clip a histogram at `clip` and redistribute the excess uniformly:
/// every bin gains `floor(excess/256)`, and the remainder `r` goes to
/// bins `0..r`. Total count is conserved exactly. `clip = None` is a
/// no-op.
pub fn clip_redistribute(hist: &[u64; BINS], clip: Option<u64>) -> [u64; BINS] {
    let clip = match clip {
        Some(c) => c,
        None => return *hist,
    };
    let mut out = [0u64; BINS];
    let mut excess = 0u64;
    for (o, &h) in out.iter_mut().zip(hist.iter()) {
        if h > clip {
            excess += h - clip;
            *o = clip;
        } else {
            *o = h;
        }
    }
    let per_bin = excess / BINS as u64;
    let remainder = (excess % BINS as u64) as usize;
    for o in out.iter_mut() {
        *o += per_bin;
    }
    for o in out.iter_mut().take(remainder) {
        *o += 1;
    }
    out
}

/// Histogram-equalization lookup table: `LUT[v] = round(255 * CDF(v) / total)`,
/// rounded half-away-from-zero. Monotone non-decreasing with `LUT[255] = 255`.
pub fn tile_lut(hist: &[u64; BINS]) -> Result<[u8; BINS], ImgError> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Err(ImgError::EmptyHistogram);
    }
    let mut lut = [0u8; BINS];
    let mut cdf = 0u64;
    for (v, &h) in hist.iter().enumerate() {
        cdf += h;
        lut[v] = round_clamp_u8(255.0 * cdf as f64 / total as f64);
    }
    Ok(lut)
}

fn absolute_clip(clip_limit: Option<f64>, tile_pixels: usize) -> Option<u64> {
    clip_limit.map(|c| {
        let raw = c * tile_pixels as f64 / BINS as f64;
        ((raw + 0.5).floor() as u64).max(1)
    })
}

/// Pad by replicating the right/bottom edges so both dimensions divide
/// the tile grid evenly.
fn pad_to_grid(img: &GrayImage, pw: usize, ph: usize) -> GrayImage {
    let mut out = GrayImage::new(pw, ph);
    for y in 0..ph {
        let sy = y.min(img.height() - 1);
        for x in 0..pw {
            let sx = x.min(img.width() - 1);
            out.set(x, y, img.get(sx, sy));
        }
    }
    out
}

/// Contrast-limited adaptive histogram equalization.
///
/// The image is padded by edge replication to a multiple of the tile
/// grid, per-tile clipped-histogram LUTs are built, and each pixel is
/// mapped by bilinear interpolation between the four nearest tile
/// centers (weights clamped at the borders so edge pixels use the
/// nearest tile). The padding is cropped before returning.
pub fn clahe(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage, ImgError> {
    let (w, h) = (img.width(), img.height());
    let (tx, ty) = (params.tiles_x, params.tiles_y);
    if tx == 0 || ty == 0 || w < tx || h < ty {
        return Err(ImgError::ImageTooSmall {
            width: w,
            height: h,
            op: "clahe",
        });
    }
    let pw = w.div_ceil(tx) * tx;
    let ph = h.div_ceil(ty) * ty;
    let padded = if (pw, ph) == (w, h) {
        img.clone()
    } else {
        pad_to_grid(img, pw, ph)
    };
    let (tw, th) = (pw / tx, ph / ty);
    let clip = absolute_clip(params.clip_limit, tw * th);

    // One LUT per tile.
    let mut luts = vec![[0u8; BINS]; tx * ty];
    for tj in 0..ty {
        for ti in 0..tx {
            let mut hist = [0u64; BINS];
            for y in tj * th..(tj + 1) * th {
                for x in ti * tw..(ti + 1) * tw {
                    hist[padded.get(x, y) as usize] += 1;
                }
            }
            let clipped = clip_redistribute(&hist, clip);
            luts[tj * tx + ti] = tile_lut(&clipped)?;
        }
    }

    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        let tyf = ((y as f64 + 0.5) / th as f64 - 0.5).clamp(0.0, (ty - 1) as f64);
        let j0 = tyf.floor() as usize;
        let j1 = (j0 + 1).min(ty - 1);
        let wy = tyf - j0 as f64;
        for x in 0..w {
            let txf = ((x as f64 + 0.5) / tw as f64 - 0.5).clamp(0.0, (tx - 1) as f64);
            let i0 = txf.floor() as usize;
            let i1 = (i0 + 1).min(tx - 1);
            let wx = txf - i0 as f64;
            let v = padded.get(x, y) as usize;
            let l00 = luts[j0 * tx + i0][v] as f64;
            let l01 = luts[j0 * tx + i1][v] as f64;
            let l10 = luts[j1 * tx + i0][v] as f64;
            let l11 = luts[j1 * tx + i1][v] as f64;
            let top = (1.0 - wx) * l00 + wx * l01;
            let bot = (1.0 - wx) * l10 + wx * l11;
            out.set(x, y, round_clamp_u8((1.0 - wy) * top + wy * bot));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clip_no_excess_unchanged() {
        let mut hist = [0u64; BINS];
        hist[17] = 500;
        assert_eq!(clip_redistribute(&hist, Some(500)), hist);
        assert_eq!(clip_redistribute(&hist, None), hist);
    }

    #[test]
    fn clip_redistribution_rule() {
        let mut hist = [0u64; BINS];
        hist[0] = 300;
        let out = clip_redistribute(&hist, Some(44));
        // excess 256 -> every bin +1
        assert_eq!(out[0], 45);
        assert!(out[1..].iter().all(|&b| b == 1));
        assert_eq!(out.iter().sum::<u64>(), 300);
    }

    #[test]
    fn lut_uniform_hist_is_near_identity() {
        let hist = [4u64; BINS];
        let lut = tile_lut(&hist).unwrap();
        for v in 0..BINS {
            let expected = round_clamp_u8(255.0 * (v as f64 + 1.0) / 256.0);
            assert_eq!(lut[v], expected);
        }
        assert_eq!(lut[255], 255);
    }

    #[test]
    fn lut_saturates_on_single_bin() {
        let mut hist = [0u64; BINS];
        hist[0] = 9;
        let lut = tile_lut(&hist).unwrap();
        assert!(lut.iter().all(|&v| v == 255));
    }

    #[test]
    fn lut_rejects_empty() {
        let hist = [0u64; BINS];
        assert!(matches!(tile_lut(&hist), Err(ImgError::EmptyHistogram)));
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = GrayImage::from_vec(16, 16, vec![93; 256]).unwrap();
        let out = clahe(&img, &ClaheParams::default()).unwrap();
        let first = out.get(0, 0);
        assert!(out.data().iter().all(|&p| p == first));
    }

    #[test]
    fn single_tile_uniform_histogram_fixed_point() {
        // 16x16 image with every value 0..255 exactly once: the CDF is
        // perfectly uniform, so equalization maps v -> LUT[v] = round(255(v+1)/256),
        // which differs from v by at most one LUT rounding step.
        let data: Vec<u8> = (0u16..256).map(|v| v as u8).collect();
        let img = GrayImage::from_vec(16, 16, data).unwrap();
        let params = ClaheParams {
            tiles_x: 1,
            tiles_y: 1,
            clip_limit: None,
        };
        let out = clahe(&img, &params).unwrap();
        for (o, i) in out.data().iter().zip(img.data()) {
            let expected = round_clamp_u8(255.0 * (*i as f64 + 1.0) / 256.0);
            assert_eq!(*o, expected);
            assert!((*o as i32 - *i as i32).abs() <= 1);
        }
    }

    #[test]
    fn too_small_rejected() {
        let img = GrayImage::new(4, 4);
        let params = ClaheParams {
            tiles_x: 8,
            tiles_y: 8,
            clip_limit: Some(2.0),
        };
        assert!(matches!(
            clahe(&img, &params),
            Err(ImgError::ImageTooSmall { .. })
        ));
    }

    proptest! {
        #[test]
        fn clip_conserves_total(hist in prop::array::uniform32(0u64..10_000), clip in 1u64..5_000) {
            let mut full = [0u64; BINS];
            full[..32].copy_from_slice(&hist);
            let out = clip_redistribute(&full, Some(clip));
            prop_assert_eq!(out.iter().sum::<u64>(), full.iter().sum::<u64>());
        }

        #[test]
        fn lut_is_monotone(hist in prop::array::uniform32(0u64..1_000)) {
            let mut full = [0u64; BINS];
            full[..32].copy_from_slice(&hist);
            full[200] += 1; // never empty
            let lut = tile_lut(&full).unwrap();
            for v in 1..BINS {
                prop_assert!(lut[v] >= lut[v - 1]);
            }
            prop_assert_eq!(lut[255], 255);
        }
    }
}
