//! Rendering helpers: confusion overlays and heatmap color ramps.

use image::{Rgb, RgbImage};

use crate::gradcam::Heatmap;
use crate::imgproc::GrayImage;

pub const TP_COLOR: [u8; 3] = [0, 0, 255];
pub const FP_COLOR: [u8; 3] = [0, 255, 0];
pub const FN_COLOR: [u8; 3] = [255, 0, 0];

/// Overlay one region's prediction on the frame: blue where predicted
/// and true, green where predicted only, red where missed, grayscale
/// elsewhere. `pred` and `gt` are 0/1 rasters matching the image.
pub fn overlay(image: &GrayImage, pred: &[u8], gt: &[u8]) -> RgbImage {
    let (w, h) = (image.width(), image.height());
    assert_eq!(pred.len(), w * h);
    assert_eq!(gt.len(), w * h);
    let mut out = RgbImage::new(w as u32, h as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        let color = match (pred[i] != 0, gt[i] != 0) {
            (true, true) => TP_COLOR,
            (true, false) => FP_COLOR,
            (false, true) => FN_COLOR,
            (false, false) => {
                let v = image.data()[i];
                [v, v, v]
            }
        };
        *px = Rgb(color);
    }
    out
}

/// Cold-to-hot ramp: blue at 0 through green to red at 1.
fn ramp(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let quantize = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    if v < 0.5 {
        let t = v * 2.0;
        [0, quantize(t), quantize(1.0 - t)]
    } else {
        let t = (v - 0.5) * 2.0;
        [quantize(t), quantize(1.0 - t), 0]
    }
}

/// Render a heatmap with red at the highest values.
pub fn heatmap_image(map: &Heatmap) -> RgbImage {
    let mut out = RgbImage::new(map.width as u32, map.height as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        *px = Rgb(ramp(map.data[i]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::confusion_counts;

    #[test]
    fn overlay_census_matches_confusion_counts() {
        let img = GrayImage::random(8, 8, 3);
        let pred: Vec<u8> = (0..64).map(|i| u8::from(i % 3 == 0)).collect();
        let gt: Vec<u8> = (0..64).map(|i| u8::from(i % 2 == 0)).collect();
        let (tp, fp, tn, fneg) = confusion_counts(&pred, &gt);
        let out = overlay(&img, &pred, &gt);
        let count = |c: [u8; 3]| out.pixels().filter(|p| p.0 == c).count() as u64;
        assert_eq!(count(TP_COLOR), tp);
        assert_eq!(count(FP_COLOR), fp);
        assert_eq!(count(FN_COLOR), fneg);
        // background pixels are grayscale (r == g == b)
        let gray = out
            .pixels()
            .filter(|p| p.0[0] == p.0[1] && p.0[1] == p.0[2])
            .filter(|p| ![TP_COLOR, FP_COLOR, FN_COLOR].contains(&p.0))
            .count() as u64;
        assert!(gray <= tn);
        assert_eq!(tp + fp + tn + fneg, 64);
    }

    #[test]
    fn perfect_prediction_has_no_green_or_red() {
        let img = GrayImage::random(4, 4, 1);
        let gt: Vec<u8> = (0..16).map(|i| u8::from(i < 8)).collect();
        let out = overlay(&img, &gt, &gt);
        assert!(out.pixels().all(|p| p.0 != FP_COLOR && p.0 != FN_COLOR));
        assert_eq!(out.pixels().filter(|p| p.0 == TP_COLOR).count(), 8);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), [0, 0, 255]);
        assert_eq!(ramp(1.0), [255, 0, 0]);
        assert_eq!(ramp(0.5), [0, 255, 0]);
    }

    #[test]
    fn heatmap_render_shape() {
        let map = Heatmap {
            width: 3,
            height: 2,
            data: vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.1],
        };
        let img = heatmap_image(&map);
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.get_pixel(1, 1).0, [255, 0, 0]);
    }
}
