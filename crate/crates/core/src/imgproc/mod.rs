//! Classical enhancement algorithms for 8-bit grayscale radiographs.
//!
//! Everything here is deterministic and pure: identity, Laplacian
//! sharpening, CLAHE, and ordered compositions of them. All rounding is
//! half-away-from-zero so results are bit-reproducible across
//! implementations.

mod clahe;
mod gray;
mod pipeline;
mod sharpen;

pub use clahe::{clahe, clip_redistribute, tile_lut, ClaheParams};
pub use gray::GrayImage;
pub use pipeline::{apply_pipeline, PipelineSpec, PipelineStep};
pub use sharpen::laplacian_sharpen;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("image {width}x{height} too small for {op}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        op: &'static str,
    },
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("invalid pipeline spec: {0}")]
    BadPipeline(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png error: {0}")]
    Png(#[from] image::ImageError),
}

/// Round half away from zero, then clamp into `[0, 255]`.
pub(crate) fn round_clamp_u8(v: f64) -> u8 {
    let r = if v >= 0.0 {
        (v + 0.5).floor()
    } else {
        (v - 0.5).ceil()
    };
    r.clamp(0.0, 255.0) as u8
}

/// Identity mapping: the input frame passed through untouched.
pub fn identity(img: &GrayImage) -> GrayImage {
    img.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_half_away_from_zero() {
        assert_eq!(round_clamp_u8(0.5), 1);
        assert_eq!(round_clamp_u8(1.5), 2);
        assert_eq!(round_clamp_u8(2.4), 2);
        assert_eq!(round_clamp_u8(-0.4), 0);
        assert_eq!(round_clamp_u8(300.0), 255);
        assert_eq!(round_clamp_u8(-3.0), 0);
    }

    #[test]
    fn identity_is_byte_exact() {
        let zero = GrayImage::new(4, 4);
        assert_eq!(identity(&zero).data(), zero.data());

        let ramp: Vec<u8> = (0u16..256).map(|v| v as u8).collect();
        let img = GrayImage::from_vec(16, 16, ramp.clone()).unwrap();
        assert_eq!(identity(&img).data(), &ramp[..]);

        let rnd = GrayImage::random(32, 32, 1);
        assert_eq!(identity(&rnd), rnd);
    }
}
