use super::{round_clamp_u8, GrayImage, ImgError};

/// Laplacian sharpening: `y(i,j) = 5x(i,j) - [x(i+1,j) + x(i-1,j) + x(i,j+1) + x(i,j-1)]`,
/// with replicate padding at the borders. Computed in floating point,
/// clamped to `[0,255]`, rounded half-away-from-zero.
pub fn laplacian_sharpen(img: &GrayImage) -> Result<GrayImage, ImgError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(ImgError::ImageTooSmall {
            width: w,
            height: h,
            op: "laplacian_sharpen",
        });
    }
    let mut out = GrayImage::new(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let c = img.get_clamped(x, y) as f64;
            let n = img.get_clamped(x, y - 1) as f64
                + img.get_clamped(x, y + 1) as f64
                + img.get_clamped(x - 1, y) as f64
                + img.get_clamped(x + 1, y) as f64;
            out.set(x as usize, y as usize, round_clamp_u8(5.0 * c - n));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_fixed_point() {
        let img = GrayImage::from_vec(5, 5, vec![77; 25]).unwrap();
        let out = laplacian_sharpen(&img).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn single_spike() {
        let mut img = GrayImage::new(3, 3);
        img.set(1, 1, 100);
        let out = laplacian_sharpen(&img).unwrap();
        // center: 5*100 = 500 -> 255; 4-neighbors: -100 -> 0
        assert_eq!(out.get(1, 1), 255);
        assert_eq!(out.get(0, 1), 0);
        assert_eq!(out.get(2, 1), 0);
        assert_eq!(out.get(1, 0), 0);
        assert_eq!(out.get(1, 2), 0);
        // corners see the spike only through replicate padding, which
        // does not reach them: 5*0 - 0 = 0
        assert_eq!(out.get(0, 0), 0);
    }

    #[test]
    fn too_small_rejected() {
        let img = GrayImage::new(2, 8);
        assert!(matches!(
            laplacian_sharpen(&img),
            Err(ImgError::ImageTooSmall { .. })
        ));
    }
}
