use std::io::Cursor;
use std::path::Path;

use super::{Result, ScopeError};
use crate::tensor::Tensor;

fn to_rgb8(t: &Tensor) -> Result<image::RgbImage> {
    if t.channels() != 3 {
        return Err(ScopeError::SizeMismatch(format!("expected 3 channels, got {}", t.channels())));
    }
    let bytes: Vec<u8> = t.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Ok(image::RgbImage::from_raw(t.width() as u32, t.height() as u32, bytes).expect("buffer sized to image"))
}

fn from_rgb8(img: image::RgbImage) -> Result<Tensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Tensor::new(h, w, 3, data).map_err(|e| ScopeError::Image(e.to_string()))
}

/// Saves an RGB tensor in `[0, 1]` as 8-bit PNG.
pub fn save_rgb_png(t: &Tensor, path: &Path) -> Result<()> {
    to_rgb8(t)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ScopeError::Image(e.to_string()))
}

pub fn load_rgb_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| ScopeError::Image(format!("{}: {e}", path.display())))?;
    from_rgb8(img.into_rgb8())
}

pub fn encode_rgb_png(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    to_rgb8(t)?
        .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| ScopeError::Image(e.to_string()))?;
    Ok(out)
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| ScopeError::Image(e.to_string()))?;
    from_rgb8(img.into_rgb8())
}

/// Box-filter downscale by an integer factor; partial edge blocks average
/// the pixels they contain.
pub fn downscale(t: &Tensor, factor: usize) -> Tensor {
    if factor <= 1 {
        return t.clone();
    }
    let (h, w, ch) = (t.height().div_ceil(factor), t.width().div_ceil(factor), t.channels());
    Tensor::from_fn(h, w, ch, |y, x, c| {
        let (y1, x1) = (((y + 1) * factor).min(t.height()), ((x + 1) * factor).min(t.width()));
        let mut s = 0.0f64;
        for yy in y * factor..y1 {
            for xx in x * factor..x1 {
                s += t.get(yy, xx, c) as f64;
            }
        }
        (s / ((y1 - y * factor) * (x1 - x * factor)) as f64) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let t = Tensor::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) * 3 + c) as f32 / 255.0);
        let back = decode_rgb_png(&encode_rgb_png(&t).unwrap()).unwrap();
        assert!(t.max_abs_diff(&back).unwrap() < 1e-6);
        assert!(encode_rgb_png(&Tensor::zeros(2, 2, 1)).is_err());
    }

    #[test]
    fn downscale_averages_blocks() {
        let t = Tensor::from_fn(4, 5, 1, |y, x, _| (y * 5 + x) as f32);
        let d = downscale(&t, 2);
        assert_eq!((d.height(), d.width()), (2, 3));
        assert_eq!(d.get(0, 0, 0), 3.0);
        assert_eq!(d.get(1, 2, 0), 16.5);
    }
}
