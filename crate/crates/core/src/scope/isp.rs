use super::capture::reflect;
use super::{Result, ScopeError};
use crate::tensor::Tensor;

/// Bilinear RGGB demosaic with reflect-101 borders. Reflection keeps the
/// Bayer phase, so a constant-color mosaic reconstructs exactly everywhere.
pub fn debayer(raw: &Tensor) -> Result<Tensor> {
    let (h, w) = (raw.height(), raw.width());
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(ScopeError::OddDimensions { height: h, width: w });
    }
    if raw.channels() != 1 {
        return Err(ScopeError::SizeMismatch(format!("mosaic must have 1 channel, got {}", raw.channels())));
    }
    let at = |y: isize, x: isize| raw.get(reflect(y, h), reflect(x, w), 0);
    let mut out = Tensor::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            let here = at(yi, xi);
            let cross = (at(yi - 1, xi) + at(yi + 1, xi) + at(yi, xi - 1) + at(yi, xi + 1)) / 4.0;
            let diag =
                (at(yi - 1, xi - 1) + at(yi - 1, xi + 1) + at(yi + 1, xi - 1) + at(yi + 1, xi + 1)) / 4.0;
            let horiz = (at(yi, xi - 1) + at(yi, xi + 1)) / 2.0;
            let vert = (at(yi - 1, xi) + at(yi + 1, xi)) / 2.0;
            let rgb = match (y % 2, x % 2) {
                (0, 0) => [here, cross, diag],
                (1, 1) => [diag, cross, here],
                (0, _) => [horiz, here, vert],
                _ => [vert, here, horiz],
            };
            for (c, v) in rgb.into_iter().enumerate() {
                out.set(y, x, c, v);
            }
        }
    }
    Ok(out)
}

/// `clamp(rgb * gain_map * wb_gains, 0, 1)`. The gain map has one channel
/// (shared) or three.
pub fn flat_field_white_balance(rgb: &Tensor, gain_map: &Tensor, wb_gains: [f32; 3]) -> Result<Tensor> {
    if rgb.channels() != 3 {
        return Err(ScopeError::SizeMismatch(format!("expected RGB, got {} channels", rgb.channels())));
    }
    if (gain_map.height(), gain_map.width()) != (rgb.height(), rgb.width())
        || !matches!(gain_map.channels(), 1 | 3)
    {
        return Err(ScopeError::SizeMismatch(format!(
            "gain map {}x{}x{} vs image {}x{}",
            gain_map.height(),
            gain_map.width(),
            gain_map.channels(),
            rgb.height(),
            rgb.width()
        )));
    }
    let shared = gain_map.channels() == 1;
    Ok(Tensor::from_fn(rgb.height(), rgb.width(), 3, |y, x, c| {
        let g = gain_map.get(y, x, if shared { 0 } else { c });
        (rgb.get(y, x, c) * g * wb_gains[c]).clamp(0.0, 1.0)
    }))
}
