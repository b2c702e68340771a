use super::RasterImage;
use crate::error::{Error, Result};

/// Bilinear resampling by `factor`; output dimensions are
/// `round(width * factor) x round(height * factor)`.
pub fn resample(image: &RasterImage, factor: f64) -> Result<RasterImage> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::config(format!("resample factor must be positive, got {factor}")));
    }
    let w = (image.width() as f64 * factor).round() as usize;
    let h = (image.height() as f64 * factor).round() as usize;
    resample_to(image, w, h)
}

/// Source sample positions for one axis: integer base, neighbor and blend weight.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            // pixel centers line up at half-integer positions
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resampling to explicit output dimensions.
pub fn resample_to(image: &RasterImage, width: usize, height: usize) -> Result<RasterImage> {
    if width == 0 || height == 0 {
        return Err(Error::dim(format!(
            "resampling {}x{} would produce an empty {width}x{height} image",
            image.width(),
            image.height()
        )));
    }
    if image.dims() == (width, height) {
        return Ok(image.clone());
    }
    let cols = axis_taps(image.width(), width);
    let rows = axis_taps(image.height(), height);
    let mut out = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let top = lerp(image.get(x0, y0), image.get(x1, y0), fx);
            let bottom = lerp(image.get(x0, y1), image.get(x1, y1), fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    Ok(RasterImage::from_raw(width, height, out))
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}
