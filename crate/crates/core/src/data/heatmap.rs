//! Colour rendering of single-channel maps.
//!
//! The ramp is cividis: dark blue for the minimum through gray to yellow for
//! the maximum, with monotonically increasing lightness. Values between the
//! stops are interpolated linearly in RGB.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const RAMP: [[u8; 3]; 5] = [
    [0, 34, 78],
    [65, 77, 108],
    [124, 123, 120],
    [187, 175, 112],
    [254, 232, 56],
];

/// Colour written for every pixel of a constant map.
pub const DEGENERATE_GRAY: [u8; 3] = [128, 128, 128];

pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    std::array::from_fn(|k| (a[k] as f64 + f * (b[k] as f64 - a[k] as f64)).round() as u8)
}

/// Min-max normalises `values` (`h × w`, row-major) onto the ramp. Returns
/// the image and whether the input had zero dynamic range.
pub fn render_heatmap(values: &[f32], h: usize, w: usize) -> Result<(RgbImage, bool)> {
    if values.len() != h * w || h == 0 || w == 0 {
        return Err(shape_err(
            "heatmap",
            format!("{} values for {h}x{w}", values.len()),
        ));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "heatmap value {i} is not finite"
        )));
    }
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let degenerate = hi <= lo;
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        if degenerate {
            Rgb(DEGENERATE_GRAY)
        } else {
            let v = values[y as usize * w + x as usize] as f64;
            Rgb(ramp_color((v - lo) / (hi - lo)))
        }
    });
    Ok((img, degenerate))
}

/// Writes a `[H,W]` (or any `[1,..,1,H,W]`) tensor as a PNG heatmap.
/// Returns `true` when the map was constant.
pub fn export_heatmap(t: &Tensor<f32>, path: &Path) -> Result<bool> {
    let s = t.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(shape_err(
            "export_heatmap",
            format!("expected [H,W], got {s:?}"),
        ));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let (img, degenerate) = render_heatmap(t.data(), h, w)?;
    if degenerate {
        log::warn!("{}: constant map, written as mid-gray", path.display());
    }
    img.save(path)?;
    Ok(degenerate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn luminance(c: [u8; 3]) -> f64 {
        0.2126 * c[0] as f64 + 0.7152 * c[1] as f64 + 0.0722 * c[2] as f64
    }

    #[test]
    fn endpoints_blue_and_yellow() {
        let lo = ramp_color(0.0);
        let hi = ramp_color(1.0);
        assert!(lo[2] > lo[0] && lo[2] > lo[1]);
        assert!(hi[0] > hi[2] && hi[1] > hi[2]);
    }

    #[test]
    fn monotone_ramp_gives_monotone_colors() {
        let v: Vec<f32> = (0..64).map(|i| i as f32).collect();
        let (img, degenerate) = render_heatmap(&v, 1, 64).unwrap();
        assert!(!degenerate);
        let lum: Vec<f64> = img.pixels().map(|p| luminance(p.0)).collect();
        assert!(lum.windows(2).all(|w| w[1] >= w[0]));
        assert!(lum[63] > lum[0]);
    }

    #[test]
    fn constant_is_degenerate_gray() {
        let (img, degenerate) = render_heatmap(&[0.3; 6], 2, 3).unwrap();
        assert!(degenerate);
        assert!(img.pixels().all(|p| p.0 == DEGENERATE_GRAY));
    }

    #[test]
    fn rejects_non_finite_and_bad_shape() {
        assert!(render_heatmap(&[0.0, f32::NAN], 1, 2).is_err());
        assert!(render_heatmap(&[0.0; 3], 2, 2).is_err());
    }
}
