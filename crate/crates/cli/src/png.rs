//! 8-bit PNG previews, gamma 2.2. Metrics never read these back.

use anyhow::{Context, Result};
use image::{GrayImage, Luma, Rgb, RgbImage as Png};
use polarsim::stokes::dolp;
use polarsim::{Plane, RgbImage, StokesImage};
use std::path::{Path, PathBuf};

pub fn encode(v: f64) -> u8 {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    (v.powf(1.0 / 2.2) * 255.0).round() as u8
}

pub fn rgb_png(img: &RgbImage) -> Png {
    let (w, h) = img.dims();
    Png::from_fn(w as u32, h as u32, |x, y| {
        let p = img.pixel(x as usize, y as usize);
        Rgb([encode(p[0]), encode(p[1]), encode(p[2])])
    })
}

fn gray_png(p: &Plane) -> GrayImage {
    let (w, h) = p.dims();
    GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([encode(p.get(x as usize, y as usize))]))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.png"))
}

/// Writes `path` (RGB) and `<stem>_dolp.png` beside it.
pub fn export(path: &Path, rgb: &RgbImage, stokes: &StokesImage) -> Result<()> {
    rgb_png(rgb).save(path).with_context(|| format!("writing {}", path.display()))?;
    let d = with_suffix(path, "_dolp");
    gray_png(&dolp(stokes)).save(&d).with_context(|| format!("writing {}", d.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_encoding() {
        assert_eq!(encode(0.0), 0);
        assert_eq!(encode(1.0), 255);
        assert_eq!(encode(2.0), 255);
        assert_eq!(encode(-1.0), 0);
        assert_eq!(encode(f64::NAN), 0);
        // 0.5^(1/2.2) = 0.7297
        assert_eq!(encode(0.5), 186);
    }
}
