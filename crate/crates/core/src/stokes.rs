//! Linear Stokes algebra over four-angle polarizer captures.
//!
//! The forward model used throughout is
//! `l(θ) = s0 + s1·cos2θ + s2·sin2θ`, for which
//! [`stokes_from_four_angles`] is an exact left inverse. Under this convention
//! a physical polarizer capture yields camera-referred Stokes scaled by `t/2`
//! relative to the scene, which leaves DoLP and AoLP untouched.

use num_traits::Float;

use crate::error::{param_err, shape_err, Error, Result};
use crate::image::{check_same, Density, FourAngleImage, GrayImage, Plane, RgbImage, StokesImage};

/// Tolerance used by physical-validity checks.
pub const VALIDITY_EPS: f64 = 1e-6;
/// Floor applied to `s0` before dividing in [`dolp`].
pub const DOLP_DIV_EPS: f64 = 1e-6;
/// Upper clamp for DoLP of non-physical pixels.
pub const DOLP_MAX: f64 = 10.0;

/// Per-pixel Stokes from the four polarizer intensities `[l0, l45, l90, l135]`.
#[inline]
pub fn stokes_from_angles<T: Float>(l: [T; 4]) -> [T; 3] {
    let two = T::one() + T::one();
    let four = two + two;
    [
        (l[0] + l[1] + l[2] + l[3]) / four,
        (l[0] - l[2]) / two,
        (l[1] - l[3]) / two,
    ]
}

/// Per-pixel forward model: intensities behind 0°, 45°, 90°, 135° polarizers.
#[inline]
pub fn angles_from_stokes<T: Float>(s: [T; 3]) -> [T; 4] {
    [s[0] + s[1], s[0] + s[2], s[0] - s[1], s[0] - s[2]]
}

/// Intensity behind a polarizer at an arbitrary angle (degrees).
#[inline]
pub fn intensity_at(s: [f64; 3], theta_deg: f64) -> f64 {
    let t = (2.0 * theta_deg).to_radians();
    s[0] + s[1] * t.cos() + s[2] * t.sin()
}

#[inline]
pub fn dolp_px(s: [f64; 3]) -> f64 {
    let lin = (s[1] * s[1] + s[2] * s[2]).sqrt();
    (lin / s[0].max(DOLP_DIV_EPS)).clamp(0.0, DOLP_MAX)
}

/// AoLP in degrees, in `[0, 180)`. `atan2(0, 0)` is taken as 0.
#[inline]
pub fn aolp_px(s1: f64, s2: f64) -> f64 {
    if s1 == 0.0 && s2 == 0.0 {
        return 0.0;
    }
    let deg = 0.5 * s2.atan2(s1).to_degrees();
    let a = deg.rem_euclid(180.0);
    // rem_euclid can round up to exactly 180 for tiny negative inputs
    if a >= 180.0 {
        0.0
    } else {
        a
    }
}

pub fn stokes_from_four_angles(l: &FourAngleImage) -> Result<StokesImage> {
    check_same(&l.l0, &l.l45)?;
    check_same(&l.l0, &l.l90)?;
    check_same(&l.l0, &l.l135)?;
    let (w, h) = l.dims();
    let n = w * h;
    let mut s0 = Vec::with_capacity(n);
    let mut s1 = Vec::with_capacity(n);
    let mut s2 = Vec::with_capacity(n);
    let (a, b, c, d) = (l.l0.data(), l.l45.data(), l.l90.data(), l.l135.data());
    for i in 0..n {
        let s = stokes_from_angles([a[i], b[i], c[i], d[i]]);
        s0.push(s[0]);
        s1.push(s[1]);
        s2.push(s[2]);
    }
    StokesImage::new(
        Plane::from_vec(w, h, s0)?,
        Plane::from_vec(w, h, s1)?,
        Plane::from_vec(w, h, s2)?,
    )
}

/// Forward model. Rejects non-physical input unless `allow_invalid` is set.
pub fn four_angles_from_stokes(s: &StokesImage, allow_invalid: bool) -> Result<FourAngleImage> {
    check_same(&s.s0, &s.s1)?;
    check_same(&s.s0, &s.s2)?;
    if !allow_invalid {
        let report = validate_physical(s);
        if report.violations > 0 {
            return Err(Error::Validation(format!(
                "{} pixels with DoLP above 1 (max excess {:.3e})",
                report.violations, report.max_excess
            )));
        }
    }
    let (w, h) = s.dims();
    let mut out = FourAngleImage::zeros(w, h, Density::Dense);
    for i in 0..w * h {
        let l = angles_from_stokes([s.s0.data()[i], s.s1.data()[i], s.s2.data()[i]]);
        for (plane, v) in out.planes_mut().into_iter().zip(l) {
            plane.data_mut()[i] = v;
        }
    }
    Ok(out)
}

pub fn dolp(s: &StokesImage) -> GrayImage {
    let (w, h) = s.dims();
    Plane::from_fn(w, h, |x, y| dolp_px(s.pixel(x, y)))
}

pub fn aolp(s: &StokesImage) -> GrayImage {
    s.s1
        .zip_map(&s.s2, aolp_px)
        .expect("StokesImage planes share dimensions")
}

/// RGB→gray projection weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LumaWeights(pub [f64; 3]);

impl LumaWeights {
    /// ITU-R BT.601.
    pub const BT601: LumaWeights = LumaWeights([0.299, 0.587, 0.114]);

    #[inline]
    pub fn apply(&self, rgb: [f64; 3]) -> f64 {
        self.0[0] * rgb[0] + self.0[1] * rgb[1] + self.0[2] * rgb[2]
    }
}

impl Default for LumaWeights {
    fn default() -> Self {
        LumaWeights::BT601
    }
}

pub fn rgb_to_gray(g: &RgbImage) -> GrayImage {
    rgb_to_gray_with(g, LumaWeights::BT601)
}

pub fn rgb_to_gray_with(g: &RgbImage, weights: LumaWeights) -> GrayImage {
    let (w, h) = g.dims();
    Plane::from_fn(w, h, |x, y| weights.apply(g.pixel(x, y)))
}

/// Unpolarized component from an RGB image: `gain · B · rgb`.
pub fn s0_from_rgb(g: &RgbImage, gain: f64) -> Result<GrayImage> {
    s0_from_rgb_with(g, gain, LumaWeights::BT601)
}

pub fn s0_from_rgb_with(g: &RgbImage, gain: f64, weights: LumaWeights) -> Result<GrayImage> {
    if !(gain > 0.0) {
        return param_err(format!("gain must be positive, got {gain}"));
    }
    Ok(rgb_to_gray_with(g, weights).scale(gain))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhysicalReport {
    pub violations: usize,
    /// Largest `|s12| - s0` among violating pixels (0 when none).
    pub max_excess: f64,
    pub negative_s0: usize,
}

impl PhysicalReport {
    pub fn is_valid(&self) -> bool {
        self.violations == 0 && self.negative_s0 == 0
    }
}

pub fn validate_physical(s: &StokesImage) -> PhysicalReport {
    let mut report = PhysicalReport::default();
    let (w, h) = s.dims();
    for y in 0..h {
        for x in 0..w {
            let [s0, s1, s2] = s.pixel(x, y);
            let excess = (s1 * s1 + s2 * s2).sqrt() - s0;
            if excess > VALIDITY_EPS {
                report.violations += 1;
                report.max_excess = report.max_excess.max(excess);
            }
            if s0 < 0.0 {
                report.negative_s0 += 1;
            }
        }
    }
    report
}

/// Check that a set of images share one size.
pub(crate) fn ensure_dims(what: &str, expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return shape_err(format!(
            "{what}: expected {}x{}, got {}x{}",
            expected.0, expected.1, got.0, got.1
        ));
    }
    Ok(())
}
