//! Planar float image containers shared by every stage of the pipeline.
//!
//! All planes are row-major `f64`. Multi-plane images check on construction
//! that their planes agree in size, so downstream code can index freely.

use crate::error::{shape_err, Result};

/// A single row-major float plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return shape_err(format!(
                "plane {}x{} needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            ));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with reflect-101 border handling (`-1 -> 1`, `w -> w-2`).
    #[inline]
    pub fn get_reflect(&self, x: isize, y: isize) -> f64 {
        self.get(reflect101(x, self.width), reflect101(y, self.height))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Result<Plane> {
        check_same(self, other)?;
        Ok(Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, k: f64) -> Plane {
        self.map(|v| v * k)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Reflect-101 index mapping, valid for any offset when `n >= 2`.
#[inline]
pub fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

pub(crate) fn check_same(a: &Plane, b: &Plane) -> Result<()> {
    if a.dims() != b.dims() {
        return shape_err(format!(
            "plane {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        ));
    }
    Ok(())
}

/// Single-channel float image (luma, DoLP, AoLP, ...).
pub type GrayImage = Plane;

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub r: Plane,
    pub g: Plane,
    pub b: Plane,
}

impl RgbImage {
    pub fn new(r: Plane, g: Plane, b: Plane) -> Result<Self> {
        check_same(&r, &g)?;
        check_same(&r, &b)?;
        Ok(RgbImage { r, g, b })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        RgbImage {
            r: Plane::filled(width, height, rgb[0]),
            g: Plane::filled(width, height, rgb[1]),
            b: Plane::filled(width, height, rgb[2]),
        }
    }

    pub fn width(&self) -> usize {
        self.r.width()
    }

    pub fn height(&self) -> usize {
        self.r.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.r.dims()
    }

    pub fn channels(&self) -> [&Plane; 3] {
        [&self.r, &self.g, &self.b]
    }

    pub fn channel(&self, c: usize) -> &Plane {
        match c {
            0 => &self.r,
            1 => &self.g,
            _ => &self.b,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        [self.r.get(x, y), self.g.get(x, y), self.b.get(x, y)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> RgbImage {
        RgbImage {
            r: self.r.map(f),
            g: self.g.map(f),
            b: self.b.map(f),
        }
    }

    pub fn clamp01(&self) -> RgbImage {
        self.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Binary mask of polarization sites.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize) -> Self {
        PixelMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = PixelMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Set sites in row-major order.
    pub fn sites(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    pub fn to_plane(&self) -> Plane {
        Plane::from_fn(self.width, self.height, |x, y| {
            if self.get(x, y) {
                1.0
            } else {
                0.0
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Density {
    Dense,
    /// Zero everywhere except at polarization sites.
    Sparse,
}

/// Intensities behind polarizers at 0°, 45°, 90° and 135°.
#[derive(Clone, Debug, PartialEq)]
pub struct FourAngleImage {
    pub l0: Plane,
    pub l45: Plane,
    pub l90: Plane,
    pub l135: Plane,
    pub density: Density,
}

impl FourAngleImage {
    pub fn new(l0: Plane, l45: Plane, l90: Plane, l135: Plane, density: Density) -> Result<Self> {
        check_same(&l0, &l45)?;
        check_same(&l0, &l90)?;
        check_same(&l0, &l135)?;
        Ok(FourAngleImage {
            l0,
            l45,
            l90,
            l135,
            density,
        })
    }

    pub fn zeros(width: usize, height: usize, density: Density) -> Self {
        let p = Plane::new(width, height);
        FourAngleImage {
            l0: p.clone(),
            l45: p.clone(),
            l90: p.clone(),
            l135: p,
            density,
        }
    }

    pub fn width(&self) -> usize {
        self.l0.width()
    }

    pub fn height(&self) -> usize {
        self.l0.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.l0.dims()
    }

    pub fn planes(&self) -> [&Plane; 4] {
        [&self.l0, &self.l45, &self.l90, &self.l135]
    }

    pub fn planes_mut(&mut self) -> [&mut Plane; 4] {
        [&mut self.l0, &mut self.l45, &mut self.l90, &mut self.l135]
    }
}

/// Linear Stokes components S0 (total), S1 (0°/90°) and S2 (45°/135°).
#[derive(Clone, Debug, PartialEq)]
pub struct StokesImage {
    pub s0: Plane,
    pub s1: Plane,
    pub s2: Plane,
}

impl StokesImage {
    pub fn new(s0: Plane, s1: Plane, s2: Plane) -> Result<Self> {
        check_same(&s0, &s1)?;
        check_same(&s0, &s2)?;
        Ok(StokesImage { s0, s1, s2 })
    }

    pub fn filled(width: usize, height: usize, s: [f64; 3]) -> Self {
        StokesImage {
            s0: Plane::filled(width, height, s[0]),
            s1: Plane::filled(width, height, s[1]),
            s2: Plane::filled(width, height, s[2]),
        }
    }

    pub fn width(&self) -> usize {
        self.s0.width()
    }

    pub fn height(&self) -> usize {
        self.s0.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.s0.dims()
    }

    pub fn planes(&self) -> [&Plane; 3] {
        [&self.s0, &self.s1, &self.s2]
    }

    pub fn planes_mut(&mut self) -> [&mut Plane; 3] {
        [&mut self.s0, &mut self.s1, &mut self.s2]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        [self.s0.get(x, y), self.s1.get(x, y), self.s2.get(x, y)]
    }

    pub fn scale(&self, k: f64) -> StokesImage {
        StokesImage {
            s0: self.s0.scale(k),
            s1: self.s1.scale(k),
            s2: self.s2.scale(k),
        }
    }
}
