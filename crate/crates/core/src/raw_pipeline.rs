//! From a raw mosaic to the network-facing inputs.
//!
//! Sparse sensors are demosaiced at full resolution with a gradient-weighted
//! bilinear kernel (polarization sites count as missing colour samples) and
//! split into a zero-filled four-angle image plus mask. Conventional sensors
//! are binned: the four angles of each Quad Bayer cell average to the
//! unpolarized value, giving a Bayer mosaic at half resolution per axis.
//!
//! Borders use reflect-101 throughout.

use crate::error::{param_err, shape_err, Result};
use crate::image::{reflect101, Density, FourAngleImage, PixelMask, Plane, RgbImage, StokesImage};
use crate::sensor::{Angle, CfaOrder, Color, PixelClass, RawFrame, SensorKind, CLUSTER_OFFSET};
use crate::stokes::{stokes_from_angles, LumaWeights};

/// Window radius for quad-Bayer interpolation (same-colour samples are at
/// most 3 pixels away even where polarization clusters punch holes).
const QUAD_RADIUS: isize = 3;
/// Window radius for the half-resolution Bayer mosaic of binned data.
const BAYER_RADIUS: isize = 2;
/// Edge sensitivity of the gradient weighting, relative to local intensity.
const EDGE_GAIN: f64 = 4.0;
const EDGE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseCapture {
    pub rgb: RgbImage,
    pub angles: FourAngleImage,
    pub mask: PixelMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinnedCapture {
    /// Half-resolution Bayer mosaic of cell means (camera-referred, `t/2·s0`).
    pub mosaic: Plane,
    /// Demosaiced binned RGB at half resolution (camera-referred).
    pub rgb: RgbImage,
    /// Dense gray four-angle image at half resolution (camera-referred).
    pub angles: FourAngleImage,
}

#[inline]
fn tent(d: isize, radius: isize) -> f64 {
    (radius + 1 - d.abs()) as f64
}

/// Normalized-convolution interpolation of a colour mosaic.
///
/// `color_at` says which channel (if any) is sampled at a site. Sampled sites
/// pass through untouched; other sites average same-channel samples in a
/// `(2r+1)²` window with tent weights. With `edge_aware`, a first plain pass
/// gives a luminance estimate whose directional gradients down-weight samples
/// lying across an edge.
fn interpolate_mosaic(
    values: &Plane,
    color_at: &dyn Fn(usize, usize) -> Option<Color>,
    radius: isize,
    edge_aware: bool,
) -> RgbImage {
    let (w, h) = values.dims();
    let plain = interpolate_pass(values, color_at, radius, None);
    if !edge_aware {
        return plain;
    }
    let luma = Plane::from_fn(w, h, |x, y| {
        (plain.r.get(x, y) + plain.g.get(x, y) + plain.b.get(x, y)) / 3.0
    });
    let grads = Gradients::new(&luma);
    interpolate_pass(values, color_at, radius, Some(&grads))
}

struct Gradients {
    gh: Plane,
    gv: Plane,
    level: Plane,
}

impl Gradients {
    fn new(luma: &Plane) -> Self {
        let (w, h) = luma.dims();
        let at = |x: isize, y: isize| luma.get_reflect(x, y);
        let gh = Plane::from_fn(w, h, |x, y| {
            let (x, y) = (x as isize, y as isize);
            0.5 * (at(x + 1, y) - at(x - 1, y)).abs()
        });
        let gv = Plane::from_fn(w, h, |x, y| {
            let (x, y) = (x as isize, y as isize);
            0.5 * (at(x, y + 1) - at(x, y - 1)).abs()
        });
        Gradients {
            gh,
            gv,
            level: luma.clone(),
        }
    }
}

fn interpolate_pass(
    values: &Plane,
    color_at: &dyn Fn(usize, usize) -> Option<Color>,
    radius: isize,
    grads: Option<&Gradients>,
) -> RgbImage {
    let (w, h) = values.dims();
    let mut out = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
    for y in 0..h {
        for x in 0..w {
            let own = color_at(x, y);
            let (gh, gv, scale) = match grads {
                Some(g) => (
                    g.gh.get(x, y),
                    g.gv.get(x, y),
                    EDGE_GAIN / (g.level.get(x, y).abs() + EDGE_FLOOR),
                ),
                None => (0.0, 0.0, 0.0),
            };
            let mut num = [0.0f64; 3];
            let mut den = [0.0f64; 3];
            for dy in -radius..=radius {
                let sy = reflect101(y as isize + dy, h);
                for dx in -radius..=radius {
                    let sx = reflect101(x as isize + dx, w);
                    if let Some(c) = color_at(sx, sy) {
                        if Some(c) == own {
                            continue;
                        }
                        let mut wt = tent(dx, radius) * tent(dy, radius);
                        if grads.is_some() {
                            let cross = dx.abs() as f64 * gh + dy.abs() as f64 * gv;
                            wt /= 1.0 + scale * cross;
                        }
                        num[c.index()] += wt * values.get(sx, sy);
                        den[c.index()] += wt;
                    }
                }
            }
            for c in 0..3 {
                let v = if own.map(Color::index) == Some(c) {
                    values.get(x, y)
                } else if den[c] > 0.0 {
                    num[c] / den[c]
                } else {
                    0.0
                };
                out[c].set(x, y, v);
            }
        }
    }
    let [r, g, b] = out;
    RgbImage { r, g, b }
}

/// Split a sparse-sensor frame into full-resolution RGB, zero-filled
/// four-angle planes and the polarization mask.
pub fn demosaic_sparse(raw: &RawFrame) -> Result<SparseCapture> {
    let layout = &raw.layout;
    if layout.kind() != SensorKind::Sparse {
        return shape_err("demosaic_sparse needs a sparse-sensor frame");
    }
    if layout.dims() != raw.values.dims() {
        return shape_err("raw values do not match their layout");
    }
    let (w, h) = layout.dims();
    let color_at = |x: usize, y: usize| match layout.class(x, y) {
        PixelClass::Color(c) => Some(c),
        PixelClass::Polarized(_) => None,
    };
    let rgb = interpolate_mosaic(&raw.values, &color_at, QUAD_RADIUS, true);
    let mut angles = FourAngleImage::zeros(w, h, Density::Sparse);
    let mut mask = PixelMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if let PixelClass::Polarized(a) = layout.class(x, y) {
                angles.planes_mut()[a.index()].set(x, y, raw.values.get(x, y));
                mask.set(x, y, true);
            }
        }
    }
    Ok(SparseCapture { rgb, angles, mask })
}

/// Sparse Stokes image: Eq. `A·L` evaluated once per 2×2 polarization
/// cluster and written to all four cluster sites; zero elsewhere.
pub fn cluster_stokes(capture: &SparseCapture, tile: usize) -> Result<StokesImage> {
    let (w, h) = capture.mask.dims();
    if tile < 4 || w % tile != 0 || h % tile != 0 {
        return param_err(format!("tile {tile} does not divide {w}x{h}"));
    }
    let mut out = StokesImage::filled(w, h, [0.0; 3]);
    for ty in (0..h).step_by(tile) {
        for tx in (0..w).step_by(tile) {
            let (cx, cy) = (tx + CLUSTER_OFFSET, ty + CLUSTER_OFFSET);
            let mut l = [0.0; 4];
            for dy in 0..2 {
                for dx in 0..2 {
                    if !capture.mask.get(cx + dx, cy + dy) {
                        return shape_err("mask does not hold a 2x2 cluster at the tile offset");
                    }
                    for (k, plane) in capture.angles.planes().iter().enumerate() {
                        l[k] += plane.get(cx + dx, cy + dy);
                    }
                }
            }
            let s = stokes_from_angles(l);
            for dy in 0..2 {
                for dx in 0..2 {
                    for (k, plane) in out.planes_mut().into_iter().enumerate() {
                        plane.set(cx + dx, cy + dy, s[k]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Bin a conventional-sensor frame: each 2×2 Quad Bayer cell yields one
/// colour sample (mean of its four angles) and one four-angle sample.
pub fn bin_conventional(raw: &RawFrame) -> Result<BinnedCapture> {
    bin_conventional_with(raw, LumaWeights::BT601)
}

pub fn bin_conventional_with(raw: &RawFrame, luma: LumaWeights) -> Result<BinnedCapture> {
    let layout = &raw.layout;
    if layout.kind() != SensorKind::Conventional {
        return shape_err("bin_conventional needs a conventional-sensor frame");
    }
    let (w, h) = raw.values.dims();
    if layout.dims() != (w, h) {
        return shape_err("raw values do not match their layout");
    }
    if w % 4 != 0 || h % 4 != 0 {
        return param_err(format!("{w}x{h} is not divisible by 4"));
    }
    let (hw, hh) = (w / 2, h / 2);
    let cfa = layout.cfa();
    let mut mosaic = Plane::new(hw, hh);
    let mut per_angle = [Plane::new(hw, hh), Plane::new(hw, hh), Plane::new(hw, hh), Plane::new(hw, hh)];
    for cy in 0..hh {
        for cx in 0..hw {
            let mut sum = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    let (x, y) = (2 * cx + dx, 2 * cy + dy);
                    let v = raw.values.get(x, y);
                    sum += v;
                    let a = layout.class(x, y).angle().expect("conventional pixels are polarized");
                    per_angle[a.index()].set(cx, cy, v);
                }
            }
            mosaic.set(cx, cy, sum / 4.0);
        }
    }
    let bayer = |x: usize, y: usize| Some(cfa_cell(cfa, x, y));
    let rgb = interpolate_mosaic(&mosaic, &bayer, BAYER_RADIUS, false);
    let mut angles = FourAngleImage::zeros(hw, hh, Density::Dense);
    for a in Angle::ALL {
        let col = interpolate_mosaic(&per_angle[a.index()], &bayer, BAYER_RADIUS, false);
        let gray = Plane::from_fn(hw, hh, |x, y| luma.apply(col.pixel(x, y)));
        *angles.planes_mut()[a.index()] = gray;
    }
    Ok(BinnedCapture { mosaic, rgb, angles })
}

#[inline]
fn cfa_cell(cfa: CfaOrder, cx: usize, cy: usize) -> Color {
    cfa.cell_color(cx, cy)
}

/// Bilinear upsampling by an integer factor (half-pixel centres, i.e.
/// align-corners off), reflect-101 at the borders.
pub fn upsample_bilinear(p: &Plane, factor: usize) -> Plane {
    let (w, h) = p.dims();
    let f = factor as f64;
    let coord = |d: usize| -> (isize, f64) {
        let s = (d as f64 + 0.5) / f - 0.5;
        let i = s.floor();
        (i as isize, s - i)
    };
    Plane::from_fn(w * factor, h * factor, |x, y| {
        let (ix, fx) = coord(x);
        let (iy, fy) = coord(y);
        let v = |dx: isize, dy: isize| p.get(reflect101(ix + dx, w), reflect101(iy + dy, h));
        (1.0 - fy) * ((1.0 - fx) * v(0, 0) + fx * v(1, 0)) + fy * ((1.0 - fx) * v(0, 1) + fx * v(1, 1))
    })
}

/// Box-average downsampling by an integer factor.
pub fn downsample_mean(p: &Plane, factor: usize) -> Result<Plane> {
    let (w, h) = p.dims();
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return param_err(format!("{w}x{h} is not divisible by {factor}"));
    }
    let norm = (factor * factor) as f64;
    Ok(Plane::from_fn(w / factor, h / factor, |x, y| {
        let mut s = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                s += p.get(x * factor + dx, y * factor + dy);
            }
        }
        s / norm
    }))
}

pub fn upsample_rgb(img: &RgbImage, factor: usize) -> RgbImage {
    RgbImage {
        r: upsample_bilinear(&img.r, factor),
        g: upsample_bilinear(&img.g, factor),
        b: upsample_bilinear(&img.b, factor),
    }
}

pub fn upsample_stokes(img: &StokesImage, factor: usize) -> StokesImage {
    StokesImage {
        s0: upsample_bilinear(&img.s0, factor),
        s1: upsample_bilinear(&img.s1, factor),
        s2: upsample_bilinear(&img.s2, factor),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{build_layout, capture, PolarScene, SensorConfig};
    use crate::stokes::stokes_from_four_angles;
    use approx::assert_abs_diff_eq;

    fn noiseless() -> SensorConfig {
        SensorConfig {
            noise_factor: 0.0,
            ..Default::default()
        }
    }

    fn scene_from(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> [f64; 3]) -> PolarScene {
        let mk = |c: usize| {
            let p = |k: usize| Plane::from_fn(w, h, |x, y| f(x, y, c)[k]);
            StokesImage::new(p(0), p(1), p(2)).unwrap()
        };
        PolarScene::new(mk(0), mk(1), mk(2)).unwrap()
    }

    #[test]
    fn constant_gray_scene_demosaics_flat() {
        let layout = build_layout(SensorKind::Sparse, 32, 32, 1.0 / 16.0).unwrap();
        let scene = scene_from(32, 32, |_, _, _| [0.4, 0.0, 0.0]);
        let raw = capture(&scene, &layout, &noiseless()).unwrap();
        let cap = demosaic_sparse(&raw).unwrap();
        for c in cap.rgb.channels() {
            for &v in c.data() {
                assert_abs_diff_eq!(v, 0.4, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn sparse_outputs_follow_layout() {
        let layout = build_layout(SensorKind::Sparse, 64, 64, 1.0 / 16.0).unwrap();
        let scene = scene_from(64, 64, |x, y, c| [0.2 + 0.01 * (x + y + c) as f64, 0.05, 0.0]);
        let raw = capture(&scene, &layout, &SensorConfig::default()).unwrap();
        let cap = demosaic_sparse(&raw).unwrap();
        assert_eq!(cap.mask.count(), 64 * 64 / 16);
        for y in 0..64 {
            for x in 0..64 {
                let class = layout.class(x, y);
                assert_eq!(cap.mask.get(x, y), class.is_polarized());
                for a in Angle::ALL {
                    let v = cap.angles.planes()[a.index()].get(x, y);
                    if class != PixelClass::Polarized(a) {
                        assert_eq!(v, 0.0);
                    } else {
                        assert_eq!(v, raw.values.get(x, y));
                    }
                }
                if let PixelClass::Color(c) = class {
                    // sampled sites pass through
                    assert_eq!(cap.rgb.channel(c.index()).get(x, y), raw.values.get(x, y));
                }
            }
        }
    }

    #[test]
    fn demosaic_rejects_conventional() {
        let layout = build_layout(SensorKind::Conventional, 8, 8, 1.0).unwrap();
        let scene = scene_from(8, 8, |_, _, _| [1.0, 0.0, 0.0]);
        let raw = capture(&scene, &layout, &noiseless()).unwrap();
        assert!(demosaic_sparse(&raw).is_err());
        let layout = build_layout(SensorKind::Sparse, 8, 8, 0.25).unwrap();
        let raw = capture(&scene, &layout, &noiseless()).unwrap();
        assert!(bin_conventional(&raw).is_err());
    }

    #[test]
    fn cluster_stokes_recovers_uniform_polarization() {
        let layout = build_layout(SensorKind::Sparse, 16, 16, 1.0 / 16.0).unwrap();
        let scene = scene_from(16, 16, |_, _, _| [0.8, 0.2, -0.3]);
        let cfg = noiseless();
        let raw = capture(&scene, &layout, &cfg).unwrap();
        let cap = demosaic_sparse(&raw).unwrap();
        let s = cluster_stokes(&cap, layout.tile()).unwrap();
        let g = cfg.gain();
        for y in 0..16 {
            for x in 0..16 {
                let px = s.pixel(x, y);
                if cap.mask.get(x, y) {
                    assert_abs_diff_eq!(px[0], g * 0.8, epsilon = 1e-12);
                    assert_abs_diff_eq!(px[1], g * 0.2, epsilon = 1e-12);
                    assert_abs_diff_eq!(px[2], g * -0.3, epsilon = 1e-12);
                } else {
                    assert_eq!(px, [0.0; 3]);
                }
            }
        }
    }

    #[test]
    fn quad_average() {
        let layout = build_layout(SensorKind::Conventional, 8, 8, 1.0).unwrap();
        let mut values = Plane::new(8, 8);
        for (i, (dx, dy)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
            values.set(dx, dy, (i + 1) as f64);
        }
        let raw = RawFrame {
            values,
            layout,
            config: noiseless(),
        };
        let b = bin_conventional(&raw).unwrap();
        assert_eq!(b.mosaic.get(0, 0), 2.5);
        assert_eq!(b.rgb.dims(), (4, 4));
        assert_eq!(b.angles.dims(), (4, 4));
    }

    #[test]
    fn binned_unpolarized_is_half_t() {
        let layout = build_layout(SensorKind::Conventional, 16, 16, 1.0).unwrap();
        let scene = scene_from(16, 16, |_, _, c| [0.3 + 0.2 * c as f64, 0.0, 0.0]);
        let cfg = noiseless();
        let raw = capture(&scene, &layout, &cfg).unwrap();
        let b = bin_conventional(&raw).unwrap();
        for cy in 0..8 {
            for cx in 0..8 {
                let c = layout.cfa().cell_color(cx, cy).index();
                assert_abs_diff_eq!(b.mosaic.get(cx, cy), cfg.gain() * (0.3 + 0.2 * c as f64), epsilon = 1e-12);
                for k in 0..3 {
                    assert_abs_diff_eq!(b.rgb.channel(k).get(cx, cy), cfg.gain() * (0.3 + 0.2 * k as f64), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn noiseless_conventional_recovers_dolp_aolp() {
        let layout = build_layout(SensorKind::Conventional, 16, 16, 1.0).unwrap();
        let (p, a) = (0.6f64, 30f64.to_radians());
        let scene = scene_from(16, 16, |_, _, c| {
            let s0 = 0.2 + 0.3 * c as f64;
            [s0, s0 * p * (2.0 * a).cos(), s0 * p * (2.0 * a).sin()]
        });
        let raw = capture(&scene, &layout, &noiseless()).unwrap();
        let b = bin_conventional(&raw).unwrap();
        let s = stokes_from_four_angles(&b.angles).unwrap();
        for &d in crate::stokes::dolp(&s).data() {
            assert_abs_diff_eq!(d, p, epsilon = 1e-9);
        }
        for &v in crate::stokes::aolp(&s).data() {
            assert_abs_diff_eq!(v, 30.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn binning_commutes_with_scaling() {
        let layout = build_layout(SensorKind::Conventional, 16, 16, 1.0).unwrap();
        let scene = scene_from(16, 16, |x, y, c| [0.1 + 0.03 * ((x * 7 + y * 3 + c) % 11) as f64, 0.02, 0.01]);
        let raw = capture(&scene, &layout, &SensorConfig::default()).unwrap();
        let a = bin_conventional(&raw).unwrap();
        for k in [2.0, 0.5, 3.0] {
            let scaled = RawFrame {
                values: raw.values.scale(k),
                ..raw.clone()
            };
            let b = bin_conventional(&scaled).unwrap();
            for (pa, pb) in a.rgb.channels().iter().zip(b.rgb.channels()) {
                for (&u, &v) in pa.data().iter().zip(pb.data()) {
                    assert_abs_diff_eq!(k * u, v, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn bin_rejects_indivisible() {
        let layout = build_layout(SensorKind::Conventional, 8, 8, 1.0).unwrap();
        let raw = RawFrame {
            values: Plane::new(6, 8),
            layout,
            config: noiseless(),
        };
        assert!(bin_conventional(&raw).is_err());
    }

    #[test]
    fn upsample_checker_closed_form() {
        let (a, b) = (1.0, 3.0);
        let p = Plane::from_vec(2, 2, vec![a, b, b, a]).unwrap();
        let up = upsample_bilinear(&p, 2);
        // source coordinates -0.25, 0.25, 0.75, 1.25; reflect-101 maps -1 -> 1 and 2 -> 0
        let wts = |d: usize| -> [(usize, f64); 2] {
            match d {
                0 => [(0, 0.75), (1, 0.25)],
                1 => [(0, 0.75), (1, 0.25)],
                2 => [(0, 0.25), (1, 0.75)],
                _ => [(1, 0.75), (0, 0.25)],
            }
        };
        for y in 0..4 {
            for x in 0..4 {
                let mut e = 0.0;
                for (sy, wy) in wts(y) {
                    for (sx, wx) in wts(x) {
                        e += wy * wx * p.get(sx, sy);
                    }
                }
                assert_abs_diff_eq!(up.get(x, y), e, epsilon = 1e-12);
            }
        }
        // centre of the 2x2 block of inserted sites sits midway
        let mid = 0.25 * (up.get(1, 1) + up.get(2, 1) + up.get(1, 2) + up.get(2, 2));
        assert_abs_diff_eq!(mid, (a + b) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn upsample_constant_and_roundtrip() {
        let p = Plane::filled(5, 3, 0.7);
        let up = upsample_bilinear(&p, 4);
        assert!(up.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        let back = downsample_mean(&up, 4).unwrap();
        assert_eq!(back.dims(), (5, 3));
        assert!(back.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }
}
