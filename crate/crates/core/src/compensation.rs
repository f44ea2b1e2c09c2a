//! Classical sparse-to-dense interpolation of Stokes planes.
//!
//! Three baselines, each applied to every Stokes plane independently:
//! nearest site, separable bilinear over the lattice of mask sites, and an
//! RGB-guided joint bilateral filter. All of them reproduce the input at
//! mask sites and output convex combinations of masked values.

use crate::error::{param_err, shape_err, Result};
use crate::image::{PixelMask, Plane, RgbImage, StokesImage};
use crate::stokes::ensure_dims;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilateralParams {
    /// Spatial sigma in pixels.
    pub sigma_s: f64,
    /// Range sigma on the guide, normalized units.
    pub sigma_r: f64,
}

impl BilateralParams {
    /// Defaults tied to the polarization tile: `σ_s = tile/2`, `σ_r = 0.1`.
    pub fn for_tile(tile: usize) -> Self {
        BilateralParams {
            sigma_s: tile as f64 / 2.0,
            sigma_r: 0.1,
        }
    }

    pub fn radius(&self) -> usize {
        (3.0 * self.sigma_s).ceil() as usize
    }
}

fn check_inputs(sparse: &StokesImage, mask: &PixelMask) -> Result<Vec<(usize, usize)>> {
    ensure_dims("mask vs sparse stokes", sparse.dims(), mask.dims())?;
    let sites = mask.sites();
    if sites.is_empty() {
        return param_err("mask has no set pixels");
    }
    Ok(sites)
}

fn map_planes(sparse: &StokesImage, f: impl Fn(&Plane) -> Plane) -> StokesImage {
    StokesImage {
        s0: f(&sparse.s0),
        s1: f(&sparse.s1),
        s2: f(&sparse.s2),
    }
}

/// Index of the nearest site; ties go to the smaller row, then column.
fn nearest_site(sites: &[(usize, usize)], x: usize, y: usize) -> usize {
    let mut best = 0;
    let mut best_d = u64::MAX;
    for (i, &(sx, sy)) in sites.iter().enumerate() {
        let dx = sx.abs_diff(x) as u64;
        let dy = sy.abs_diff(y) as u64;
        let d = dx * dx + dy * dy;
        // sites are row-major, so strict < keeps the first (smallest row, column)
        if d < best_d {
            best_d = d;
            best = i;
            if d == 0 {
                break;
            }
        }
    }
    best
}

pub fn interp_nearest(sparse: &StokesImage, mask: &PixelMask) -> Result<StokesImage> {
    let sites = check_inputs(sparse, mask)?;
    let (w, h) = sparse.dims();
    let mut idx = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            idx.push(nearest_site(&sites, x, y));
        }
    }
    Ok(map_planes(sparse, |p| {
        Plane::from_fn(w, h, |x, y| {
            let (sx, sy) = sites[idx[y * w + x]];
            p.get(sx, sy)
        })
    }))
}

/// Rows and columns of a rectilinear lattice, if the mask is one.
fn lattice_axes(mask: &PixelMask) -> Option<(Vec<usize>, Vec<usize>)> {
    let (w, h) = mask.dims();
    let rows: Vec<usize> = (0..h).filter(|&y| (0..w).any(|x| mask.get(x, y))).collect();
    let cols: Vec<usize> = (0..w).filter(|&x| (0..h).any(|y| mask.get(x, y))).collect();
    let mut row_on = vec![false; h];
    let mut col_on = vec![false; w];
    rows.iter().for_each(|&y| row_on[y] = true);
    cols.iter().for_each(|&x| col_on[x] = true);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) != (row_on[y] && col_on[x]) {
                return None;
            }
        }
    }
    Some((rows, cols))
}

/// Bracketing lattice indices and the weight of the upper one.
fn bracket(axis: &[usize], v: usize) -> (usize, usize, f64) {
    let pos = axis.partition_point(|&a| a <= v);
    if pos == 0 {
        return (0, 0, 0.0);
    }
    let lo = pos - 1;
    if axis[lo] == v || pos == axis.len() {
        return (lo, lo, 0.0);
    }
    let (a, b) = (axis[lo], axis[pos]);
    (lo, pos, (v - a) as f64 / (b - a) as f64)
}

/// Separable bilinear interpolation over the rectilinear lattice of mask
/// sites, clamping to the outermost sites at the borders. Masks that are not
/// a lattice fall back to inverse-distance-squared weighting of the four
/// nearest sites.
pub fn interp_bilinear_scattered(sparse: &StokesImage, mask: &PixelMask) -> Result<StokesImage> {
    let sites = check_inputs(sparse, mask)?;
    let (w, h) = sparse.dims();
    match lattice_axes(mask) {
        Some((rows, cols)) => {
            let bx: Vec<_> = (0..w).map(|x| bracket(&cols, x)).collect();
            let by: Vec<_> = (0..h).map(|y| bracket(&rows, y)).collect();
            Ok(map_planes(sparse, |p| {
                Plane::from_fn(w, h, |x, y| {
                    let (c0, c1, fx) = bx[x];
                    let (r0, r1, fy) = by[y];
                    let v = |c: usize, r: usize| p.get(cols[c], rows[r]);
                    (1.0 - fy) * ((1.0 - fx) * v(c0, r0) + fx * v(c1, r0))
                        + fy * ((1.0 - fx) * v(c0, r1) + fx * v(c1, r1))
                })
            }))
        }
        None => Ok(idw4(sparse, mask, &sites)),
    }
}

/// [`interp_bilinear_scattered`] for a single plane.
pub fn interp_bilinear_plane(values: &Plane, mask: &PixelMask) -> Result<Plane> {
    let (w, h) = values.dims();
    let zero = Plane::new(w, h);
    let s = StokesImage {
        s0: values.clone(),
        s1: zero.clone(),
        s2: zero,
    };
    Ok(interp_bilinear_scattered(&s, mask)?.s0)
}

fn idw4(sparse: &StokesImage, mask: &PixelMask, sites: &[(usize, usize)]) -> StokesImage {
    let (w, h) = sparse.dims();
    let k = sites.len().min(4);
    let mut picks: Vec<Vec<(usize, f64)>> = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                picks.push(Vec::new());
                continue;
            }
            let mut d: Vec<(u64, usize)> = sites
                .iter()
                .enumerate()
                .map(|(i, &(sx, sy))| {
                    let dx = sx.abs_diff(x) as u64;
                    let dy = sy.abs_diff(y) as u64;
                    (dx * dx + dy * dy, i)
                })
                .collect();
            d.sort_unstable();
            picks.push(d[..k].iter().map(|&(d2, i)| (i, 1.0 / d2 as f64)).collect());
        }
    }
    map_planes(sparse, |p| {
        Plane::from_fn(w, h, |x, y| {
            let ws = &picks[y * w + x];
            if ws.is_empty() {
                return p.get(x, y);
            }
            let (mut num, mut den) = (0.0, 0.0);
            for &(i, wt) in ws {
                let (sx, sy) = sites[i];
                num += wt * p.get(sx, sy);
                den += wt;
            }
            num / den
        })
    })
}

#[inline]
fn guide_dist2(guide: &RgbImage, a: (usize, usize), b: (usize, usize)) -> f64 {
    let (p, q) = (guide.pixel(a.0, a.1), guide.pixel(b.0, b.1));
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
}

/// RGB-guided joint bilateral interpolation.
///
/// Off-mask pixels get `Σ w(p,q)·v(q) / Σ w` over mask sites `q` in a square
/// window of radius `ceil(3σ_s)`, with
/// `w = exp(-|p-q|²/2σ_s²) · exp(-|guide(p)-guide(q)|²/2σ_r²)`. Mask sites
/// keep their value; pixels with no weight fall back to the nearest site.
/// Window sites are visited in row-major order.
pub fn joint_bilateral(
    sparse: &StokesImage,
    mask: &PixelMask,
    guide: &RgbImage,
    params: BilateralParams,
) -> Result<StokesImage> {
    if !(params.sigma_s > 0.0) || !(params.sigma_r > 0.0) {
        return param_err(format!(
            "bilateral sigmas must be positive, got σ_s={} σ_r={}",
            params.sigma_s, params.sigma_r
        ));
    }
    let sites = check_inputs(sparse, mask)?;
    if guide.dims() != sparse.dims() {
        return shape_err("guide image does not match sparse stokes");
    }
    let (w, h) = sparse.dims();
    let r = params.radius();
    let inv_s = 1.0 / (2.0 * params.sigma_s * params.sigma_s);
    let inv_r = 1.0 / (2.0 * params.sigma_r * params.sigma_r);
    let mut out = StokesImage::filled(w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                for (o, s) in out.planes_mut().into_iter().zip(sparse.planes()) {
                    o.set(x, y, s.get(x, y));
                }
                continue;
            }
            let mut num = [0.0f64; 3];
            let mut den = 0.0f64;
            for qy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for qx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    if !mask.get(qx, qy) {
                        continue;
                    }
                    let dx = qx as f64 - x as f64;
                    let dy = qy as f64 - y as f64;
                    let wt = (-(dx * dx + dy * dy) * inv_s - guide_dist2(guide, (x, y), (qx, qy)) * inv_r).exp();
                    for (k, s) in sparse.planes().into_iter().enumerate() {
                        num[k] += wt * s.get(qx, qy);
                    }
                    den += wt;
                }
            }
            let vals = if den > 0.0 {
                [num[0] / den, num[1] / den, num[2] / den]
            } else {
                let (sx, sy) = sites[nearest_site(&sites, x, y)];
                sparse.pixel(sx, sy)
            };
            for (o, v) in out.planes_mut().into_iter().zip(vals) {
                o.set(x, y, v);
            }
        }
    }
    Ok(out)
}
