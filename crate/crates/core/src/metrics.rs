//! Evaluation metrics: Stokes RMSE, DoLP PSNR, AoLP angular error, RGB PSNR
//! and SSIM.
//!
//! Reductions use fixed-order pairwise summation so results do not depend on
//! how callers partition work.

use crate::error::{param_err, shape_err, Result};
use crate::image::{Plane, RgbImage, StokesImage};
use crate::stokes::{aolp_px, dolp_px, rgb_to_gray};

/// Pairwise (cascade) summation with a fixed split order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if v.len() <= LEAF {
        let mut s = 0.0;
        for &x in v {
            s += x;
        }
        return s;
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StokesChannels {
    All,
    S12Only,
}

pub fn rmse(a: &StokesImage, b: &StokesImage, channels: StokesChannels) -> Result<f64> {
    if a.dims() != b.dims() {
        return shape_err("rmse operands differ in size");
    }
    let range = match channels {
        StokesChannels::All => 0..3,
        StokesChannels::S12Only => 1..3,
    };
    let mut sq = Vec::with_capacity(a.s0.len() * range.len());
    for k in range {
        let (pa, pb) = (a.planes()[k], b.planes()[k]);
        sq.extend(pa.data().iter().zip(pb.data()).map(|(x, y)| (x - y) * (x - y)));
    }
    Ok(mean(&sq).sqrt())
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return shape_err(format!("mse operands have {} and {} samples", a.len(), b.len()));
    }
    let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
    Ok(mean(&sq))
}

/// `10·log10(peak²/MSE)`; identical inputs give `+∞`.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

pub fn psnr_plane(a: &Plane, b: &Plane, peak: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return shape_err("psnr operands differ in size");
    }
    psnr(a.data(), b.data(), peak)
}

/// PSNR over all three colour channels jointly.
pub fn psnr_rgb(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return shape_err("psnr operands differ in size");
    }
    let flat = |img: &RgbImage| -> Vec<f64> {
        img.channels().iter().flat_map(|p| p.data().iter().copied()).collect()
    };
    psnr(&flat(a), &flat(b), peak)
}

fn dolp_clamped(s: &StokesImage) -> Vec<f64> {
    let (w, h) = s.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(dolp_px(s.pixel(x, y)).clamp(0.0, 1.0));
        }
    }
    out
}

/// PSNR of DoLP maps (peak 1), both clamped to `[0, 1]` first.
pub fn dolp_psnr(est: &StokesImage, gt: &StokesImage) -> Result<f64> {
    if est.dims() != gt.dims() {
        return shape_err("dolp_psnr operands differ in size");
    }
    psnr(&dolp_clamped(est), &dolp_clamped(gt), 1.0)
}

/// Angular distance between two AoLP values (degrees), folded into `[0, 90]`.
#[inline]
pub fn aolp_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Mean AoLP error in degrees. With `dolp_gate`, only pixels whose
/// ground-truth DoLP exceeds the threshold count.
pub fn aolp_error(est: &StokesImage, gt: &StokesImage, dolp_gate: Option<f64>) -> Result<f64> {
    if est.dims() != gt.dims() {
        return shape_err("aolp_error operands differ in size");
    }
    let (w, h) = est.dims();
    let mut errs = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let g = gt.pixel(x, y);
            if let Some(th) = dolp_gate {
                if dolp_px(g) <= th {
                    continue;
                }
            }
            let e = est.pixel(x, y);
            errs.push(aolp_distance(aolp_px(e[1], e[2]), aolp_px(g[1], g[2])));
        }
    }
    if errs.is_empty() {
        return param_err("no pixel passes the DoLP gate");
    }
    Ok(mean(&errs))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-region separable filtering.
fn filter_valid(p: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * p[y * w + x + i];
            }
            tmp[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean SSIM between two single-channel images with dynamic range `range`.
pub fn ssim_plane(a: &Plane, b: &Plane, range: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return shape_err("ssim operands differ in size");
    }
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return param_err(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"));
    }
    let k = ssim_kernel();
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(x, w, h, &k);
    let my = filter_valid(y, w, h, &k);
    let sxx = filter_valid(&xx, w, h, &k);
    let syy = filter_valid(&yy, w, h, &k);
    let sxy = filter_valid(&xy, w, h, &k);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let map: Vec<f64> = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .collect();
    Ok(mean(&map))
}

/// SSIM of two RGB images, computed on their BT.601 luma with `L = 1`.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return shape_err("ssim operands differ in size");
    }
    ssim_plane(&rgb_to_gray(a), &rgb_to_gray(b), 1.0)
}

/// One row of the evaluation table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityReport {
    pub rmse_s012: f64,
    pub rmse_s12: f64,
    pub dolp_psnr_db: f64,
    pub aolp_err_deg: f64,
    pub rgb_psnr_db: f64,
    pub rgb_ssim: f64,
}

impl QualityReport {
    pub fn evaluate(
        est_stokes: &StokesImage,
        est_rgb: &RgbImage,
        gt_stokes: &StokesImage,
        gt_rgb: &RgbImage,
    ) -> Result<Self> {
        Ok(QualityReport {
            rmse_s012: rmse(est_stokes, gt_stokes, StokesChannels::All)?,
            rmse_s12: rmse(est_stokes, gt_stokes, StokesChannels::S12Only)?,
            dolp_psnr_db: dolp_psnr(est_stokes, gt_stokes)?,
            aolp_err_deg: aolp_error(est_stokes, gt_stokes, None)?,
            rgb_psnr_db: psnr_rgb(est_rgb, gt_rgb, 1.0)?,
            rgb_ssim: ssim(est_rgb, gt_rgb)?,
        })
    }

    /// Per-image reports averaged field by field.
    pub fn mean_of(reports: &[QualityReport]) -> Option<QualityReport> {
        if reports.is_empty() {
            return None;
        }
        let f = |g: fn(&QualityReport) -> f64| mean(&reports.iter().map(g).collect::<Vec<_>>());
        Some(QualityReport {
            rmse_s012: f(|r| r.rmse_s012),
            rmse_s12: f(|r| r.rmse_s12),
            dolp_psnr_db: f(|r| r.dolp_psnr_db),
            aolp_err_deg: f(|r| r.aolp_err_deg),
            rgb_psnr_db: f(|r| r.rgb_psnr_db),
            rgb_ssim: f(|r| r.rgb_ssim),
        })
    }
}
