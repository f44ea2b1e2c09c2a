//! End-to-end reconstruction: raw frame → dense Stokes + RGB estimate, for
//! every compensation method, plus evaluation against scene ground truth.
//!
//! Estimates are camera-referred (polarization pixels see `t/2` of the
//! scene); [`evaluate`] divides by the gain so reports are in scene units.

use crate::compensation::{interp_bilinear_plane, interp_bilinear_scattered, interp_nearest, joint_bilateral, BilateralParams};
use crate::error::{param_err, Error, Result};
use crate::image::{Density, FourAngleImage, PixelMask, RgbImage, StokesImage};
use crate::metrics::QualityReport;
use crate::nn::sna::{mask_tensor, Sna, SnaInput, SnaTarget};
use crate::nn::tensor::Tensor;
use crate::nn::train::Sample;
use crate::raw_pipeline::{bin_conventional_with, cluster_stokes, demosaic_sparse, upsample_bilinear, upsample_rgb, upsample_stokes};
use crate::scenegen::Scene;
use crate::sensor::{build_layout_with, capture, PixelClass, RawFrame, SensorConfig, SensorKind};
use crate::stokes::{s0_from_rgb_with, stokes_from_four_angles};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Nearest,
    Bilinear,
    JointBilateral,
    ToySna,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Nearest, Method::Bilinear, Method::JointBilateral, Method::ToySna];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nearest => "nearest",
            Method::Bilinear => "bilinear",
            Method::JointBilateral => "joint-bilateral",
            Method::ToySna => "toy-sna",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Param(format!("unknown method '{s}'")))
    }
}

/// Everything a compensation method may consume, at full resolution.
///
/// For a sparse sensor: demosaiced RGB, per-cluster Stokes and raw angle
/// samples under the mask, and their lattice-bilinear interpolations. For a
/// conventional sensor the binned data are upsampled ×2, every pixel counts
/// as measured, and RGB is divided by the gain to undo the polarizers.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub kind: SensorKind,
    pub gain: f64,
    pub config: SensorConfig,
    /// Spacing of polarization samples (tile side, or 2 for binned data).
    pub tile: usize,
    pub rgb: RgbImage,
    pub sparse_stokes: StokesImage,
    pub sparse_angles: FourAngleImage,
    pub mask: PixelMask,
    pub prior_stokes: StokesImage,
    pub prior_angles: FourAngleImage,
}

pub fn prepare(raw: &RawFrame) -> Result<Prepared> {
    let config = raw.config.clone();
    let gain = config.gain();
    match raw.layout.kind() {
        SensorKind::Sparse => {
            let tile = raw.layout.tile();
            let cap = demosaic_sparse(raw)?;
            let sparse_stokes = cluster_stokes(&cap, tile)?;
            let prior_stokes = interp_bilinear_scattered(&sparse_stokes, &cap.mask)?;
            let (w, h) = raw.layout.dims();
            let mut prior_angles = FourAngleImage::zeros(w, h, Density::Dense);
            for (k, (dst, src)) in prior_angles.planes_mut().into_iter().zip(cap.angles.planes()).enumerate() {
                let m = PixelMask::from_fn(w, h, |x, y| {
                    matches!(raw.layout.class(x, y), PixelClass::Polarized(a) if a.index() == k)
                });
                *dst = interp_bilinear_plane(src, &m)?;
            }
            Ok(Prepared {
                kind: SensorKind::Sparse,
                gain,
                config,
                tile,
                rgb: cap.rgb,
                sparse_stokes,
                sparse_angles: cap.angles,
                mask: cap.mask,
                prior_stokes,
                prior_angles,
            })
        }
        SensorKind::Conventional => {
            let b = bin_conventional_with(raw, config.luma)?;
            let rgb = upsample_rgb(&b.rgb, 2).map(|v| v / gain);
            let stokes = upsample_stokes(&stokes_from_four_angles(&b.angles)?, 2);
            let [a0, a45, a90, a135] = b.angles.planes().map(|p| upsample_bilinear(p, 2));
            let angles = FourAngleImage::new(a0, a45, a90, a135, Density::Dense)?;
            let (w, h) = rgb.dims();
            Ok(Prepared {
                kind: SensorKind::Conventional,
                gain,
                config,
                tile: 2,
                rgb,
                sparse_stokes: stokes.clone(),
                sparse_angles: angles.clone(),
                mask: PixelMask::from_fn(w, h, |_, _| true),
                prior_stokes: stokes,
                prior_angles: angles,
            })
        }
    }
}

impl Prepared {
    pub fn dims(&self) -> (usize, usize) {
        self.rgb.dims()
    }

    pub fn sna_input(&self) -> Result<SnaInput> {
        Ok(SnaInput {
            rgb: Tensor::from_planes(&self.rgb.channels())?,
            sparse_stokes: Tensor::from_planes(&self.sparse_stokes.planes())?,
            sparse_angles: Tensor::from_planes(&self.sparse_angles.planes())?,
            mask: mask_tensor(&self.mask),
            prior_stokes: Tensor::from_planes(&self.prior_stokes.planes())?,
            prior_angles: Tensor::from_planes(&self.prior_angles.planes())?,
        })
    }
}

/// Camera-referred Stokes and scene-referred RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub stokes: StokesImage,
    pub rgb: RgbImage,
}

/// Run one compensation method. Classical methods take `S0 = g·B·RGB` and
/// densify only `S1, S2`.
pub fn reconstruct(
    prep: &Prepared,
    method: Method,
    model: Option<&Sna>,
    bilateral: Option<BilateralParams>,
) -> Result<Estimate> {
    let dense = match method {
        Method::Nearest => interp_nearest(&prep.sparse_stokes, &prep.mask)?,
        Method::Bilinear => prep.prior_stokes.clone(),
        Method::JointBilateral => {
            let params = bilateral.unwrap_or_else(|| BilateralParams::for_tile(prep.tile));
            joint_bilateral(&prep.sparse_stokes, &prep.mask, &prep.rgb, params)?
        }
        Method::ToySna => {
            let Some(model) = model else {
                return param_err("toy-sna needs a trained model");
            };
            let p = model.predict(&prep.sna_input()?)?;
            return Ok(Estimate {
                stokes: p.stokes,
                rgb: p.rgb,
            });
        }
    };
    let s0 = s0_from_rgb_with(&prep.rgb, prep.gain, prep.config.luma)?;
    Ok(Estimate {
        stokes: StokesImage {
            s0,
            s1: dense.s1,
            s2: dense.s2,
        },
        rgb: prep.rgb.clone(),
    })
}

/// Quality of an estimate in scene units.
pub fn evaluate(est: &Estimate, scene: &Scene, gain: f64) -> Result<QualityReport> {
    if !(gain > 0.0) {
        return param_err(format!("gain must be positive, got {gain}"));
    }
    QualityReport::evaluate(&est.stokes.scale(1.0 / gain), &est.rgb, &scene.stokes, &scene.rgb)
}

/// Build the layout for `kind` at the scene size and capture it.
pub fn simulate(scene: &Scene, kind: SensorKind, config: &SensorConfig) -> Result<RawFrame> {
    let (w, h) = scene.rgb.dims();
    let layout = build_layout_with(kind, h, w, config.ratio, config.cfa)?;
    capture(&scene.polar(), &layout, config)
}

/// Training pair for the network: inputs from the capture, targets from
/// the scene (Stokes scaled to camera units).
pub fn make_sample(scene: &Scene, prep: &Prepared) -> Result<Sample> {
    Ok(Sample {
        input: prep.sna_input()?,
        target: SnaTarget::new(&scene.stokes.scale(prep.gain), &scene.rgb)?,
    })
}
