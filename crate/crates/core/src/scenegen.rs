//! Procedural polarized scenes with known ground truth.
//!
//! Each scene is a label map of regions. Regions carry a base colour with
//! fine texture (high-frequency content lives in S0) and a smooth DoLP/AoLP
//! field (S1, S2 are piecewise smooth, with jumps on region boundaries). The
//! `correlation` knob blends the polarization fields between the RGB region
//! map and an independent one, so the guide can be made less informative.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{param_err, Result};
use crate::image::{FourAngleImage, Plane, RgbImage, StokesImage};
use crate::sensor::PolarScene;
use crate::stokes::{four_angles_from_stokes, LumaWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SceneKind {
    Gradient,
    Checker,
    Shapes,
    Perlin,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [SceneKind::Gradient, SceneKind::Checker, SceneKind::Shapes, SceneKind::Perlin];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Gradient => "gradient",
            SceneKind::Checker => "checker",
            SceneKind::Shapes => "shapes",
            SceneKind::Perlin => "perlin",
        }
    }
}

impl std::str::FromStr for SceneKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| crate::Error::Param(format!("unknown scene kind '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    /// Upper bound of the DoLP field.
    pub dolp_max: f64,
    /// 1 aligns polarization boundaries with RGB boundaries; 0 decouples them.
    pub correlation: f64,
    /// Relative amplitude of the fine RGB texture.
    pub texture: f64,
    /// Fixed DoLP value overriding the generated field.
    pub dolp_override: Option<f64>,
    /// Fixed AoLP (degrees) overriding the generated field.
    pub aolp_override: Option<f64>,
    pub luma: LumaWeights,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            width: 64,
            height: 64,
            dolp_max: 0.8,
            correlation: 1.0,
            texture: 0.15,
            dolp_override: None,
            aolp_override: None,
            luma: LumaWeights::BT601,
        }
    }
}

impl SceneParams {
    pub fn sized(width: usize, height: usize) -> Self {
        SceneParams {
            width,
            height,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return param_err(format!("scene must be at least 16x16, got {}x{}", self.width, self.height));
        }
        if !(0.0..=1.0).contains(&self.dolp_max) {
            return param_err(format!("dolp_max must be in [0,1], got {}", self.dolp_max));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return param_err(format!("correlation must be in [0,1], got {}", self.correlation));
        }
        if !(0.0..=1.0).contains(&self.texture) {
            return param_err(format!("texture must be in [0,1], got {}", self.texture));
        }
        if let Some(d) = self.dolp_override {
            if !(0.0..=1.0).contains(&d) {
                return param_err(format!("dolp override must be in [0,1], got {d}"));
            }
        }
        Ok(())
    }
}

/// Ground truth for one scene, scene-referred.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub rgb: RgbImage,
    /// Gray (luma-weighted) Stokes, `S0 = B·rgb`.
    pub stokes: StokesImage,
    pub angles: FourAngleImage,
    pub dolp: Plane,
    /// Degrees in `[0, 180)`.
    pub aolp: Plane,
}

impl Scene {
    /// Per-channel Stokes sharing the scene's DoLP/AoLP fields.
    pub fn polar(&self) -> PolarScene {
        let (w, h) = self.rgb.dims();
        let chan = |c: &Plane| {
            let s1 = Plane::from_fn(w, h, |x, y| {
                c.get(x, y) * self.dolp.get(x, y) * (2.0 * self.aolp.get(x, y)).to_radians().cos()
            });
            let s2 = Plane::from_fn(w, h, |x, y| {
                c.get(x, y) * self.dolp.get(x, y) * (2.0 * self.aolp.get(x, y)).to_radians().sin()
            });
            StokesImage {
                s0: c.clone(),
                s1,
                s2,
            }
        };
        PolarScene {
            channels: [chan(&self.rgb.r), chan(&self.rgb.g), chan(&self.rgb.b)],
        }
    }

    /// Build a scene from RGB and gray Stokes (as stored on disk).
    pub fn from_rgb_stokes(rgb: RgbImage, stokes: StokesImage) -> Result<Scene> {
        crate::stokes::ensure_dims("stokes vs rgb", rgb.dims(), stokes.dims())?;
        let dolp = crate::stokes::dolp(&stokes);
        let aolp = crate::stokes::aolp(&stokes);
        let angles = four_angles_from_stokes(&stokes, false)?;
        Ok(Scene {
            rgb,
            stokes,
            angles,
            dolp,
            aolp,
        })
    }
}

/// Smooth lattice value noise in `[0, 1]`.
struct ValueNoise {
    cell: f64,
    gw: usize,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: f64) -> Self {
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let grid = (0..gw * gh).map(|_| rng.gen::<f64>()).collect();
        ValueNoise { cell, gw, grid }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (fx, fy) = (x / self.cell, y / self.cell);
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (s(fx - ix as f64), s(fy - iy as f64));
        let g = |i: usize, j: usize| self.grid[j * self.gw + i];
        let top = g(ix, iy) * (1.0 - tx) + g(ix + 1, iy) * tx;
        let bot = g(ix, iy + 1) * (1.0 - tx) + g(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

struct Region {
    color: [f64; 3],
    /// Colour gradient direction and strength (per pixel).
    slope: [f64; 2],
    dolp: f64,
    aolp: f64,
    stripes: Option<(f64, f64, f64)>,
}

fn random_region(rng: &mut ChaCha8Rng, dolp_lo: f64, dolp_hi: f64) -> Region {
    let color = [rng.gen_range(0.08..0.95), rng.gen_range(0.08..0.95), rng.gen_range(0.08..0.95)];
    let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mag = rng.gen_range(0.0..0.006);
    let stripes = rng.gen_bool(0.5).then(|| {
        (
            rng.gen_range(0.0..std::f64::consts::PI),
            rng.gen_range(6.0..14.0),
            rng.gen_range(0.0..std::f64::consts::TAU),
        )
    });
    Region {
        color,
        slope: [mag * ang.cos(), mag * ang.sin()],
        dolp: rng.gen_range(dolp_lo..dolp_hi.max(dolp_lo + 1e-9)),
        aolp: rng.gen_range(0.0..180.0),
        stripes,
    }
}

/// Region label per pixel plus the region table.
struct Layout {
    labels: Vec<usize>,
    regions: Vec<Region>,
}

fn region_layout(kind: SceneKind, rng: &mut ChaCha8Rng, w: usize, h: usize, dolp_max: f64) -> Layout {
    let mut labels = vec![0usize; w * h];
    let mut regions = Vec::new();
    match kind {
        SceneKind::Gradient => {
            let n = rng.gen_range(2..=3);
            for _ in 0..n {
                regions.push(random_region(rng, 0.0, dolp_max));
            }
            // n-1 random lines partition the plane; label = number of lines a pixel is "above"
            let lines: Vec<(f64, f64, f64)> = (1..n)
                .map(|_| {
                    let a: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                    let (cx, cy) = (rng.gen_range(0.25..0.75) * w as f64, rng.gen_range(0.25..0.75) * h as f64);
                    (a.cos(), a.sin(), -(a.cos() * cx + a.sin() * cy))
                })
                .collect();
            for y in 0..h {
                for x in 0..w {
                    let above = lines
                        .iter()
                        .filter(|(a, b, c)| a * x as f64 + b * y as f64 + c > 0.0)
                        .count();
                    labels[y * w + x] = above.min(n - 1);
                }
            }
        }
        SceneKind::Checker => {
            let cell = rng.gen_range(6..=16);
            let (cw, ch) = (w.div_ceil(cell), h.div_ceil(cell));
            for _ in 0..cw * ch {
                regions.push(random_region(rng, 0.0, dolp_max));
            }
            for y in 0..h {
                for x in 0..w {
                    labels[y * w + x] = (y / cell) * cw + x / cell;
                }
            }
        }
        SceneKind::Shapes => {
            regions.push(random_region(rng, 0.0, 0.3 * dolp_max));
            let n = rng.gen_range(3..=6);
            for i in 1..=n {
                regions.push(random_region(rng, 0.1 * dolp_max, dolp_max));
                let (cx, cy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
                let rad = rng.gen_range(0.08..0.3) * w.min(h) as f64;
                let circle = rng.gen_bool(0.5);
                let aspect = rng.gen_range(0.5..1.5);
                for y in 0..h {
                    for x in 0..w {
                        let (dx, dy) = (x as f64 + 0.5 - cx, (y as f64 + 0.5 - cy) * aspect);
                        let inside = if circle {
                            dx * dx + dy * dy <= rad * rad
                        } else {
                            dx.abs() <= rad && dy.abs() <= rad
                        };
                        if inside {
                            labels[y * w + x] = i;
                        }
                    }
                }
            }
        }
        SceneKind::Perlin => {
            let levels = 3;
            for _ in 0..levels {
                regions.push(random_region(rng, 0.0, dolp_max));
            }
            let cell = rng.gen_range(12.0..24.0);
            let noise = ValueNoise::new(rng, w, h, cell);
            for y in 0..h {
                for x in 0..w {
                    let v = noise.at(x as f64, y as f64);
                    labels[y * w + x] = ((v * levels as f64) as usize).min(levels - 1);
                }
            }
        }
    }
    Layout { labels, regions }
}

/// Generate one scene. Deterministic in `(kind, params, seed)`.
pub fn generate(kind: SceneKind, params: &SceneParams, seed: u64) -> Result<Scene> {
    params.validate()?;
    let (w, h) = (params.width, params.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce_9e11);
    let main = region_layout(kind, &mut rng, w, h, params.dolp_max);
    let alt = region_layout(kind, &mut rng, w, h, params.dolp_max);
    let fine = ValueNoise::new(&mut rng, w, h, 5.0);
    let smooth_d = ValueNoise::new(&mut rng, w, h, 24.0);
    let smooth_a = ValueNoise::new(&mut rng, w, h, 24.0);

    let mut rgb = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
    let mut dolp = Plane::new(w, h);
    let mut aolp = Plane::new(w, h);
    let c = params.correlation;
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let reg = &main.regions[main.labels[y * w + x]];
            let mut tex = (fine.at(xf, yf) - 0.5) * 2.0;
            if let Some((theta, period, phase)) = reg.stripes {
                let u = xf * theta.cos() + yf * theta.sin();
                tex = 0.5 * tex + (std::f64::consts::TAU * u / period + phase).sin();
            }
            let shade = 1.0 + reg.slope[0] * (xf - w as f64 / 2.0) + reg.slope[1] * (yf - h as f64 / 2.0);
            for (k, plane) in rgb.iter_mut().enumerate() {
                let v = reg.color[k] * shade * (1.0 + params.texture * tex);
                plane.set(x, y, v.clamp(0.02, 1.0));
            }

            let other = &alt.regions[alt.labels[y * w + x]];
            let wobble_d = 1.0 + 0.3 * (smooth_d.at(xf, yf) - 0.5);
            let wobble_a = 20.0 * (smooth_a.at(xf, yf) - 0.5);
            let d = (c * reg.dolp + (1.0 - c) * other.dolp) * wobble_d;
            dolp.set(x, y, params.dolp_override.unwrap_or(d.clamp(0.0, params.dolp_max)));
            // blend orientations on the doubled-angle circle
            let (a1, a2) = ((2.0 * reg.aolp).to_radians(), (2.0 * other.aolp).to_radians());
            let (vx, vy) = (c * a1.cos() + (1.0 - c) * a2.cos(), c * a1.sin() + (1.0 - c) * a2.sin());
            let base = if vx == 0.0 && vy == 0.0 { 0.0 } else { 0.5 * vy.atan2(vx).to_degrees() };
            let a = params.aolp_override.unwrap_or(base + wobble_a).rem_euclid(180.0);
            aolp.set(x, y, if a >= 180.0 { 0.0 } else { a });
        }
    }
    let [r, g, b] = rgb;
    let rgb = RgbImage { r, g, b };
    let s0 = crate::stokes::rgb_to_gray_with(&rgb, params.luma);
    let s1 = Plane::from_fn(w, h, |x, y| s0.get(x, y) * dolp.get(x, y) * (2.0 * aolp.get(x, y)).to_radians().cos());
    let s2 = Plane::from_fn(w, h, |x, y| s0.get(x, y) * dolp.get(x, y) * (2.0 * aolp.get(x, y)).to_radians().sin());
    let stokes = StokesImage { s0, s1, s2 };
    // tiny rounding excesses are tolerated by the validity epsilon
    let angles = four_angles_from_stokes(&stokes, false)?;
    Ok(Scene {
        rgb,
        stokes,
        angles,
        dolp,
        aolp,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneSpec {
    pub id: usize,
    pub kind: SceneKind,
    pub seed: u64,
}

impl SceneSpec {
    pub fn render(&self, params: &SceneParams) -> Result<Scene> {
        generate(self.kind, params, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub params: SceneParams,
    pub kinds: Vec<SceneKind>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            params: SceneParams::default(),
            kinds: SceneKind::ALL.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub train: Vec<SceneSpec>,
    pub val: Vec<SceneSpec>,
    pub test: Vec<SceneSpec>,
}

impl Manifest {
    pub fn all(&self) -> impl Iterator<Item = &SceneSpec> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Split `n` procedural scenes into train/val/test. Val and test sizes are
/// `round(n·ratio)` (at least one each); train takes the rest.
pub fn make_dataset(n: usize, split: (f64, f64, f64), config: &DatasetConfig) -> Result<Manifest> {
    if n < 3 {
        return param_err(format!("need at least 3 scenes, got {n}"));
    }
    let (tr, va, te) = split;
    let total = tr + va + te;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) || (total - 1.0).abs() > 1e-9 {
        return param_err(format!("split ratios must be positive and sum to 1, got {split:?}"));
    }
    if config.kinds.is_empty() {
        return param_err("dataset needs at least one scene kind");
    }
    let n_val = ((n as f64 * va).round() as usize).max(1);
    let n_test = ((n as f64 * te).round() as usize).max(1);
    if n_val + n_test >= n {
        return param_err(format!("split {split:?} leaves no training scenes out of {n}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut specs: Vec<SceneSpec> = (0..n)
        .map(|id| SceneSpec {
            id,
            kind: config.kinds[id % config.kinds.len()],
            seed: rng.gen(),
        })
        .collect();
    specs.shuffle(&mut rng);
    let test = specs.split_off(n - n_test);
    let val = specs.split_off(n - n_test - n_val);
    Ok(Manifest {
        train: specs,
        val,
        test,
    })
}
