//! The composed model: optional RGB refinement followed by the
//! two-branch compensation network, in one of three output modes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{Pcn, PcnOutput, PcnShape, Rgbrn, SkipConfig};
use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{param_err, Error, Result};
use crate::image::{PixelMask, Plane, RgbImage, StokesImage};
use crate::stokes::{s0_from_rgb_with, LumaWeights};

/// Which quantity the compensation network predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Dense four-angle intensities, converted to Stokes by `A` afterwards.
    FourAngle,
    /// All three Stokes components.
    StokesFull,
    /// `S1, S2` only; `S0 = g·B·Ĝ` comes from the refined RGB image.
    StokesS12,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::FourAngle, Mode::StokesFull, Mode::StokesS12];

    pub fn name(self) -> &'static str {
        match self {
            Mode::FourAngle => "four_angle",
            Mode::StokesFull => "stokes_full",
            Mode::StokesS12 => "stokes_s12",
        }
    }

    /// Channels predicted by the network.
    pub fn channels(self) -> usize {
        match self {
            Mode::FourAngle => 4,
            Mode::StokesFull => 3,
            Mode::StokesS12 => 2,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Param(format!("unknown mode '{s}'")))
    }
}

/// Rows of the four-angle to Stokes matrix `A`.
pub fn stokes_matrix() -> Vec<Vec<f64>> {
    vec![
        vec![0.25, 0.25, 0.25, 0.25],
        vec![0.5, 0.0, -0.5, 0.0],
        vec![0.0, 0.5, 0.0, -0.5],
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub mode: Mode,
    pub use_rgbrn: bool,
    pub use_ftb: bool,
    pub use_afa: bool,
    /// Feed a classical dense interpolation and predict a residual on it.
    pub use_prior: bool,
    pub gain: f64,
    pub luma: LumaWeights,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 8,
            depth: 3,
            mode: Mode::StokesS12,
            use_rgbrn: true,
            use_ftb: true,
            use_afa: true,
            use_prior: true,
            gain: 0.35,
            luma: LumaWeights::BT601,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 2 {
            return param_err(format!("base_channels must be at least 2, got {}", self.base_channels));
        }
        if self.depth < 1 {
            return param_err("depth must be at least 1");
        }
        if !(self.gain > 0.0) {
            return param_err(format!("gain must be positive, got {}", self.gain));
        }
        Ok(())
    }

    /// `key=value` lines, stored in checkpoints.
    pub fn to_text(&self) -> String {
        let w = self.luma.0;
        format!(
            "base_channels={}\ndepth={}\nmode={}\nuse_rgbrn={}\nuse_ftb={}\nuse_afa={}\nuse_prior={}\ngain={:?}\nluma={:?},{:?},{:?}\nseed={}\n",
            self.base_channels,
            self.depth,
            self.mode.name(),
            self.use_rgbrn,
            self.use_ftb,
            self.use_afa,
            self.use_prior,
            self.gain,
            w[0],
            w[1],
            w[2],
            self.seed
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = ModelConfig::default();
        let bad = |k: &str, v: &str| Error::Format(format!("bad model config value {k}={v}"));
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad model config line '{line}'")))?;
            let flag = |v: &str| v.parse::<bool>().map_err(|_| bad(k, v));
            match k {
                "base_channels" => c.base_channels = v.parse().map_err(|_| bad(k, v))?,
                "depth" => c.depth = v.parse().map_err(|_| bad(k, v))?,
                "mode" => c.mode = v.parse()?,
                "use_rgbrn" => c.use_rgbrn = flag(v)?,
                "use_ftb" => c.use_ftb = flag(v)?,
                "use_afa" => c.use_afa = flag(v)?,
                "use_prior" => c.use_prior = flag(v)?,
                "gain" => c.gain = v.parse().map_err(|_| bad(k, v))?,
                "luma" => {
                    let parts: Vec<f64> = v
                        .split(',')
                        .map(|p| p.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(k, v))?;
                    let [a, b, d] = parts[..] else { return Err(bad(k, v)) };
                    c.luma = LumaWeights([a, b, d]);
                }
                "seed" => c.seed = v.parse().map_err(|_| bad(k, v))?,
                _ => return Err(Error::Format(format!("unknown model config key '{k}'"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Network-facing tensors for one image (batch 1) or a stacked batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SnaInput {
    /// Demosaiced RGB, scene-referred.
    pub rgb: Tensor,
    /// Sparse camera-referred Stokes, zero off the mask.
    pub sparse_stokes: Tensor,
    /// Sparse four-angle samples, zero off the mask.
    pub sparse_angles: Tensor,
    pub mask: Tensor,
    /// Classical dense interpolation of the sparse Stokes.
    pub prior_stokes: Tensor,
    /// Classical dense interpolation of each angle plane.
    pub prior_angles: Tensor,
}

impl SnaInput {
    pub fn dims(&self) -> (usize, usize) {
        (self.rgb.width(), self.rgb.height())
    }

    pub fn stack(items: &[&SnaInput]) -> Result<SnaInput> {
        let pick = |f: fn(&SnaInput) -> &Tensor| Tensor::stack(&items.iter().map(|i| f(i)).collect::<Vec<_>>());
        Ok(SnaInput {
            rgb: pick(|i| &i.rgb)?,
            sparse_stokes: pick(|i| &i.sparse_stokes)?,
            sparse_angles: pick(|i| &i.sparse_angles)?,
            mask: pick(|i| &i.mask)?,
            prior_stokes: pick(|i| &i.prior_stokes)?,
            prior_angles: pick(|i| &i.prior_angles)?,
        })
    }

    fn pol_sparse(&self, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::FourAngle => Ok(self.sparse_angles.clone()),
            Mode::StokesFull => Ok(self.sparse_stokes.clone()),
            Mode::StokesS12 => channel_range(&self.sparse_stokes, 1, 2),
        }
    }

    fn pol_prior(&self, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::FourAngle => Ok(self.prior_angles.clone()),
            Mode::StokesFull => Ok(self.prior_stokes.clone()),
            // S1,S2 of the per-angle interpolation, the same prior four_angle sees
            Mode::StokesS12 => mix_channels(&self.prior_angles, &stokes_matrix()[1..]),
        }
    }
}

/// Ground truth in the same units as the network outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SnaTarget {
    /// Camera-referred Stokes, `[n,3,h,w]`.
    pub stokes: Tensor,
    /// Scene RGB, `[n,3,h,w]`.
    pub rgb: Tensor,
}

impl SnaTarget {
    pub fn new(stokes: &StokesImage, rgb: &RgbImage) -> Result<Self> {
        Ok(SnaTarget {
            stokes: Tensor::from_planes(&stokes.planes())?,
            rgb: Tensor::from_planes(&rgb.channels())?,
        })
    }

    pub fn stack(items: &[&SnaTarget]) -> Result<SnaTarget> {
        Ok(SnaTarget {
            stokes: Tensor::stack(&items.iter().map(|t| &t.stokes).collect::<Vec<_>>())?,
            rgb: Tensor::stack(&items.iter().map(|t| &t.rgb).collect::<Vec<_>>())?,
        })
    }

    /// The part of the Stokes target the loss compares against.
    pub fn pol(&self, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::StokesS12 => channel_range(&self.stokes, 1, 2),
            _ => Ok(self.stokes.clone()),
        }
    }
}

fn channel_range(t: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let [n, _, h, w] = t.shape();
    let mut data = Vec::with_capacity(n * len * h * w);
    for b in 0..n {
        for c in start..start + len {
            data.extend_from_slice(t.plane(b, c));
        }
    }
    Tensor::from_vec([n, len, h, w], data)
}

fn mix_channels(t: &Tensor, m: &[Vec<f64>]) -> Result<Tensor> {
    let [n, c, h, w] = t.shape();
    let mut out = Tensor::zeros([n, m.len(), h, w]);
    for b in 0..n {
        for (o, row) in m.iter().enumerate() {
            let dst = out.plane_mut(b, o);
            for (i, &k) in row.iter().enumerate().take(c) {
                for (d, s) in dst.iter_mut().zip(t.plane(b, i)) {
                    *d += k * s;
                }
            }
        }
    }
    Ok(out)
}

/// Tape handles of one forward pass. Polarization outputs are expressed in
/// the loss space: `S1,S2` for `StokesS12`, `S0,S1,S2` otherwise.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub rgb: Var,
    pub first: Var,
    pub second: Var,
    pub blended: Var,
    pub pcn: PcnOutput,
}

/// Scalar loss nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub main: Var,
    pub intermediate: Var,
    pub rgb: Var,
}

/// `L1(pred) + λ·(L1(first) + L1(second)) + L2(rgb)`, all as means.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss(
    g: &mut Graph,
    pred: Var,
    first: Var,
    second: Var,
    rgb: Var,
    target_pol: &Tensor,
    target_rgb: &Tensor,
    lambda: f64,
) -> Result<LossVars> {
    if !(lambda >= 0.0) {
        return param_err(format!("loss weight λ must be non-negative, got {lambda}"));
    }
    let main = g.mean_abs(pred, target_pol)?;
    let l1 = g.mean_abs(first, target_pol)?;
    let l2 = g.mean_abs(second, target_pol)?;
    let inter = g.add(l1, l2)?;
    let weighted = g.scale(inter, lambda)?;
    let rgb = g.mean_sq(rgb, target_rgb)?;
    let t = g.add(main, weighted)?;
    let total = g.add(t, rgb)?;
    Ok(LossVars {
        total,
        main,
        intermediate: inter,
        rgb,
    })
}

/// Dense estimates produced by [`Sna::predict`].
#[derive(Clone, Debug, PartialEq)]
pub struct SnaPrediction {
    /// Camera-referred Stokes.
    pub stokes: StokesImage,
    pub rgb: RgbImage,
}

#[derive(Clone, Debug)]
pub struct Sna {
    config: ModelConfig,
    store: ParamStore,
    rgbrn: Option<Rgbrn>,
    pcn: Pcn,
}

impl Sna {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0005_1a17);
        let mut store = ParamStore::new();
        let rgbrn = if config.use_rgbrn {
            Some(Rgbrn::new(&mut store, config.base_channels, &mut rng)?)
        } else {
            None
        };
        let shape = PcnShape {
            channels: config.mode.channels(),
            guide: 3,
            base: config.base_channels,
            depth: config.depth,
            prior: config.use_prior,
        };
        let skips = SkipConfig {
            use_ftb: config.use_ftb,
            use_afa: config.use_afa,
        };
        let pcn = Pcn::new(&mut store, shape, skips, &mut rng)?;
        Ok(Sna {
            config,
            store,
            rgbrn,
            pcn,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Spatial dimensions must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.config.depth - 1)
    }

    /// Record a forward pass on `g`.
    pub fn forward(&self, g: &mut Graph, input: &SnaInput) -> Result<ForwardVars> {
        let (w, h) = input.dims();
        let m = self.size_multiple();
        if w % m != 0 || h % m != 0 {
            return param_err(format!("input {w}x{h} must be divisible by {m} for depth {}", self.config.depth));
        }
        let mode = self.config.mode;
        let rgb_in = g.input(input.rgb.clone());
        let sparse_s = g.input(input.sparse_stokes.clone());
        let mask = g.input(input.mask.clone());
        let rgb = match &self.rgbrn {
            Some(net) => net.forward(g, &self.store, rgb_in, sparse_s, mask)?,
            None => rgb_in,
        };
        let pol = g.input(input.pol_sparse(mode)?);
        let prior = if self.config.use_prior {
            Some(g.input(input.pol_prior(mode)?))
        } else {
            None
        };
        let out = self.pcn.forward(g, &self.store, rgb, pol, mask, prior)?;
        let (first, second, blended) = if mode == Mode::FourAngle {
            let a = stokes_matrix();
            (g.mix(out.first, &a)?, g.mix(out.second, &a)?, g.mix(out.blended, &a)?)
        } else {
            (out.first, out.second, out.blended)
        };
        Ok(ForwardVars {
            rgb,
            first,
            second,
            blended,
            pcn: out,
        })
    }

    /// Forward pass plus loss against `target`.
    pub fn loss(&self, g: &mut Graph, input: &SnaInput, target: &SnaTarget, lambda: f64) -> Result<LossVars> {
        let f = self.forward(g, input)?;
        composite_loss(g, f.blended, f.first, f.second, f.rgb, &target.pol(self.config.mode)?, &target.rgb, lambda)
    }

    /// Inference on a single image. Refined RGB is clamped to `[0,1]`; with
    /// refinement disabled the input RGB passes through untouched.
    pub fn predict(&self, input: &SnaInput) -> Result<SnaPrediction> {
        if input.rgb.batch() != 1 {
            return param_err("predict takes a single image");
        }
        let mut g = Graph::new();
        let f = self.forward(&mut g, input)?;
        let v = g.value(f.rgb);
        let mut rgb = RgbImage {
            r: v.to_plane(0, 0),
            g: v.to_plane(0, 1),
            b: v.to_plane(0, 2),
        };
        if self.rgbrn.is_some() {
            rgb = rgb.clamp01();
        }
        let pol = g.value(f.blended);
        let stokes = match self.config.mode {
            Mode::StokesS12 => StokesImage {
                s0: s0_from_rgb_with(&rgb, self.config.gain, self.config.luma)?,
                s1: pol.to_plane(0, 0),
                s2: pol.to_plane(0, 1),
            },
            _ => StokesImage {
                s0: pol.to_plane(0, 0),
                s1: pol.to_plane(0, 1),
                s2: pol.to_plane(0, 2),
            },
        };
        Ok(SnaPrediction { stokes, rgb })
    }
}

/// Plane helpers for building inputs from images.
pub fn mask_tensor(mask: &PixelMask) -> Tensor {
    Tensor::from_planes(&[&mask.to_plane()]).expect("single plane")
}

pub fn plane_tensor(planes: &[&Plane]) -> Result<Tensor> {
    Tensor::from_planes(planes)
}
