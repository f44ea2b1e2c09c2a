//! Pixel layouts and capture simulation for conventional and sparse
//! division-of-focal-plane polarization sensors.
//!
//! Both sensors sit on a Quad Bayer colour filter array (each Bayer cell is a
//! 2×2 block of same-colour pixels). A conventional sensor puts a polarizer
//! on every pixel, with the four angles inside each Quad Bayer cell. A sparse
//! sensor keeps regular colour pixels and replaces one 2×2 cluster per tile
//! with white-filtered polarization pixels; the tile has area `4/r`.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{param_err, Result};
use crate::image::{Plane, StokesImage};
use crate::stokes::{ensure_dims, intensity_at, LumaWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SensorKind {
    Conventional,
    Sparse,
}

impl SensorKind {
    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Conventional => "conventional",
            SensorKind::Sparse => "sparse",
        }
    }
}

impl std::str::FromStr for SensorKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conventional" => Ok(SensorKind::Conventional),
            "sparse" => Ok(SensorKind::Sparse),
            other => param_err(format!("unknown sensor kind '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Color {
    R,
    G,
    B,
}

impl Color {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Angle {
    A0,
    A45,
    A90,
    A135,
}

impl Angle {
    pub const ALL: [Angle; 4] = [Angle::A0, Angle::A45, Angle::A90, Angle::A135];

    pub fn degrees(self) -> f64 {
        match self {
            Angle::A0 => 0.0,
            Angle::A45 => 45.0,
            Angle::A90 => 90.0,
            Angle::A135 => 135.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Per-pixel class: a regular colour pixel or a polarization pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PixelClass {
    Color(Color),
    Polarized(Angle),
}

impl PixelClass {
    /// One-character tag used by [`SensorLayout::dump`].
    pub fn tag(self) -> char {
        match self {
            PixelClass::Color(Color::R) => 'R',
            PixelClass::Color(Color::G) => 'G',
            PixelClass::Color(Color::B) => 'B',
            PixelClass::Polarized(Angle::A0) => '-',
            PixelClass::Polarized(Angle::A45) => '/',
            PixelClass::Polarized(Angle::A90) => '|',
            PixelClass::Polarized(Angle::A135) => '\\',
        }
    }

    pub fn is_polarized(self) -> bool {
        matches!(self, PixelClass::Polarized(_))
    }

    pub fn angle(self) -> Option<Angle> {
        match self {
            PixelClass::Polarized(a) => Some(a),
            PixelClass::Color(_) => None,
        }
    }
}

/// Colour order of the top-left 2×2 Bayer cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CfaOrder {
    #[default]
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl CfaOrder {
    pub fn name(self) -> &'static str {
        match self {
            CfaOrder::Rggb => "rggb",
            CfaOrder::Bggr => "bggr",
            CfaOrder::Grbg => "grbg",
            CfaOrder::Gbrg => "gbrg",
        }
    }

    fn cells(self) -> [Color; 4] {
        use Color::*;
        match self {
            CfaOrder::Rggb => [R, G, G, B],
            CfaOrder::Bggr => [B, G, G, R],
            CfaOrder::Grbg => [G, R, B, G],
            CfaOrder::Gbrg => [G, B, R, G],
        }
    }

    /// Colour of a Bayer cell at cell coordinates.
    #[inline]
    pub fn cell_color(self, cx: usize, cy: usize) -> Color {
        self.cells()[(cy % 2) * 2 + cx % 2]
    }

    /// Colour of pixel `(x, y)` on a Quad Bayer array.
    #[inline]
    pub fn quad_color(self, x: usize, y: usize) -> Color {
        self.cell_color(x / 2, y / 2)
    }
}

impl std::str::FromStr for CfaOrder {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rggb" => Ok(CfaOrder::Rggb),
            "bggr" => Ok(CfaOrder::Bggr),
            "grbg" => Ok(CfaOrder::Grbg),
            "gbrg" => Ok(CfaOrder::Gbrg),
            other => param_err(format!("unknown CFA order '{other}'")),
        }
    }
}

/// Angle arrangement inside every 2×2 polarization cluster:
/// `[[90°, 45°], [135°, 0°]]`.
pub const CLUSTER: [[Angle; 2]; 2] = [[Angle::A90, Angle::A45], [Angle::A135, Angle::A0]];

/// Offset of the polarization cluster inside a sparse tile. Placing it on the
/// junction of four Quad Bayer cells removes one pixel from each colour cell
/// instead of wiping out a whole cell.
pub const CLUSTER_OFFSET: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SensorConfig {
    /// Fraction of polarization pixels.
    pub ratio: f64,
    /// Polarizer transmittance.
    pub transmittance: f64,
    /// Shot-noise factor: noise std is `noise_factor * sqrt(photons)`.
    pub noise_factor: f64,
    /// Quantum efficiency (only used by [`snr_analysis`]).
    pub quantum_efficiency: f64,
    /// Photon count at normalized value 1.0.
    pub full_scale: f64,
    pub seed: u64,
    pub cfa: CfaOrder,
    pub luma: LumaWeights,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            ratio: 1.0 / 16.0,
            transmittance: 0.7,
            noise_factor: 0.72,
            quantum_efficiency: 1.0,
            full_scale: 4095.0,
            seed: 0,
            cfa: CfaOrder::Rggb,
            luma: LumaWeights::BT601,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !in_unit(self.ratio) {
            return param_err(format!("ratio r must be in (0,1], got {}", self.ratio));
        }
        if !in_unit(self.transmittance) {
            return param_err(format!(
                "transmittance must be in (0,1], got {}",
                self.transmittance
            ));
        }
        if !in_unit(self.quantum_efficiency) {
            return param_err(format!(
                "quantum efficiency must be in (0,1], got {}",
                self.quantum_efficiency
            ));
        }
        if !(self.noise_factor >= 0.0) || !self.noise_factor.is_finite() {
            return param_err(format!("noise factor must be >= 0, got {}", self.noise_factor));
        }
        if !(self.full_scale > 0.0) || !self.full_scale.is_finite() {
            return param_err(format!("full_scale must be > 0, got {}", self.full_scale));
        }
        Ok(())
    }

    /// Default S0 gain `t/2`: maps unattenuated intensity to the
    /// camera-referred scale of polarization pixels.
    pub fn gain(&self) -> f64 {
        self.transmittance / 2.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorLayout {
    width: usize,
    height: usize,
    kind: SensorKind,
    ratio: f64,
    tile: usize,
    cfa: CfaOrder,
    classes: Vec<PixelClass>,
}

/// Side of the square tile holding one polarization cluster at ratio `r`.
pub fn tile_side(r: f64) -> Result<usize> {
    if !(r > 0.0 && r <= 1.0) {
        return param_err(format!("ratio r must be in (0,1], got {r}"));
    }
    let side = (4.0 / r).sqrt();
    let rounded = side.round();
    if (side - rounded).abs() > 1e-9 || rounded < 4.0 || rounded as usize % 4 != 0 {
        return param_err(format!(
            "unsupported ratio r={r}: tile side sqrt(4/r) must be a multiple of 4 (r = 1/4, 1/16, 1/64, ...)"
        ));
    }
    Ok(rounded as usize)
}

pub fn build_layout(kind: SensorKind, height: usize, width: usize, r: f64) -> Result<SensorLayout> {
    build_layout_with(kind, height, width, r, CfaOrder::Rggb)
}

pub fn build_layout_with(
    kind: SensorKind,
    height: usize,
    width: usize,
    r: f64,
    cfa: CfaOrder,
) -> Result<SensorLayout> {
    let (tile, ratio) = match kind {
        SensorKind::Sparse => (tile_side(r)?, r),
        // the conventional pattern repeats with the 4×4 Quad Bayer period
        SensorKind::Conventional => (4, 1.0),
    };
    if width == 0 || height == 0 || width % tile != 0 || height % tile != 0 {
        return param_err(format!(
            "{}x{} is not a multiple of the {}-pixel tile period",
            width, height, tile
        ));
    }
    let mut classes = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let class = match kind {
                SensorKind::Conventional => PixelClass::Polarized(CLUSTER[y % 2][x % 2]),
                SensorKind::Sparse => {
                    let (tx, ty) = (x % tile, y % tile);
                    let in_cluster = (CLUSTER_OFFSET..CLUSTER_OFFSET + 2).contains(&tx)
                        && (CLUSTER_OFFSET..CLUSTER_OFFSET + 2).contains(&ty);
                    if in_cluster {
                        PixelClass::Polarized(CLUSTER[ty - CLUSTER_OFFSET][tx - CLUSTER_OFFSET])
                    } else {
                        PixelClass::Color(cfa.quad_color(x, y))
                    }
                }
            };
            classes.push(class);
        }
    }
    Ok(SensorLayout {
        width,
        height,
        kind,
        ratio,
        tile,
        cfa,
        classes,
    })
}

impl SensorLayout {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn kind(&self) -> SensorKind {
        self.kind
    }

    /// Nominal polarization ratio (1 for conventional sensors).
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Pattern period in pixels.
    pub fn tile(&self) -> usize {
        self.tile
    }

    pub fn cfa(&self) -> CfaOrder {
        self.cfa
    }

    #[inline]
    pub fn class(&self, x: usize, y: usize) -> PixelClass {
        self.classes[y * self.width + x]
    }

    /// Colour filter over the pixel; `None` for white-filtered polarization pixels.
    #[inline]
    pub fn filter_color(&self, x: usize, y: usize) -> Option<Color> {
        match (self.kind, self.class(x, y)) {
            (SensorKind::Conventional, _) => Some(self.cfa.quad_color(x, y)),
            (SensorKind::Sparse, PixelClass::Color(c)) => Some(c),
            (SensorKind::Sparse, PixelClass::Polarized(_)) => None,
        }
    }

    pub fn polarized_count(&self) -> usize {
        self.classes.iter().filter(|c| c.is_polarized()).count()
    }

    pub fn count_of(&self, class: PixelClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    pub fn polarized_fraction(&self) -> f64 {
        self.polarized_count() as f64 / (self.width * self.height) as f64
    }

    /// Text grid, one character per pixel (`R`, `G`, `B`, and polarizer
    /// glyphs `-` 0°, `/` 45°, `|` 90°, `\` 135°), preceded by a header line.
    pub fn dump(&self) -> String {
        let mut s = format!(
            "# kind={} width={} height={} tile={}\n",
            self.kind.name(),
            self.width,
            self.height,
            self.tile
        );
        for y in 0..self.height {
            for x in 0..self.width {
                s.push(self.class(x, y).tag());
            }
            s.push('\n');
        }
        s
    }
}

/// Scene radiance as one Stokes image per colour channel.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarScene {
    pub channels: [StokesImage; 3],
}

impl PolarScene {
    pub fn new(r: StokesImage, g: StokesImage, b: StokesImage) -> Result<Self> {
        ensure_dims("green channel", r.dims(), g.dims())?;
        ensure_dims("blue channel", r.dims(), b.dims())?;
        Ok(PolarScene {
            channels: [r, g, b],
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    /// Stokes as seen through a panchromatic filter with the given spectral weights.
    pub fn gray(&self, weights: LumaWeights) -> StokesImage {
        let (w, h) = self.dims();
        let comp = |k: usize| {
            Plane::from_fn(w, h, |x, y| {
                weights.apply([
                    self.channels[0].planes()[k].get(x, y),
                    self.channels[1].planes()[k].get(x, y),
                    self.channels[2].planes()[k].get(x, y),
                ])
            })
        };
        StokesImage {
            s0: comp(0),
            s1: comp(1),
            s2: comp(2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub values: Plane,
    pub layout: SensorLayout,
    pub config: SensorConfig,
}

impl RawFrame {
    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }
}

/// Noise-free reading of one pixel.
fn ideal_reading(scene: &PolarScene, gray: Option<&StokesImage>, layout: &SensorLayout, t: f64, x: usize, y: usize) -> f64 {
    match (layout.class(x, y), layout.filter_color(x, y)) {
        (PixelClass::Color(c), _) => scene.channels[c.index()].s0.get(x, y),
        (PixelClass::Polarized(a), Some(c)) => {
            0.5 * t * intensity_at(scene.channels[c.index()].pixel(x, y), a.degrees())
        }
        (PixelClass::Polarized(a), None) => {
            let g = gray.expect("gray scene computed for sparse layouts");
            0.5 * t * intensity_at(g.pixel(x, y), a.degrees())
        }
    }
}

/// Simulate one exposure: attenuation by the polarizers, Gaussian shot noise
/// with std `f_n·sqrt(photons)`, clamp at zero.
///
/// Noise draws come from a ChaCha stream keyed by `(seed, row)` and read at a
/// fixed offset per column, so a pixel's noise depends only on its position.
pub fn capture(scene: &PolarScene, layout: &SensorLayout, config: &SensorConfig) -> Result<RawFrame> {
    config.validate()?;
    ensure_dims("scene vs layout", layout.dims(), scene.dims())?;
    let (w, h) = layout.dims();
    let gray = match layout.kind() {
        SensorKind::Sparse => Some(scene.gray(config.luma)),
        SensorKind::Conventional => None,
    };
    let t = config.transmittance;
    let fs = config.full_scale;
    let mut values = Plane::new(w, h);
    for y in 0..h {
        let mut rng = (config.noise_factor > 0.0).then(|| noise_stream(config.seed, y));
        for x in 0..w {
            let ideal = ideal_reading(scene, gray.as_ref(), layout, t, x, y);
            let mut v = ideal;
            if let Some(rng) = rng.as_mut() {
                let z = standard_normal(rng);
                let std = config.noise_factor * (ideal.max(0.0) * fs).sqrt() / fs;
                v += std * z;
            }
            values.set(x, y, v.max(0.0));
        }
    }
    Ok(RawFrame {
        values,
        layout: layout.clone(),
        config: config.clone(),
    })
}

pub(crate) fn noise_stream(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng.set_word_pos(0);
    rng
}

/// Box–Muller; consumes exactly two u64 words per call.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let a = rng.next_u64();
    let b = rng.next_u64();
    let u1 = ((a >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnrReport {
    pub snr_regular: f64,
    pub snr_polarized: f64,
    pub snr_conventional_rgb: f64,
    pub snr_sparse_rgb: f64,
    /// Sparse over conventional RGB SNR, `sqrt(1/(2t))`.
    pub rgb_snr_ratio: f64,
}

pub fn snr_analysis(config: &SensorConfig) -> Result<SnrReport> {
    config.validate()?;
    let qs = config.quantum_efficiency * config.full_scale;
    let t = config.transmittance;
    let snr_regular = qs.sqrt();
    let snr_conventional_rgb = (2.0 * t * qs).sqrt();
    Ok(SnrReport {
        snr_regular,
        snr_polarized: (t * qs / 2.0).sqrt(),
        snr_conventional_rgb,
        snr_sparse_rgb: snr_regular,
        rgb_snr_ratio: (1.0 / (2.0 * t)).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolutionReport {
    /// RGB pixel count relative to a conventional sensor, `4(1-r)`.
    pub rgb_factor: f64,
    /// Polarization pixel count relative to a conventional sensor, `r`.
    pub pol_factor: f64,
}

pub fn resolution_analysis(r: f64) -> Result<ResolutionReport> {
    if !(0.0..=1.0).contains(&r) {
        return param_err(format!("ratio r must be in [0,1], got {r}"));
    }
    Ok(ResolutionReport {
        rgb_factor: 4.0 * (1.0 - r),
        pol_factor: r,
    })
}
