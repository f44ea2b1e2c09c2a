//! Simulation and reconstruction toolkit for sparse division-of-focal-plane
//! polarization sensors.
//!
//! The crate covers the full loop: analytic polarized scenes
//! ([`scenegen`]), sensor layouts and noisy capture ([`sensor`]), demosaicing
//! and binning ([`raw_pipeline`]), classical Stokes densification
//! ([`compensation`]), a small trainable compensation network with its own
//! reverse-mode autodiff ([`nn`]), and quality metrics ([`metrics`]).
//!
//! Stokes values produced from sensor data are camera-referred: a polarizer
//! pixel sees `t/2` of the scene intensity, so `S0` estimated from RGB uses the
//! gain `g = t/2` by default.

pub mod compensation;
pub mod error;
pub mod experiment;
pub mod image;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod raw_pipeline;
pub mod scenegen;
pub mod sensor;
pub mod stokes;

pub use error::{Error, Result};
pub use image::{Density, FourAngleImage, GrayImage, PixelMask, Plane, RgbImage, StokesImage};
pub use sensor::{PolarScene, RawFrame, SensorConfig, SensorKind, SensorLayout};
pub use stokes::LumaWeights;
