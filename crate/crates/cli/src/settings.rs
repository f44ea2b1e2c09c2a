//! Config file plus flag overrides, resolved into library types.

use anyhow::{bail, Context, Result};
use polarsim::experiment::ExperimentConfig;
use polarsim::io::Config;
use polarsim::nn::{ModelConfig, TrainConfig};
use polarsim::pipeline::Method;
use polarsim::scenegen::{DatasetConfig, SceneKind, SceneParams};
use polarsim::sensor::CfaOrder;
use polarsim::{SensorConfig, SensorKind};
use std::path::{Path, PathBuf};

use crate::Common;

pub struct Settings {
    pub cfg: Config,
}

impl Settings {
    pub fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => Config::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => Config::default(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                cfg.set(k, v);
            }
        };
        set("seed", common.seed.map(|v| v.to_string()));
        set("scene", common.scene.clone());
        set("layout", common.layout.clone());
        set("r", common.r.map(|v| v.to_string()));
        set("t", common.t.map(|v| v.to_string()));
        set("noise", common.noise.map(|v| v.to_string()));
        set("method", common.method.clone());
        set("model", common.model.as_ref().map(|p| p.display().to_string()));
        set("out", common.out.as_ref().map(|p| p.display().to_string()));
        Ok(Settings { cfg })
    }

    pub fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.cfg.get_or(key, default)?)
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        match self.cfg.get_str(key) {
            Some(v) => Ok(v),
            None => bail!("missing --{key} (or `{key}=` in the config file)"),
        }
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        Ok(PathBuf::from(self.require(key)?))
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        PathBuf::from(self.cfg.get_str("out").unwrap_or(default))
    }

    pub fn method(&self) -> Result<Method> {
        Ok(self.get_or("method", "bilinear".to_string())?.parse()?)
    }

    pub fn sensor_kind(&self) -> Result<SensorKind> {
        Ok(self.get_or("layout", "sparse".to_string())?.parse()?)
    }

    /// Sensor settings; `r` is given as a denominator (4, 16, 64).
    pub fn sensor(&self) -> Result<SensorConfig> {
        let d = SensorConfig::default();
        let denom: f64 = self.get_or("r", 16.0)?;
        if !(denom >= 1.0) {
            bail!("--r takes the ratio denominator (4, 16, 64), got {denom}");
        }
        let cfg = SensorConfig {
            ratio: 1.0 / denom,
            transmittance: self.get_or("t", d.transmittance)?,
            noise_factor: self.get_or("noise", d.noise_factor)?,
            quantum_efficiency: self.get_or("qe", d.quantum_efficiency)?,
            full_scale: self.get_or("full_scale", d.full_scale)?,
            seed: self.seed()?,
            cfa: self.get_or("cfa", "rggb".to_string())?.parse::<CfaOrder>()?,
            luma: d.luma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scene_params(&self) -> Result<SceneParams> {
        let d = SceneParams::default();
        Ok(SceneParams {
            width: self.get_or("width", d.width)?,
            height: self.get_or("height", d.height)?,
            dolp_max: self.get_or("dolp_max", d.dolp_max)?,
            correlation: self.get_or("correlation", d.correlation)?,
            texture: self.get_or("texture", d.texture)?,
            dolp_override: self.cfg.get("dolp")?,
            aolp_override: self.cfg.get("aolp")?,
            luma: d.luma,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let d = ModelConfig::default();
        let sensor = self.sensor()?;
        let cfg = ModelConfig {
            base_channels: self.get_or("base_channels", d.base_channels)?,
            depth: self.get_or("depth", d.depth)?,
            mode: self.get_or("mode", d.mode.name().to_string())?.parse()?,
            use_rgbrn: self.get_or("use_rgbrn", d.use_rgbrn)?,
            use_ftb: self.get_or("use_ftb", d.use_ftb)?,
            use_afa: self.get_or("use_afa", d.use_afa)?,
            use_prior: self.get_or("use_prior", d.use_prior)?,
            gain: sensor.gain(),
            luma: sensor.luma,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs: self.get_or("epochs", d.epochs)?,
            batch_size: self.get_or("batch_size", d.batch_size)?,
            lr: self.get_or("lr", d.lr)?,
            lr_decay: self.get_or("lr_decay", d.lr_decay)?,
            lambda0: self.get_or("lambda0", d.lambda0)?,
            patch: self.cfg.get("patch")?,
            seed: self.seed()?,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let kinds = match self.cfg.get_str("kinds") {
            Some(list) => list
                .split(',')
                .map(|k| k.trim().parse::<SceneKind>())
                .collect::<polarsim::Result<Vec<_>>>()?,
            None => SceneKind::ALL.to_vec(),
        };
        Ok(ExperimentConfig {
            n_scenes: self.get_or("n_scenes", d.n_scenes)?,
            split: d.split,
            dataset: DatasetConfig {
                params: self.scene_params()?,
                kinds,
                seed: self.seed()?,
            },
            sensor_kind: self.sensor_kind()?,
            sensor: self.sensor()?,
            model: self.model_config()?,
            train: self.train_config()?,
        })
    }
}

/// Sensor parameters stored next to a raw capture.
pub fn sensor_to_config(kind: SensorKind, s: &SensorConfig) -> Config {
    let mut c = Config::default();
    c.set("layout", kind.name());
    c.set("r", format!("{:?}", 1.0 / s.ratio));
    c.set("t", format!("{:?}", s.transmittance));
    c.set("noise", format!("{:?}", s.noise_factor));
    c.set("qe", format!("{:?}", s.quantum_efficiency));
    c.set("full_scale", format!("{:?}", s.full_scale));
    c.set("seed", s.seed.to_string());
    c.set("cfa", s.cfa.name());
    c
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".cfg");
    PathBuf::from(p)
}
