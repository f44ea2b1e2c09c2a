//! Dataset → capture → training → evaluation in one place, shared by the
//! command line and the end-to-end tests.

use crate::error::{param_err, Result};
use crate::metrics::QualityReport;
use crate::nn::{train, ModelConfig, Sample, Sna, TrainConfig, TrainReport};
use crate::pipeline::{evaluate, make_sample, prepare, reconstruct, simulate, Method, Prepared};
use crate::scenegen::{make_dataset, DatasetConfig, Scene, SceneSpec};
use crate::sensor::{SensorConfig, SensorKind};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub n_scenes: usize,
    pub split: (f64, f64, f64),
    pub dataset: DatasetConfig,
    pub sensor_kind: SensorKind,
    pub sensor: SensorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_scenes: 64,
            split: (0.75, 0.125, 0.125),
            dataset: DatasetConfig::default(),
            sensor_kind: SensorKind::Sparse,
            sensor: SensorConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Sets every seed from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.sensor.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self
    }
}

/// A rendered scene and what the sensor made of it.
#[derive(Clone, Debug)]
pub struct Captured {
    pub spec: SceneSpec,
    pub scene: Scene,
    pub prepared: Prepared,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Captured>,
    pub val: Vec<Captured>,
    pub test: Vec<Captured>,
}

fn capture_all(specs: &[SceneSpec], cfg: &ExperimentConfig) -> Result<Vec<Captured>> {
    specs
        .iter()
        .map(|spec| {
            let scene = spec.render(&cfg.dataset.params)?;
            let sensor = SensorConfig {
                seed: cfg.sensor.seed ^ spec.seed,
                ..cfg.sensor.clone()
            };
            let prepared = prepare(&simulate(&scene, cfg.sensor_kind, &sensor)?)?;
            Ok(Captured {
                spec: *spec,
                scene,
                prepared,
            })
        })
        .collect()
}

/// Render and capture every scene of the configured dataset.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let m = make_dataset(cfg.n_scenes, cfg.split, &cfg.dataset)?;
    Ok(Dataset {
        train: capture_all(&m.train, cfg)?,
        val: capture_all(&m.val, cfg)?,
        test: capture_all(&m.test, cfg)?,
    })
}

pub fn samples(items: &[Captured]) -> Result<Vec<Sample>> {
    items.iter().map(|c| make_sample(&c.scene, &c.prepared)).collect()
}

pub fn train_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<(Sna, TrainReport)> {
    let mut model = Sna::new(cfg.model.clone())?;
    let report = train(&mut model, &samples(&data.train)?, &samples(&data.val)?, &cfg.train)?;
    Ok((model, report))
}

/// Mean quality of `method` over `items`.
pub fn evaluate_method(items: &[Captured], method: Method, model: Option<&Sna>) -> Result<QualityReport> {
    if items.is_empty() {
        return param_err("nothing to evaluate");
    }
    let reports = items
        .iter()
        .map(|c| {
            let est = reconstruct(&c.prepared, method, model, None)?;
            evaluate(&est, &c.scene, c.prepared.gain)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QualityReport::mean_of(&reports).expect("non-empty"))
}
