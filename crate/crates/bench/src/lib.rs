//! Fixtures shared by the criterion benches.

use polarsim::pipeline::{prepare, simulate, Prepared};
use polarsim::scenegen::{generate, Scene, SceneKind, SceneParams};
use polarsim::{SensorConfig, SensorKind};

pub fn scene(size: usize) -> Scene {
    generate(SceneKind::Shapes, &SceneParams::sized(size, size), 7).expect("valid scene")
}

pub fn prepared(size: usize, ratio: f64) -> (Scene, Prepared) {
    let s = scene(size);
    let cfg = SensorConfig { ratio, ..Default::default() };
    let raw = simulate(&s, SensorKind::Sparse, &cfg).expect("capture");
    let p = prepare(&raw).expect("prepare");
    (s, p)
}
