use anyhow::{bail, Context, Result};
use polarsim::experiment::{build_dataset, evaluate_method, train_model, ExperimentConfig};
use polarsim::io::{Config, Polr};
use polarsim::metrics::QualityReport;
use polarsim::nn::{load_checkpoint, save_checkpoint, EpochLog, Sna};
use polarsim::pipeline::{prepare, reconstruct, simulate, Method};
use polarsim::scenegen::{generate, Scene, SceneKind};
use polarsim::sensor::{build_layout_with, resolution_analysis, snr_analysis};
use polarsim::{RawFrame, SensorConfig, SensorKind};
use rayon::prelude::*;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::png;
use crate::settings::{sensor_to_config, sidecar, Settings};
use crate::{Command, Common};

pub const BENCH_SCHEMA: u32 = 1;

pub const BENCH_HEADER: [&str; 10] = [
    "sensor",
    "r",
    "F_n",
    "method",
    "rmse_s012",
    "rmse_s12",
    "dolp_psnr_db",
    "aolp_err_deg",
    "rgb_psnr_db",
    "rgb_ssim",
];

const METRIC_HEADER: [&str; 6] = ["rmse_s012", "rmse_s12", "dolp_psnr_db", "aolp_err_deg", "rgb_psnr_db", "rgb_ssim"];

/// Shortest round-trip decimal; `inf` for a perfect PSNR.
fn num(v: f64) -> String {
    format!("{v}")
}

fn metric_fields(q: &QualityReport) -> [String; 6] {
    [q.rmse_s012, q.rmse_s12, q.dolp_psnr_db, q.aolp_err_deg, q.rgb_psnr_db, q.rgb_ssim].map(num)
}

pub(crate) fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { common, png } => cmd_gen(&common, png.as_deref()),
        Command::Capture { common } => cmd_capture(&common),
        Command::Compensate { common, raw, png } => cmd_compensate(&common, &raw, png.as_deref()),
        Command::Train { common, log } => cmd_train(&common, log.as_deref()),
        Command::Eval { common, pred } => cmd_eval(&common, &pred),
        Command::Bench { common } => cmd_bench(&common),
        Command::Analyze { common } => cmd_analyze(&common),
        Command::Layout { common, width, height } => cmd_layout(&common, width, height),
    }
}

fn scene_polr(scene: &Scene) -> Result<Polr> {
    Ok(Polr::merge(&[Polr::from_rgb(&scene.rgb), Polr::from_stokes(&scene.stokes)])?)
}

fn load_scene(path: &Path) -> Result<Scene> {
    let p = Polr::load(path).with_context(|| format!("reading scene {}", path.display()))?;
    Ok(Scene::from_rgb_stokes(p.rgb()?, p.stokes()?)?)
}

fn cmd_gen(common: &Common, png_path: Option<&Path>) -> Result<()> {
    let s = Settings::new(common)?;
    let kind: SceneKind = s.get_or("scene", "shapes".to_string())?.parse()?;
    let scene = generate(kind, &s.scene_params()?, s.seed()?)?;
    let out = s.out_or("scene.polr");
    scene_polr(&scene)?.save(&out)?;
    if let Some(p) = png_path {
        png::export(p, &scene.rgb, &scene.stokes)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_capture(common: &Common) -> Result<()> {
    let s = Settings::new(common)?;
    let scene = load_scene(&s.path("scene")?)?;
    let kind = s.sensor_kind()?;
    let sensor = s.sensor()?;
    let raw = simulate(&scene, kind, &sensor)?;
    let out = s.out_or("raw.polr");
    Polr::new(vec!["raw".into()], vec![raw.values])?.save(&out)?;
    fs::write(sidecar(&out), sensor_to_config(kind, &sensor).to_text())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn load_raw(path: &Path) -> Result<RawFrame> {
    let p = Polr::load(path).with_context(|| format!("reading raw capture {}", path.display()))?;
    let Some(values) = p.plane("raw").cloned() else {
        bail!("{} has no 'raw' channel", path.display());
    };
    let meta = sidecar(path);
    let cfg = Config::load(&meta).with_context(|| format!("reading sensor settings {}", meta.display()))?;
    let s = Settings { cfg };
    let kind = s.sensor_kind()?;
    let config: SensorConfig = s.sensor()?;
    let (w, h) = values.dims();
    let layout = build_layout_with(kind, h, w, config.ratio, config.cfa)?;
    Ok(RawFrame { values, layout, config })
}

fn load_model(s: &Settings) -> Result<Sna> {
    let p = s.path("model")?;
    load_checkpoint(&p).with_context(|| format!("reading model {}", p.display()))
}

fn cmd_compensate(common: &Common, raw_path: &Path, png_path: Option<&Path>) -> Result<()> {
    let s = Settings::new(common)?;
    let raw = load_raw(raw_path)?;
    let method = s.method()?;
    let model = if method == Method::ToySna { Some(load_model(&s)?) } else { None };
    let prep = prepare(&raw)?;
    let est = reconstruct(&prep, method, model.as_ref(), None)?;
    let stokes = est.stokes.scale(1.0 / prep.gain);
    let out = s.out_or("estimate.polr");
    Polr::merge(&[Polr::from_rgb(&est.rgb), Polr::from_stokes(&stokes)])?.save(&out)?;
    if let Some(p) = png_path {
        png::export(p, &est.rgb, &stokes)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_train(common: &Common, log_path: Option<&Path>) -> Result<()> {
    let s = Settings::new(common)?;
    let cfg = s.experiment()?;
    let data = build_dataset(&cfg)?;
    log::info!("dataset: {} train, {} val, {} test", data.train.len(), data.val.len(), data.test.len());
    let (model, report) = train_model(&cfg, &data)?;
    let out = s.out_or("model.psna");
    save_checkpoint(&model, &out)?;
    let log_path = log_path.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("log.csv"));
    let rows: Vec<Vec<String>> = report.log.iter().map(|l| l.record().to_vec()).collect();
    write_csv(&log_path, &EpochLog::HEADER, &rows)?;
    println!("best epoch {} of {}", report.best_epoch, report.log.len());
    for method in [Method::Bilinear, Method::ToySna] {
        let q = evaluate_method(&data.test, method, Some(&model))?;
        println!("test {:<16} rmse_s12 {:.5} rmse_s012 {:.5}", method.name(), q.rmse_s12, q.rmse_s012);
    }
    println!("wrote {} and {}", out.display(), log_path.display());
    Ok(())
}

fn cmd_eval(common: &Common, pred: &Path) -> Result<()> {
    let s = Settings::new(common)?;
    let gt = Polr::load(s.path("scene")?)?;
    let p = Polr::load(pred).with_context(|| format!("reading prediction {}", pred.display()))?;
    let q = QualityReport::evaluate(&p.stokes()?, &p.rgb()?, &gt.stokes()?, &gt.rgb()?)?;
    let row = metric_fields(&q).to_vec();
    for (k, v) in METRIC_HEADER.iter().zip(&row) {
        println!("{k} {v}");
    }
    if let Some(out) = s.cfg.get_str("out") {
        write_csv(out, &METRIC_HEADER, &[row])?;
    }
    Ok(())
}

/// One grid row of the benchmark table.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub sensor: SensorKind,
    /// Ratio denominator; 1 for the conventional sensor.
    pub r_denom: u32,
    pub noise: f64,
    pub method: Method,
    pub report: QualityReport,
}

impl BenchRow {
    fn sort_key(&self) -> (u8, u32, u64, Method) {
        let sensor = match self.sensor {
            SensorKind::Conventional => 0,
            SensorKind::Sparse => 1,
        };
        (sensor, self.r_denom, self.noise.to_bits(), self.method)
    }

    pub fn record(&self) -> Vec<String> {
        let r = if self.r_denom == 1 { "1".to_string() } else { format!("1/{}", self.r_denom) };
        let mut v = vec![self.sensor.name().to_string(), r, num(self.noise), self.method.name().to_string()];
        v.extend(metric_fields(&self.report));
        v
    }
}

pub const BENCH_METHODS: [Method; 3] = [Method::Bilinear, Method::JointBilateral, Method::ToySna];

/// Runs every grid point. Without `model` a network is trained per grid
/// point on that point's own captures. Rows come back sorted.
pub fn bench_grid(base: &ExperimentConfig, model: Option<&Sna>, ratios: &[u32], noises: &[f64]) -> Result<Vec<BenchRow>> {
    let mut points = Vec::new();
    for &noise in noises {
        points.push((SensorKind::Conventional, 1u32, noise));
        for &r in ratios {
            points.push((SensorKind::Sparse, r, noise));
        }
    }
    let per_point: Vec<Vec<BenchRow>> = points
        .par_iter()
        .map(|&(sensor, r_denom, noise)| -> Result<Vec<BenchRow>> {
            let mut cfg = base.clone();
            cfg.sensor_kind = sensor;
            cfg.sensor.noise_factor = noise;
            if sensor == SensorKind::Sparse {
                cfg.sensor.ratio = 1.0 / r_denom as f64;
            }
            let data = build_dataset(&cfg)?;
            let trained;
            let net = match model {
                Some(m) => m,
                None => {
                    trained = train_model(&cfg, &data)?.0;
                    &trained
                }
            };
            BENCH_METHODS
                .iter()
                .map(|&method| {
                    Ok(BenchRow {
                        sensor,
                        r_denom,
                        noise,
                        method,
                        report: evaluate_method(&data.test, method, Some(net))?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<BenchRow> = per_point.into_iter().flatten().collect();
    rows.sort_by_key(BenchRow::sort_key);
    Ok(rows)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("POLARSIM_THREADS") {
        let n: usize = v.parse().with_context(|| format!("POLARSIM_THREADS={v:?}"))?;
        b = b.num_threads(n.max(1));
    }
    Ok(b.build()?)
}

fn cmd_bench(common: &Common) -> Result<()> {
    let s = Settings::new(common)?;
    let mut cfg = s.experiment()?;
    // the grid trains many networks, so the defaults are lighter than `train`
    cfg.n_scenes = s.get_or("n_scenes", 24)?;
    cfg.train.epochs = s.get_or("epochs", 5)?;
    let model = match s.cfg.get_str("model") {
        Some(_) => Some(load_model(&s)?),
        None => None,
    };
    let ratios = [4, 16, 64];
    let noises = [0.72, 3.6];
    let rows = thread_pool()?.install(|| bench_grid(&cfg, model.as_ref(), &ratios, &noises))?;
    let out = s.out_or("bench.csv");
    let mut f = fs::File::create(&out).with_context(|| format!("writing {}", out.display()))?;
    writeln!(f, "# polarsim bench schema {BENCH_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(BENCH_HEADER)?;
    for r in &rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    println!("wrote {} ({} rows)", out.display(), rows.len());
    Ok(())
}

fn cmd_analyze(common: &Common) -> Result<()> {
    let s = Settings::new(common)?;
    let dir = s.out_or("analysis");
    fs::create_dir_all(&dir)?;
    let mut rows = Vec::new();
    for denom in [4u32, 16, 64] {
        let rep = resolution_analysis(1.0 / denom as f64)?;
        rows.push(vec![format!("1/{denom}"), num(rep.rgb_factor), num(rep.pol_factor)]);
    }
    write_csv(dir.join("resolution.csv"), &["r", "rgb_factor", "pol_factor"], &rows)?;

    let base = s.sensor()?;
    let mut ts: Vec<f64> = (1..=20).map(|i| i as f64 * 0.05).collect();
    if let Some(t) = common.t.or(s.cfg.get("t")?) {
        ts.push(t);
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut rows = Vec::new();
    for t in ts {
        let rep = snr_analysis(&SensorConfig {
            transmittance: t,
            ..base.clone()
        })?;
        if (t - base.transmittance).abs() < 1e-12 {
            println!("t {t} snr_ratio {}", num(rep.rgb_snr_ratio));
        }
        rows.push(vec![num(t), num(rep.rgb_snr_ratio)]);
    }
    write_csv(dir.join("snr.csv"), &["t", "snr_ratio"], &rows)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_layout(common: &Common, width: usize, height: usize) -> Result<()> {
    let s = Settings::new(common)?;
    let sensor = s.sensor()?;
    let layout = build_layout_with(s.sensor_kind()?, height, width, sensor.ratio, sensor.cfa)?;
    print!("{}", layout.dump());
    println!("polarized fraction {}", layout.polarized_fraction());
    Ok(())
}
