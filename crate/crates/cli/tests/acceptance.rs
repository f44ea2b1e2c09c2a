//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the summary is always printed.

use polarsim::compensation::{joint_bilateral, BilateralParams};
use polarsim::experiment::{build_dataset, evaluate_method, train_model, ExperimentConfig};
use polarsim::metrics::{ssim_kernel, ssim_plane, SSIM_K1, SSIM_K2, SSIM_WINDOW};
use polarsim::nn::blocks::{confidence_blend, Afa, Ftb, Pcn, PcnShape, SkipConfig};
use polarsim::nn::{gradcheck, GradCheckOptions, GradCheckReport, Graph, Mode, ModelConfig, ParamStore, Sna, Tensor, Var};
use polarsim::pipeline::{prepare, simulate, Method};
use polarsim::scenegen::{generate, SceneKind, SceneParams};
use polarsim::sensor::{build_layout, capture, resolution_analysis, snr_analysis, PixelClass};
use polarsim::stokes::{angles_from_stokes, four_angles_from_stokes, stokes_from_angles, stokes_from_four_angles};
use polarsim::{PixelMask, Plane, PolarScene, RgbImage, SensorConfig, SensorKind, StokesImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn within(elapsed: Duration, limit: Duration) -> String {
    format!("{:.3?} (limit {:?})", elapsed, limit)
}

// 1 ------------------------------------------------------------------------

fn analytic() -> Outcome {
    let t0 = Instant::now();
    let res = resolution_analysis(1.0 / 16.0).map_err(|e| e.to_string())?;
    let snr = snr_analysis(&SensorConfig {
        transmittance: 0.7,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let want = (1.0f64 / 1.4).sqrt();
    let ok = (res.rgb_factor - 3.75).abs() <= 1e-12
        && (snr.rgb_snr_ratio - want).abs() <= 1e-12
        && elapsed < Duration::from_millis(1);
    check(
        ok,
        format!(
            "rgb_factor {} snr_ratio {:.6} (want {:.6}), {}",
            res.rgb_factor,
            snr.rgb_snr_ratio,
            want,
            within(elapsed, Duration::from_millis(1))
        ),
    )
}

// 2 ------------------------------------------------------------------------

fn stokes_round_trip() -> Outcome {
    const W: usize = 1000;
    const N: usize = 1_000_000;
    let t0 = Instant::now();
    let mut r = rng(2);
    let px: Vec<[f32; 3]> = (0..N)
        .map(|_| {
            let s0: f32 = r.gen_range(0.0..1.0);
            let p: f32 = r.gen_range(0.0..=1.0);
            let a: f32 = r.gen_range(0.0..std::f32::consts::PI);
            [s0, s0 * p * (2.0 * a).cos(), s0 * p * (2.0 * a).sin()]
        })
        .collect();
    let mut err32 = 0.0f32;
    for s in &px {
        let back = stokes_from_angles(angles_from_stokes(*s));
        for k in 0..3 {
            err32 = err32.max((back[k] - s[k]).abs());
        }
    }
    let pixel_time = t0.elapsed();
    // image route in f64 on the same pixels
    let plane = |k: usize| Plane::from_vec(W, N / W, px.iter().map(|s| s[k] as f64).collect()).unwrap();
    let stokes = StokesImage::new(plane(0), plane(1), plane(2)).map_err(|e| e.to_string())?;
    let angles = four_angles_from_stokes(&stokes, false).map_err(|e| e.to_string())?;
    let back = stokes_from_four_angles(&angles).map_err(|e| e.to_string())?;
    let mut err64 = 0.0f64;
    for (a, b) in stokes.planes().into_iter().zip(back.planes()) {
        for (u, v) in a.data().iter().zip(b.data()) {
            err64 = err64.max((u - v).abs());
        }
    }
    let ok = (err32 as f64) <= 1e-5 && err64 <= 1e-5 && pixel_time < Duration::from_secs(1);
    check(
        ok,
        format!(
            "max err f32 {err32:.2e}, f64 image route {err64:.2e} over {N} px, f32 pass {}",
            within(pixel_time, Duration::from_secs(1))
        ),
    )
}

// 3 ------------------------------------------------------------------------

fn noise_statistics() -> Outcome {
    let t0 = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for f_n in [0.72, 3.6] {
        let cfg = SensorConfig {
            noise_factor: f_n,
            seed: 3,
            ..Default::default()
        };
        let (w, h) = (336, 336);
        let layout = build_layout(SensorKind::Sparse, h, w, cfg.ratio).map_err(|e| e.to_string())?;
        let level = 0.5;
        let st = StokesImage::filled(w, h, [level, 0.0, 0.0]);
        let scene = PolarScene::new(st.clone(), st.clone(), st).map_err(|e| e.to_string())?;
        let raw = capture(&scene, &layout, &cfg).map_err(|e| e.to_string())?;
        let photons: Vec<f64> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| matches!(layout.class(x, y), PixelClass::Color(_)))
            .map(|(x, y)| raw.values.get(x, y) * cfg.full_scale)
            .collect();
        let n = photons.len() as f64;
        let mean = photons.iter().sum::<f64>() / n;
        let std = (photons.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let want = f_n * (level * cfg.full_scale).sqrt();
        let rel = (std - want).abs() / want;
        ok &= photons.len() >= 100_000 && rel <= 0.02;
        lines.push(format!("F_n {f_n}: std {std:.3} vs {want:.3} ({:.2}%, {} samples)", rel * 100.0, photons.len()));
    }
    let elapsed = t0.elapsed();
    ok &= elapsed < Duration::from_secs(5);
    check(ok, format!("{}, {}", lines.join("; "), within(elapsed, Duration::from_secs(5))))
}

// 4 ------------------------------------------------------------------------

/// Inputs away from the ReLU kink so a finite step cannot cross it.
fn away_from_zero(shape: [usize; 4], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut rng(seed)).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape();
        *store.get_mut(id) = Tensor::uniform(shape, 0.5, &mut r);
    }
}

type Case = (String, Box<dyn Fn() -> polarsim::Result<GradCheckReport>>);

fn unary(name: &str, shape: [usize; 4], f: fn(&mut Graph, Var) -> polarsim::Result<Var>) -> Case {
    (
        name.to_string(),
        Box::new(move || {
            gradcheck(&[away_from_zero(shape, 40)], &ParamStore::new(), |g, _, v| f(g, v[0]), GradCheckOptions::default())
        }),
    )
}

fn binary(name: &str, a: [usize; 4], b: [usize; 4], f: fn(&mut Graph, Var, Var) -> polarsim::Result<Var>) -> Case {
    (
        name.to_string(),
        Box::new(move || {
            let ins = [away_from_zero(a, 41), away_from_zero(b, 42)];
            gradcheck(&ins, &ParamStore::new(), |g, _, v| f(g, v[0], v[1]), GradCheckOptions::default())
        }),
    )
}

fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let s = [2, 4, 8, 8];
    let mut cases: Vec<Case> = vec![
        binary("conv2d 3x3", s, [4, 4, 3, 3], |g, x, w| g.conv2d(x, w, None, 1, 1)),
        binary("conv2d stride 2", s, [3, 4, 3, 3], |g, x, w| g.conv2d(x, w, None, 2, 1)),
        binary("conv2d 1x1", s, [2, 4, 1, 1], |g, x, w| g.conv2d(x, w, None, 1, 0)),
        (
            "conv2d bias".into(),
            Box::new(|| {
                let ins = [away_from_zero([2, 4, 8, 8], 43), away_from_zero([3, 4, 3, 3], 44), away_from_zero([1, 3, 1, 1], 45)];
                gradcheck(&ins, &ParamStore::new(), |g, _, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1), GradCheckOptions::default())
            }),
        ),
        (
            "conv_transpose2".into(),
            Box::new(|| {
                let ins = [away_from_zero([2, 4, 4, 4], 46), away_from_zero([4, 3, 2, 2], 47), away_from_zero([1, 3, 1, 1], 48)];
                gradcheck(&ins, &ParamStore::new(), |g, _, v| g.conv_transpose2(v[0], v[1], Some(v[2])), GradCheckOptions::default())
            }),
        ),
        unary("relu", s, |g, x| g.relu(x)),
        unary("sigmoid", s, |g, x| g.sigmoid(x)),
        unary("scale", s, |g, x| g.scale(x, -1.7)),
        unary("gap", s, |g, x| g.gap(x)),
        unary("slice_channels", s, |g, x| g.slice_channels(x, 1, 2)),
        unary("mix", s, |g, x| g.mix(x, &[vec![0.25, 0.25, 0.25, 0.25], vec![0.5, 0.0, -0.5, 0.0], vec![0.0, 0.5, 0.0, -0.5]])),
        binary("add", s, s, |g, a, b| g.add(a, b)),
        binary("sub", s, s, |g, a, b| g.sub(a, b)),
        binary("mul_channels", s, [2, 4, 1, 1], |g, a, b| g.mul_channels(a, b)),
        binary("concat", s, [2, 2, 8, 8], |g, a, b| g.concat(&[a, b])),
        unary("mean_abs", s, |g, x| {
            let t = Tensor::uniform([2, 4, 8, 8], 0.01, &mut rng(49));
            g.mean_abs(x, &t)
        }),
        unary("mean_sq", s, |g, x| {
            let t = Tensor::uniform([2, 4, 8, 8], 1.0, &mut rng(50));
            g.mean_sq(x, &t)
        }),
        unary("dot", s, |g, x| {
            let t = Tensor::uniform([2, 4, 8, 8], 1.0, &mut rng(51));
            g.dot(x, &t)
        }),
        (
            "blend".into(),
            Box::new(|| {
                let ins = [
                    away_from_zero([2, 4, 8, 8], 52),
                    Tensor::uniform([2, 1, 8, 8], 3.0, &mut rng(53)),
                    away_from_zero([2, 4, 8, 8], 54),
                    Tensor::uniform([2, 1, 8, 8], 3.0, &mut rng(55)),
                ];
                gradcheck(&ins, &ParamStore::new(), |g, _, v| g.blend(v[0], v[1], v[2], v[3]), GradCheckOptions::default())
            }),
        ),
    ];
    cases.push((
        "FTB".into(),
        Box::new(|| {
            let mut store = ParamStore::new();
            let ftb = Ftb::new(&mut store, "ftb", 4, &mut rng(60))?;
            randomize(&mut store, 61);
            gradcheck(&[away_from_zero([2, 4, 8, 8], 62)], &store, |g, s, v| ftb.forward(g, s, v[0]), GradCheckOptions::default())
        }),
    ));
    cases.push((
        "AFA".into(),
        Box::new(|| {
            let mut store = ParamStore::new();
            let afa = Afa::new(&mut store, "afa", 4, &mut rng(63))?;
            randomize(&mut store, 64);
            let ins = [away_from_zero([2, 4, 8, 8], 65), away_from_zero([2, 4, 8, 8], 66)];
            gradcheck(&ins, &store, |g, s, v| afa.forward(g, s, v[0], v[1]), GradCheckOptions::default())
        }),
    ));
    cases.push((
        "confidence_blend".into(),
        Box::new(|| {
            let ins = [
                away_from_zero([2, 2, 8, 8], 67),
                Tensor::uniform([2, 1, 8, 8], 3.0, &mut rng(68)),
                away_from_zero([2, 2, 8, 8], 69),
                Tensor::uniform([2, 1, 8, 8], 3.0, &mut rng(70)),
            ];
            gradcheck(&ins, &ParamStore::new(), |g, _, v| confidence_blend(g, v[0], v[1], v[2], v[3]), GradCheckOptions::default())
        }),
    ));
    for (label, skips, prior) in [
        ("PCN (FTB+AFA, prior)", SkipConfig { use_ftb: true, use_afa: true }, true),
        ("PCN (plain skips)", SkipConfig { use_ftb: false, use_afa: false }, false),
    ] {
        cases.push((
            label.into(),
            Box::new(move || {
                let shape = PcnShape {
                    channels: 2,
                    guide: 3,
                    base: 2,
                    depth: 3,
                    prior,
                };
                let mut store = ParamStore::new();
                let pcn = Pcn::new(&mut store, shape, skips, &mut rng(71))?;
                randomize(&mut store, 72);
                let mut ins = vec![
                    Tensor::uniform([2, 3, 8, 8], 1.0, &mut rng(73)),
                    Tensor::uniform([2, 2, 8, 8], 1.0, &mut rng(74)),
                    Tensor::uniform([2, 1, 8, 8], 1.0, &mut rng(75)).map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
                ];
                if prior {
                    ins.push(Tensor::uniform([2, 2, 8, 8], 1.0, &mut rng(76)));
                }
                let opts = GradCheckOptions {
                    max_per_tensor: Some(6),
                    ..Default::default()
                };
                gradcheck(
                    &ins,
                    &store,
                    |g, s, v| {
                        let o = pcn.forward(g, s, v[0], v[1], v[2], v.get(3).copied())?;
                        g.concat(&[o.first, o.c_first, o.second, o.c_second, o.blended])
                    },
                    opts,
                )
            }),
        ));
    }
    let mut worst = (0.0f64, String::new());
    let mut failed = Vec::new();
    for (name, f) in &cases {
        match f() {
            Ok(r) => {
                if r.max_rel_err >= 1e-4 {
                    failed.push(format!("{name} {:.2e} at {}", r.max_rel_err, r.worst));
                }
                if r.max_rel_err >= worst.0 {
                    worst = (r.max_rel_err, name.clone());
                }
            }
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }
    let elapsed = t0.elapsed();
    let ok = failed.is_empty() && elapsed < Duration::from_secs(60);
    check(
        ok,
        format!(
            "{} cases, worst rel err {:.2e} ({}){}, {}",
            cases.len(),
            worst.0,
            worst.1,
            if failed.is_empty() { String::new() } else { format!(", failures: {}", failed.join("; ")) },
            within(elapsed, Duration::from_secs(60))
        ),
    )
}

// 5 ------------------------------------------------------------------------

/// Literal double loop over every pixel pair, written from the definition.
fn bilateral_oracle(sparse: &StokesImage, mask: &PixelMask, guide: &RgbImage, sigma_s: f64, sigma_r: f64) -> StokesImage {
    let (w, h) = sparse.dims();
    let r = (3.0 * sigma_s).ceil() as i64;
    let mut out = StokesImage::filled(w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let v = if mask.get(x, y) {
                sparse.pixel(x, y)
            } else {
                let (mut num, mut den) = ([0.0; 3], 0.0);
                for qy in 0..h {
                    for qx in 0..w {
                        let (dx, dy) = (qx as i64 - x as i64, qy as i64 - y as i64);
                        if !mask.get(qx, qy) || dx.abs() > r || dy.abs() > r {
                            continue;
                        }
                        let (gp, gq) = (guide.pixel(x, y), guide.pixel(qx, qy));
                        let dg: f64 = (0..3).map(|c| (gp[c] - gq[c]).powi(2)).sum();
                        let wt = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma_s * sigma_s) - dg / (2.0 * sigma_r * sigma_r)).exp();
                        let s = sparse.pixel(qx, qy);
                        for k in 0..3 {
                            num[k] += wt * s[k];
                        }
                        den += wt;
                    }
                }
                [num[0] / den, num[1] / den, num[2] / den]
            };
            for (p, val) in out.planes_mut().into_iter().zip(v) {
                p.set(x, y, val);
            }
        }
    }
    out
}

/// SSIM from an explicit 11×11 Gaussian window at every valid position.
fn ssim_oracle(a: &Plane, b: &Plane) -> f64 {
    let k1 = ssim_kernel();
    let (w, h) = a.dims();
    let n = SSIM_WINDOW;
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..n {
                for i in 0..n {
                    let wt = k1[i] * k1[j];
                    let (p, q) = (a.get(x0 + i, y0 + j), b.get(x0 + i, y0 + j));
                    mx += wt * p;
                    my += wt * q;
                    sxx += wt * p * p;
                    syy += wt * q * q;
                    sxy += wt * p * q;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn oracle_equivalence() -> Outcome {
    let mut r = rng(5);
    let mut bil_err = 0.0f64;
    for trial in 0..20 {
        let (w, h) = (8, 8);
        let mask = PixelMask::from_fn(w, h, |x, y| (x + 3 * y + trial) % 5 == 0);
        let plane = |r: &mut ChaCha8Rng| Plane::from_fn(w, h, |_, _| r.gen_range(-1.0..1.0));
        let sparse = StokesImage::new(plane(&mut r), plane(&mut r), plane(&mut r)).unwrap();
        let guide = RgbImage::new(plane(&mut r), plane(&mut r), plane(&mut r)).unwrap();
        let (ss, sr) = (r.gen_range(0.7..2.5), r.gen_range(0.3..2.0));
        let fast = joint_bilateral(&sparse, &mask, &guide, BilateralParams { sigma_s: ss, sigma_r: sr }).map_err(|e| e.to_string())?;
        let slow = bilateral_oracle(&sparse, &mask, &guide, ss, sr);
        for (a, b) in fast.planes().into_iter().zip(slow.planes()) {
            for (u, v) in a.data().iter().zip(b.data()) {
                bil_err = bil_err.max((u - v).abs());
            }
        }
    }
    let mut ssim_err = 0.0f64;
    for _ in 0..20 {
        let a = Plane::from_fn(16, 16, |_, _| r.gen_range(0.0..1.0));
        let noise = Plane::from_fn(16, 16, |_, _| r.gen_range(-0.2..0.2));
        let b = a.zip_map(&noise, |v, n| (v + n).clamp(0.0, 1.0)).unwrap();
        let fast = ssim_plane(&a, &b, 1.0).map_err(|e| e.to_string())?;
        ssim_err = ssim_err.max((fast - ssim_oracle(&a, &b)).abs());
    }
    check(
        bil_err <= 1e-10 && ssim_err <= 1e-8,
        format!("joint bilateral max diff {bil_err:.1e} (tol 1e-10), SSIM max diff {ssim_err:.1e} (tol 1e-8)"),
    )
}

// 6 ------------------------------------------------------------------------

fn layout_exactness() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for denom in [4usize, 16, 64] {
        let r = 1.0 / denom as f64;
        let l = build_layout(SensorKind::Sparse, 64, 128, r).map_err(|e| e.to_string())?;
        let exact = l.polarized_count() * denom == 64 * 128;
        ok &= exact;
        parts.push(format!("1/{denom}: {}/{}", l.polarized_count(), 64 * 128));
    }
    let l = build_layout(SensorKind::Sparse, 64, 64, 1.0 / 16.0).map_err(|e| e.to_string())?;
    let mut tiles_ok = 0;
    for ty in 0..8 {
        for tx in 0..8 {
            let mut seen = [0usize; 4];
            for y in ty * 8..ty * 8 + 8 {
                for x in tx * 8..tx * 8 + 8 {
                    if let PixelClass::Polarized(a) = l.class(x, y) {
                        seen[a.index()] += 1;
                    }
                }
            }
            if seen == [1, 1, 1, 1] {
                tiles_ok += 1;
            }
        }
    }
    ok &= tiles_ok == 64;
    check(ok, format!("{}; r=1/16 tiles with one of each angle: {tiles_ok}/64", parts.join(", ")))
}

// 7 ------------------------------------------------------------------------

struct SeedRun {
    first5_decreasing: bool,
    s12_rmse_s12: f64,
    bilinear_rmse_s12: f64,
    s12_rmse_s012: f64,
    four_rmse_s012: f64,
}

fn run_seed(seed: u64) -> polarsim::Result<SeedRun> {
    let base = ExperimentConfig::default().with_seed(seed);
    let data = build_dataset(&base)?;
    let mut decreasing = true;
    let mut result = |mode: Mode| -> polarsim::Result<polarsim::metrics::QualityReport> {
        let mut cfg = base.clone();
        cfg.model.mode = mode;
        let (model, report) = train_model(&cfg, &data)?;
        let first: Vec<f64> = report.log.iter().take(5).map(|l| l.train.total).collect();
        decreasing &= first.len() == 5 && first.windows(2).all(|w| w[1] < w[0]);
        evaluate_method(&data.test, Method::ToySna, Some(&model))
    };
    let s12 = result(Mode::StokesS12)?;
    let four = result(Mode::FourAngle)?;
    let bilinear = evaluate_method(&data.test, Method::Bilinear, None)?;
    Ok(SeedRun {
        first5_decreasing: decreasing,
        s12_rmse_s12: s12.rmse_s12,
        bilinear_rmse_s12: bilinear.rmse_s12,
        s12_rmse_s012: s12.rmse_s012,
        four_rmse_s012: four.rmse_s012,
    })
}

fn training_ordering() -> Vec<(String, Outcome)> {
    let t0 = Instant::now();
    let mut runs = Vec::new();
    for seed in 0..5u64 {
        let ts = Instant::now();
        match run_seed(seed) {
            Ok(r) => {
                println!(
                    "    seed {seed}: s12 S12 {:.5} vs bilinear {:.5}; S012 s12 {:.5} vs four_angle {:.5}; first 5 epochs decreasing: {} ({:.0?})",
                    r.s12_rmse_s12,
                    r.bilinear_rmse_s12,
                    r.s12_rmse_s012,
                    r.four_rmse_s012,
                    r.first5_decreasing,
                    ts.elapsed()
                );
                runs.push(r);
            }
            Err(e) => println!("    seed {seed}: error {e}"),
        }
    }
    let elapsed = t0.elapsed();
    let n = runs.len();
    let dec = runs.iter().filter(|r| r.first5_decreasing).count();
    let b = runs.iter().filter(|r| r.s12_rmse_s12 < r.bilinear_rmse_s12).count();
    let c = runs.iter().filter(|r| r.s12_rmse_s012 < r.four_rmse_s012).count();
    let time = format!("total {:.0?}", elapsed);
    vec![
        ("7a training loss falls over the first 5 epochs".into(), check(n == 5 && dec == 5, format!("{dec}/5 seeds, both modes"))),
        ("7b stokes_s12 S12 RMSE below bilinear".into(), check(b >= 4, format!("{b}/5 seeds (need 4)"))),
        ("7c stokes_s12 S012 RMSE below four_angle".into(), check(c >= 4, format!("{c}/5 seeds (need 4), {time}"))),
    ]
}

// 8 ------------------------------------------------------------------------

fn structural() -> Outcome {
    let scene = generate(SceneKind::Shapes, &SceneParams::sized(32, 32), 8).map_err(|e| e.to_string())?;
    let raw = simulate(&scene, SensorKind::Sparse, &SensorConfig::default()).map_err(|e| e.to_string())?;
    let prep = prepare(&raw).map_err(|e| e.to_string())?;
    let input = prep.sna_input().map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        mode: Mode::StokesS12,
        ..Default::default()
    };
    let mut model = Sna::new(cfg.clone()).map_err(|e| e.to_string())?;
    let before = model.predict(&input).map_err(|e| e.to_string())?;
    let mut r = rng(8);
    let ids: Vec<_> = model.params().ids().filter(|&id| model.params().name(id).starts_with("pcn.")).collect();
    for id in &ids {
        let t = model.params_mut().get_mut(*id);
        for v in t.data_mut() {
            *v += r.gen_range(-0.5..0.5);
        }
    }
    let after = model.predict(&input).map_err(|e| e.to_string())?;
    let s0_same = before.stokes.s0.data().iter().zip(after.stokes.s0.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let s12_moved = before.stokes.s1 != after.stokes.s1;

    let off = Sna::new(ModelConfig { use_rgbrn: false, ..cfg }).map_err(|e| e.to_string())?;
    let p = off.predict(&input).map_err(|e| e.to_string())?;
    let rgb_same = p
        .rgb
        .channels()
        .into_iter()
        .zip(prep.rgb.channels())
        .all(|(a, b)| a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    check(
        s0_same && s12_moved && rgb_same,
        format!(
            "S0 bit-identical after perturbing {} PCN tensors: {s0_same} (S12 changed: {s12_moved}); RGBRN off passes demosaic through: {rgb_same}",
            ids.len()
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn determinism() -> Outcome {
    let tiny = "width=32\nheight=32\nn_scenes=4\nepochs=1\nbase_channels=2\ndepth=2\n";
    let run_all = |dir: &std::path::Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        let p = |n: &str| dir.join(n).display().to_string();
        let cfg = p("tiny.cfg");
        std::fs::write(&cfg, tiny).map_err(|e| e.to_string())?;
        let cmds: Vec<Vec<String>> = vec![
            vec!["gen".into(), "--scene".into(), "perlin".into(), "--seed".into(), "4".into(), "--out".into(), p("s.polr")],
            vec!["capture".into(), "--scene".into(), p("s.polr"), "--r".into(), "16".into(), "--seed".into(), "9".into(), "--out".into(), p("raw.polr")],
            vec!["compensate".into(), "--raw".into(), p("raw.polr"), "--method".into(), "joint-bilateral".into(), "--out".into(), p("jbf.polr")],
            vec!["eval".into(), "--scene".into(), p("s.polr"), "--pred".into(), p("jbf.polr"), "--out".into(), p("eval.csv")],
            vec!["train".into(), "--config".into(), cfg.clone(), "--out".into(), p("m.psna"), "--log".into(), p("train.csv")],
            vec!["compensate".into(), "--raw".into(), p("raw.polr"), "--method".into(), "toy-sna".into(), "--model".into(), p("m.psna"), "--out".into(), p("sna.polr")],
            vec!["bench".into(), "--config".into(), cfg.clone(), "--out".into(), p("bench.csv")],
            vec!["analyze".into(), "--t".into(), "0.7".into(), "--out".into(), p("an")],
        ];
        for c in cmds {
            polarsim_cli::run(std::iter::once("polarsim".to_string()).chain(c.iter().cloned())).map_err(|e| format!("{c:?}: {e:#}"))?;
        }
        ["s.polr", "raw.polr", "jbf.polr", "eval.csv", "m.psna", "train.csv", "sna.polr", "bench.csv", "an/resolution.csv", "an/snr.csv"]
            .iter()
            .map(|f| Ok((f.to_string(), std::fs::read(dir.join(f)).map_err(|e| e.to_string())?)))
            .collect()
    };
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let (ra, rb) = (run_all(a.path())?, run_all(b.path())?);
    let differing: Vec<&str> = ra.iter().zip(&rb).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} outputs byte-identical across two runs", ra.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test -- --list` and similar probes expect a quick exit
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let skip_training = std::env::var_os("POLARSIM_SKIP_TRAINING").is_some();
    let mut results: Vec<(String, Outcome)> = Vec::new();
    let simple: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 analytic resolution and SNR ratio", analytic),
        ("2 Stokes round trip", stokes_round_trip),
        ("3 noise statistics", noise_statistics),
        ("4 gradient checks", gradient_checks),
        ("5 oracle equivalence", oracle_equivalence),
        ("6 layout exactness", layout_exactness),
    ];
    for (name, f) in simple {
        let o = guarded(f);
        report(name, &o);
        results.push((name.to_string(), o));
    }
    if skip_training {
        println!("criterion 7 skipped (POLARSIM_SKIP_TRAINING set)");
    } else {
        match catch_unwind(training_ordering) {
            Ok(v) => {
                for (name, o) in v {
                    report(&name, &o);
                    results.push((name, o));
                }
            }
            Err(_) => {
                let o = Err("panicked".to_string());
                report("7 training", &o);
                results.push(("7 training".into(), o));
            }
        }
    }
    for (name, f) in [("8 structural separation", structural as fn() -> Outcome), ("9 CLI determinism", determinism)] {
        let o = guarded(f);
        report(name, &o);
        results.push((name.to_string(), o));
    }
    let failed = results.iter().filter(|r| r.1.is_err()).count();
    println!("acceptance: {} passed, {} failed", results.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn report(name: &str, o: &Outcome) {
    match o {
        Ok(d) => println!("PASS criterion {name}: {d}"),
        Err(d) => println!("FAIL criterion {name}: {d}"),
    }
}

