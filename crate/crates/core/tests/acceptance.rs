//! End-to-end acceptance checks. Runs each criterion in turn, prints one
//! PASS/FAIL line per criterion (with its runtime bound), and exits non-zero
//! if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use facecloak::cascade::{integral, IntegralImage};
use facecloak::cloak::{
    alpha_gradient, blend, build_cloak, closed_form_alpha, export_cloak, mse, optimize_prepared,
    AlphaField, CloakConfig,
};
use facecloak::perturb::{apply_disguise, random_shape, SeededRng};
use facecloak::search::{
    replay_trial, run_campaign, sweep_opacity, verify_report, CampaignConfig, CampaignReport,
    KeyRegionMap,
};
use facecloak::{
    cloak, detect_multiscale, flatten_alpha, load_image, CascadeModel, DetectorParams, Layout,
    PerturbationConfig, RasterImage, Rect,
};

type Outcome = Result<String, String>;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn model() -> &'static CascadeModel {
    static MODEL: OnceLock<CascadeModel> = OnceLock::new();
    MODEL.get_or_init(|| CascadeModel::load(fixture("haarcascade_frontalface_default.xml")).unwrap())
}

fn portrait() -> &'static RasterImage {
    static IMG: OnceLock<RasterImage> = OnceLock::new();
    IMG.get_or_init(|| load_image(fixture("portrait.png")).unwrap())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_rgb(rng: &mut SeededRng, w: u32, h: u32, lo: f64, hi: f64) -> RasterImage {
    RasterImage::from_fn(w, h, Layout::Rgb, |_, _, _| rng.uniform(lo, hi))
}

fn random_gray_rgb(rng: &mut SeededRng, w: u32, h: u32, lo: f64, hi: f64) -> RasterImage {
    let levels: Vec<f64> = (0..w * h).map(|_| rng.uniform(lo, hi)).collect();
    RasterImage::from_fn(w, h, Layout::Rgb, |x, y, _| levels[(y * w + x) as usize])
}

// 1
fn integral_oracle() -> Outcome {
    let mut rng = SeededRng::new(0x1_0000, 0);
    let mut checked = 0;
    for img_i in 0..100 {
        let levels: Vec<u8> = (0..32 * 32).map(|_| rng.below(256) as u8).collect();
        let ii = IntegralImage::from_levels(32, 32, &levels);
        for _ in 0..10 {
            let x = rng.below(32) as u32;
            let y = rng.below(32) as u32;
            let w = 1 + rng.below((32 - x) as u64) as u32;
            let h = 1 + rng.below((32 - y) as u64) as u32;
            let (mut s, mut sq) = (0.0f64, 0.0f64);
            for yy in y..y + h {
                for xx in x..x + w {
                    let v = levels[(yy * 32 + xx) as usize] as f64;
                    s += v;
                    sq += v * v;
                }
            }
            ensure(ii.rect_sum(x, y, w, h) == s && ii.rect_sq_sum(x, y, w, h) == sq, || {
                format!("image {img_i}, rect ({x},{y},{w},{h}): sums differ")
            })?;
            checked += 1;
        }
    }
    // the float front end agrees with the byte path
    let img = RasterImage::from_bytes(2, 2, Layout::Gray, &[0, 255, 128, 7]).unwrap();
    ensure(integral(&img).rect_sum(0, 0, 2, 2) == 390.0, || "front end".into())?;
    Ok(format!("{checked} rectangles exact"))
}

// 2
fn detector_parity() -> Outcome {
    let text = std::fs::read_to_string(fixture("reference_detections.json")).map_err(|e| e.to_string())?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let params = DetectorParams {
        scale_factor: doc["scale_factor"].as_f64().unwrap(),
        min_neighbors: doc["min_neighbors"].as_u64().unwrap() as u32,
        min_size: doc["min_size"].as_u64().unwrap() as u32,
    };
    let mut faces = 0;
    let mut worst = 1.0f64;
    let images = doc["images"].as_array().unwrap();
    for entry in images {
        let file = entry["file"].as_str().unwrap();
        let reference: Vec<Rect> = entry["detections"]
            .as_array()
            .unwrap()
            .iter()
            .map(|d| {
                let v: Vec<i32> = d.as_array().unwrap().iter().map(|n| n.as_i64().unwrap() as i32).collect();
                Rect::new(v[0], v[1], v[2], v[3])
            })
            .collect();
        let img = load_image(fixture(file)).map_err(|e| e.to_string())?;
        let found = detect_multiscale(model(), &img, &params).map_err(|e| e.to_string())?;
        ensure(found.len() == reference.len(), || {
            format!("{file}: {} detections, reference has {}", found.len(), reference.len())
        })?;
        let mut used = vec![false; found.len()];
        for r in &reference {
            let best = found
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .map(|(i, d)| (i, d.rect.iou(r)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((i, iou)) if iou >= 0.6 => {
                    used[i] = true;
                    worst = worst.min(iou);
                }
                _ => return Err(format!("{file}: reference face {r:?} missed")),
            }
        }
        faces += reference.len();
    }
    ensure(images.len() >= 5, || "fewer than 5 fixture images".into())?;
    Ok(format!("{} images, {faces} faces matched, min IoU {worst:.3}", images.len()))
}

// 3
fn gradient_check() -> Outcome {
    let mut rng = SeededRng::new(0x3_0000, 0);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let b = random_rgb(&mut rng, 8, 8, 0.0, 0.5);
        let t = random_rgb(&mut rng, 8, 8, 0.0, 1.0);
        let alpha = AlphaField {
            width: 8,
            height: 8,
            // interior, so the +-h probes stay inside the feasible range
            values: (0..64).map(|_| rng.uniform(0.001, 0.999)).collect(),
        };
        let grad = alpha_gradient(&alpha, &b, &t, 1.0).unwrap();
        for i in 0..64 {
            let mut up = alpha.clone();
            let mut down = alpha.clone();
            up.values[i] += h;
            down.values[i] -= h;
            let fd = (mse(&blend(&up, &b, 1.0).unwrap(), &t).unwrap()
                - mse(&blend(&down, &b, 1.0).unwrap(), &t).unwrap())
                / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

// 4
fn optimizer_oracle() -> Outcome {
    let mut rng = SeededRng::new(0x4_0000, 0);
    // default schedule (1000 steps, within the 2000-step allowance)
    let cfg = CloakConfig {
        working_size: None,
        ..Default::default()
    };
    let long = CloakConfig { steps: 2000, ..cfg };
    let (mut worst_dist, mut worst_gap, mut worst_long) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    let inf_dist = |a: &AlphaField, b: &AlphaField| {
        a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    for pair in 0..20 {
        let t = random_gray_rgb(&mut rng, 64, 64, 0.0, 1.0);
        let b = random_gray_rgb(&mut rng, 64, 64, 0.0, cfg.background_scale);
        let res = optimize_prepared(&t, &b, &cfg).unwrap();
        let exact = closed_form_alpha(&t, &b, cfg.white_level).unwrap();
        let dist = inf_dist(&res.alpha, &exact);
        let exact_mse = mse(&blend(&exact, &b, cfg.white_level).unwrap(), &t).unwrap();
        let gap = res.final_mse - exact_mse;
        let first = res.loss_trace.first().unwrap().mse;
        ensure(dist <= 0.02, || format!("pair {pair}: inf-norm distance {dist:.4}"))?;
        ensure(gap <= 1e-4, || format!("pair {pair}: mse gap {gap:.2e}"))?;
        ensure(res.final_mse <= first, || format!("pair {pair}: loss rose"))?;
        worst_dist = worst_dist.max(dist);
        worst_gap = worst_gap.max(gap);
        // informational: constant-lr Adam drifts into a limit cycle later on
        worst_long = worst_long.max(inf_dist(&optimize_prepared(&t, &b, &long).unwrap().alpha, &exact));
    }
    Ok(format!(
        "{} steps: max inf-norm {worst_dist:.2e}, max mse gap {worst_gap:.2e} (2000 steps: inf-norm {worst_long:.2e}, not gated)",
        cfg.steps
    ))
}

// 5
fn cloak_pipeline() -> Outcome {
    let img = portrait();
    let cfg = CampaignConfig {
        iterations: 20,
        seed: 5,
        ..Default::default()
    };
    let report = run_campaign(img, model(), &cfg).map_err(|e| e.to_string())?;
    let face = report.face_box();
    let cloak_cfg = CloakConfig::default();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for trial in report.trials.iter().filter(|t| t.evaded) {
        let (disguised, _) = replay_trial(img, &report, trial.index).map_err(|e| e.to_string())?;
        // target is the original portrait; its working-size box is the reference
        let built = build_cloak(img, &disguised, &cloak_cfg).map_err(|e| e.to_string())?;
        let target_faces =
            detect_multiscale(model(), &built.target, &cfg.detector_params).map_err(|e| e.to_string())?;
        let Some(reference) = target_faces.iter().max_by(|a, b| a.weight.total_cmp(&b.weight)) else {
            return Err("no face in the working-size target".into());
        };
        let path = dir.path().join(format!("cloak_{}.png", trial.index));
        export_cloak(&built.background, &built.result.alpha, &path).map_err(|e| e.to_string())?;
        let v = cloak::verify_cloak(&path, model(), &cfg.detector_params, Some(&built.target))
            .map_err(|e| e.to_string())?;
        let stored = load_image(&path).map_err(|e| e.to_string())?;
        let human = flatten_alpha(&stored, [1.0; 3]).map_err(|e| e.to_string())?;
        let float_blend = blend(&built.result.alpha, &built.background, 1.0).map_err(|e| e.to_string())?;
        let export_psnr = facecloak::image::psnr(&human, &float_blend).map_err(|e| e.to_string())?;
        let (h_iou, m_iou) = (v.human_iou(&reference.rect), v.machine_iou(&reference.rect));
        if m_iou >= 0.3 {
            // quantization/scaling revived the face in the raw layer; try the next evading trial
            continue;
        }
        ensure(h_iou >= 0.5, || format!("trial {}: human-view IoU {h_iou:.3}", trial.index))?;
        ensure(export_psnr >= 40.0, || format!("export PSNR {export_psnr:.1} dB"))?;
        return Ok(format!(
            "trial {} (face {:?}): human IoU {h_iou:.3}, machine IoU {m_iou:.3}, export PSNR {export_psnr:.1} dB, final mse {:.2e}",
            trial.index, face, built.result.final_mse
        ));
    }
    Err(format!(
        "no evading trial among {} survived as a cloak background",
        report.evading_trials
    ))
}

fn default_campaign() -> &'static (CampaignReport, String, String) {
    static RUNS: OnceLock<(CampaignReport, String, String)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = CampaignConfig::default();
        let a = run_campaign(portrait(), model(), &cfg).unwrap();
        let b = run_campaign(portrait(), model(), &cfg).unwrap();
        let (ja, jb) = (a.to_json().unwrap(), b.to_json().unwrap());
        (a, ja, jb)
    })
}

/// Measured with seed 0 on the portrait fixture; tracked to catch drift.
const REGRESSION_EVADING_TRIALS: u32 = 150;

// 6
fn campaign_determinism() -> Outcome {
    let (report, ja, jb) = default_campaign();
    let cfg = &report.config;
    ensure(
        cfg.iterations == 200 && cfg.perturbation.shapes_per_iteration == 15 && cfg.perturbation.opacity_range == [1.0, 1.0],
        || "campaign config is not the 200 x 15 opaque default".into(),
    )?;
    ensure(report.evading_trials >= 1, || "no evading trial".into())?;
    ensure(ja.as_bytes() == jb.as_bytes(), || "reports differ between runs".into())?;
    ensure(report.evading_trials == REGRESSION_EVADING_TRIALS, || {
        format!(
            "evading trials {} differ from tracked regression value {REGRESSION_EVADING_TRIALS}",
            report.evading_trials
        )
    })?;
    Ok(format!(
        "evasion rate {:.3} ({} / 200), {} byte report identical across runs",
        report.evasion_rate,
        report.evading_trials,
        ja.len()
    ))
}

// 7
fn opacity_direction() -> Outcome {
    let levels = [0.0, 0.3, 1.0];
    let res = sweep_opacity(portrait(), model(), &CampaignConfig::default(), &levels).map_err(|e| e.to_string())?;
    let rate = |i: usize| res[i].evasion_rate;
    ensure(rate(0) == 0.0, || format!("opacity 0 evasion rate {}", rate(0)))?;
    ensure(rate(2) >= rate(1), || format!("rate(1.0) = {} < rate(0.3) = {}", rate(2), rate(1)))?;
    Ok(format!("rates: 0.0 -> {}, 0.3 -> {}, 1.0 -> {}", rate(0), rate(1), rate(2)))
}

// 8
fn region_consistency() -> Outcome {
    let (report, json, _) = default_campaign();
    verify_report(report)?;
    let face = report.face_box();
    let (w, h) = (face.w as usize, face.h as usize);
    let regions = KeyRegionMap::default();
    ensure(report.regions == regions, || "report region map differs from default".into())?;

    // independent oracle: walk every region pixel and ask the shapes directly
    let density = |blocks: &[[f64; 4]], evaded: bool| -> Option<f64> {
        let mut inside = vec![false; w * h];
        for b in blocks {
            let (x0, x1) = ((b[0] * w as f64).round() as usize, (b[1] * w as f64).round() as usize);
            let (y0, y1) = ((b[2] * h as f64).round() as usize, (b[3] * h as f64).round() as usize);
            for y in y0..y1.min(h) {
                for x in x0..x1.min(w) {
                    inside[y * w + x] = true;
                }
            }
        }
        let pixels = inside.iter().filter(|v| **v).count() as u64;
        let trials: Vec<_> = report.trials.iter().filter(|t| t.evaded == evaded).collect();
        if trials.is_empty() {
            return None;
        }
        let mut hits = 0u64;
        for t in &trials {
            for (i, _) in inside.iter().enumerate().filter(|(_, v)| **v) {
                let (px, py) = (face.x + (i % w) as i32, face.y + (i / w) as i32);
                if t.shapes.iter().any(|s| s.covers(px, py)) {
                    hits += 1;
                }
            }
        }
        Some(hits as f64 / (pixels as f64 * trials.len() as f64))
    };
    for (region, stat) in regions.regions.iter().zip(&report.region_stats) {
        ensure(stat.region == region.name, || "region order".into())?;
        let (e, d) = (density(&region.blocks, true), density(&region.blocks, false));
        ensure(stat.evading_density == e && stat.detected_density == d, || {
            format!("{}: report {:?}/{:?} vs oracle {e:?}/{d:?}", region.name, stat.evading_density, stat.detected_density)
        })?;
    }
    let dir = report.directional.as_ref().ok_or("directional statistic missing")?;
    let key = regions.union(&["brow", "jawline", "mouth"]).unwrap();
    let other = regions.union(&["forehead", "cheeks"]).unwrap();
    ensure(
        density(&key.blocks, true) == Some(dir.key_density) && density(&other.blocks, true) == Some(dir.other_density),
        || "directional densities disagree with the oracle".into(),
    )?;
    let persisted = CampaignReport::from_json(json).map_err(|e| e.to_string())?;
    ensure(persisted.directional.as_ref() == Some(dir), || "directional statistic not persisted".into())?;
    Ok(format!(
        "{} regions exact; directional key {:.4} vs other {:.4}, sign {:+} (tracked, not gated)",
        regions.regions.len(),
        dir.key_density,
        dir.other_density,
        dir.sign
    ))
}

// 9
fn determinism_sweep() -> Outcome {
    let face = Rect::new(67, 46, 95, 95);
    let cfg = PerturbationConfig::default();
    for stream in 0..50 {
        let a = random_shape(&mut SeededRng::new(9, stream), face, &cfg);
        let b = random_shape(&mut SeededRng::new(9, stream), face, &cfg);
        ensure(serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap(), || {
            format!("random_shape stream {stream}")
        })?;
    }
    for stream in 0..5 {
        let (ia, sa) = apply_disguise(portrait(), face, &cfg, &mut SeededRng::new(9, stream));
        let (ib, sb) = apply_disguise(portrait(), face, &cfg, &mut SeededRng::new(9, stream));
        let bits = |img: &RasterImage| img.pixels().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(sa == sb && bits(&ia) == bits(&ib), || format!("apply_disguise stream {stream}"))?;
    }
    let small = CampaignConfig {
        iterations: 12,
        seed: 99,
        ..Default::default()
    };
    let group = load_image(fixture("lfw_group.png")).map_err(|e| e.to_string())?;
    let ra = run_campaign(&group, model(), &small).map_err(|e| e.to_string())?.to_json().unwrap();
    let rb = run_campaign(&group, model(), &small).map_err(|e| e.to_string())?.to_json().unwrap();
    ensure(ra == rb, || "run_campaign differs between runs".into())?;
    let (_, ja, jb) = default_campaign();
    ensure(ja == jb, || "default campaign differs between runs".into())?;
    Ok("random_shape x50, apply_disguise x5, run_campaign x2 configs bit-identical".into())
}

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 9] = [
        (1, "integral-image oracle", Duration::from_secs(1), integral_oracle),
        (2, "detector parity", Duration::from_secs(10), detector_parity),
        (3, "alpha gradient check", Duration::from_secs(1), gradient_check),
        (4, "optimizer vs closed form", Duration::from_secs(30), optimizer_oracle),
        (5, "cloak pipeline", Duration::from_secs(60), cloak_pipeline),
        (6, "200-trial campaign", Duration::from_secs(120), campaign_determinism),
        (7, "opacity sweep direction", Duration::from_secs(240), opacity_direction),
        (8, "region analysis consistency", Duration::from_secs(60), region_consistency),
        (9, "determinism sweep", Duration::from_secs(60), determinism_sweep),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == id.to_string()) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; runtime over budget")),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {id} [{tag}] {name} ({:.2}s / limit {}s): {detail}",
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
