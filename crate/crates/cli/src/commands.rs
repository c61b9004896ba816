use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use facecloak::cloak::{self, CloakConfig};
use facecloak::detector::{compare_views, FaceDetector, LocalDetector, RemoteDetector};
use facecloak::search::{self, CampaignConfig};
use facecloak::{
    drop_alpha, flatten_alpha, load_image, save_png, CascadeModel, DetectorParams, PerturbationConfig, Rect,
    RemoteDetectorConfig, SeededRng,
};
use serde_json::{json, Value};

use crate::config::{load_remote, FileConfig, Format};
use crate::{Cli, Command, DetectorArgs, ShapeArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_FAILURE: u8 = 2;
pub const EXIT_NO_FACE: u8 = 3;
pub const EXIT_BOTH_DETECTED: u8 = 4;
pub const EXIT_NEITHER_DETECTED: u8 = 5;
pub const EXIT_MACHINE_ONLY: u8 = 6;

/// Bad flags, flag combinations or configuration values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() || cause.downcast_ref::<toml::de::Error>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<facecloak::Error>() {
            return match e {
                facecloak::Error::InvalidConfig(_) => EXIT_USAGE,
                facecloak::Error::NoFaceInBaseline => EXIT_NO_FACE,
                _ => EXIT_FAILURE,
            };
        }
    }
    EXIT_FAILURE
}

struct Ctx {
    cascade: Option<PathBuf>,
    seed: u64,
    out: PathBuf,
    format: Format,
    file: FileConfig,
}

enum Detector {
    Local(CascadeModel, DetectorParams),
    Remote(RemoteDetector),
}

impl Detector {
    fn get(&self) -> Box<dyn FaceDetector + '_> {
        match self {
            Detector::Local(model, params) => Box::new(LocalDetector::new(model, *params)),
            Detector::Remote(r) => Box::new(RemoteDetector {
                config: r.config.clone(),
            }),
        }
    }

    fn params(&self) -> Option<DetectorParams> {
        match self {
            Detector::Local(_, p) => Some(*p),
            Detector::Remote(_) => None,
        }
    }

    fn echo(&self) -> Value {
        match self {
            Detector::Local(_, p) => json!({ "kind": "local", "params": p }),
            Detector::Remote(r) => json!({ "kind": "remote", "config": r.config }),
        }
    }
}

impl Ctx {
    fn detector_params(&self, args: &DetectorArgs) -> DetectorParams {
        let base = self.file.detector.unwrap_or_default();
        DetectorParams {
            scale_factor: args.scale_factor.unwrap_or(base.scale_factor),
            min_neighbors: args.min_neighbors.unwrap_or(base.min_neighbors),
            min_size: args.min_size.unwrap_or(base.min_size),
        }
    }

    fn model(&self) -> Result<CascadeModel> {
        let path = self
            .cascade
            .as_ref()
            .ok_or_else(|| usage("a cascade model is required: pass --cascade or set `cascade` in --config"))?;
        CascadeModel::load(path).with_context(|| format!("loading cascade {}", path.display()))
    }

    fn detector(&self, args: &DetectorArgs) -> Result<Detector> {
        let params = self.detector_params(args);
        params.validate()?;
        match &args.remote {
            None => Ok(Detector::Local(self.model()?, params)),
            Some(path) => {
                let config: RemoteDetectorConfig = match path {
                    Some(p) => load_remote(p)?,
                    None => self
                        .file
                        .remote
                        .clone()
                        .ok_or_else(|| usage("--remote without a path needs a [remote] table in --config"))?,
                };
                config.validate()?;
                Ok(Detector::Remote(RemoteDetector { config }))
            }
        }
    }

    fn perturbation(&self, args: &ShapeArgs) -> PerturbationConfig {
        let mut cfg = self.file.perturbation.unwrap_or_default();
        if let Some(n) = args.shapes {
            cfg.shapes_per_iteration = n;
        }
        if let Some(o) = args.opacity {
            cfg = cfg.with_opacity(o);
        }
        cfg
    }

    fn out_path(&self, explicit: &Option<PathBuf>, input: &Path, suffix: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| {
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            self.out.join(format!("{stem}{suffix}"))
        })
    }

    fn ensure_parent(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(())
    }

    fn emit(&self, doc: Value, text: impl FnOnce() -> String) {
        match self.format {
            Format::Json => println!("{}", serde_json::to_string_pretty(&doc).expect("serializable")),
            Format::Text => {
                println!("# config: {}", doc["config"]);
                print!("{}", text());
            }
        }
    }
}

fn parse_rect(s: &str) -> Result<Rect> {
    let parts: Vec<i32> = s
        .split(',')
        .map(|p| p.trim().parse::<i32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--face expects x,y,w,h integers, got `{s}`")))?;
    match parts[..] {
        [x, y, w, h] if w > 0 && h > 0 => Ok(Rect::new(x, y, w, h)),
        _ => Err(usage(format!("--face expects x,y,w,h with positive size, got `{s}`"))),
    }
}

pub fn run(cli: Cli) -> Result<u8> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path).map_err(|e| {
            if e.chain().any(|c| c.downcast_ref::<toml::de::Error>().is_some()) {
                usage(format!("{e:#}"))
            } else {
                e
            }
        })?,
        None => FileConfig::default(),
    };
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            return Err(usage("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    let ctx = Ctx {
        cascade: cli.cascade.or_else(|| file.cascade.clone()),
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out: cli.out.or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
        format: cli.format.or(file.format).unwrap_or_default(),
        file,
    };
    match cli.command {
        Command::Detect { image, detector } => detect(&ctx, &image, &detector),
        Command::Perturb {
            image,
            detector,
            shapes,
            face,
            output,
        } => perturb(&ctx, &image, &detector, &shapes, face.as_deref(), &output),
        Command::Campaign {
            image,
            detector,
            shapes,
            iterations,
            success_iou,
            sweep,
        } => campaign(&ctx, &image, &detector, &shapes, iterations, success_iou, sweep.as_deref()),
        Command::Cloak {
            target,
            background,
            steps,
            lr,
            size,
            background_scale,
            output,
        } => {
            let mut cfg = ctx.file.cloak.unwrap_or_default();
            cfg.steps = steps.unwrap_or(cfg.steps);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            cfg.background_scale = background_scale.unwrap_or(cfg.background_scale);
            if size.is_some() {
                cfg.working_size = size;
            }
            make_cloak(&ctx, &target, &background, cfg, &output)
        }
        Command::Verify {
            cloak,
            detector,
            target,
        } => verify(&ctx, &cloak, &detector, target.as_deref()),
        Command::Flatten {
            image,
            background,
            drop,
            output,
        } => flatten(&ctx, &image, background.as_deref(), drop, &output),
    }
}

fn detect(ctx: &Ctx, image: &Path, args: &DetectorArgs) -> Result<u8> {
    let det = ctx.detector(args)?;
    let img = load_image(image)?;
    let found = det.get().detect(&img)?;
    let doc = json!({
        "command": "detect",
        "config": { "image": image, "detector": det.echo() },
        "detections": found,
    });
    ctx.emit(doc, || {
        if found.is_empty() {
            "no faces\n".to_string()
        } else {
            found
                .iter()
                .map(|d| {
                    format!(
                        "face x={} y={} w={} h={} neighbors={} weight={:.4}\n",
                        d.rect.x, d.rect.y, d.rect.w, d.rect.h, d.neighbors, d.weight
                    )
                })
                .collect()
        }
    });
    Ok(if found.is_empty() { EXIT_NO_FACE } else { EXIT_OK })
}

fn perturb(
    ctx: &Ctx,
    image: &Path,
    args: &DetectorArgs,
    shape_args: &ShapeArgs,
    face: Option<&str>,
    output: &Option<PathBuf>,
) -> Result<u8> {
    let cfg = ctx.perturbation(shape_args);
    cfg.validate()?;
    let img = load_image(image)?;
    let (face, detector_echo) = match face {
        Some(s) => (parse_rect(s)?, Value::Null),
        None => {
            let det = ctx.detector(args)?;
            let detector = det.get();
            (search::baseline_face(&img, detector.as_ref())?.rect, det.echo())
        }
    };
    let mut rng = SeededRng::new(ctx.seed, 0);
    let (perturbed, shapes) = facecloak::apply_disguise(&img, face, &cfg, &mut rng);
    let png = ctx.out_path(output, image, "_perturbed.png");
    let sidecar = png.with_extension("json");
    ctx.ensure_parent(&png)?;
    save_png(&perturbed, &png)?;
    let config = json!({
        "image": image,
        "seed": ctx.seed,
        "face": face,
        "perturbation": cfg,
        "detector": detector_echo,
    });
    let record = json!({ "config": config, "shapes": shapes });
    std::fs::write(&sidecar, serde_json::to_string_pretty(&record)?)
        .with_context(|| format!("writing {}", sidecar.display()))?;
    let doc = json!({
        "command": "perturb",
        "config": config,
        "output": png,
        "shapes_file": sidecar,
        "shapes": shapes.len(),
    });
    ctx.emit(doc, || {
        format!(
            "drew {} shapes over face {},{},{},{}\nwrote {}\nwrote {}\n",
            shapes.len(),
            face.x,
            face.y,
            face.w,
            face.h,
            png.display(),
            sidecar.display()
        )
    });
    Ok(EXIT_OK)
}

fn campaign(
    ctx: &Ctx,
    image: &Path,
    args: &DetectorArgs,
    shape_args: &ShapeArgs,
    iterations: Option<u32>,
    success_iou: Option<f64>,
    sweep: Option<&[f64]>,
) -> Result<u8> {
    let det = ctx.detector(args)?;
    let section = ctx.file.campaign.clone().unwrap_or_default();
    let defaults = CampaignConfig::default();
    let cfg = CampaignConfig {
        iterations: iterations.or(section.iterations).unwrap_or(defaults.iterations),
        perturbation: ctx.perturbation(shape_args),
        detector_params: det.params().unwrap_or_default(),
        success_iou: success_iou.or(section.success_iou).unwrap_or(defaults.success_iou),
        seed: ctx.seed,
    };
    cfg.validate()?;
    let img = load_image(image)?;
    let detector = det.get();
    let report = search::run_campaign_with(&img, detector.as_ref(), &cfg)?;
    search::verify_report(&report).map_err(|e| anyhow!("report failed re-verification: {e}"))?;

    std::fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    let report_path = ctx.out.join("campaign_report.json");
    let success_path = ctx.out.join("success_heatmap.png");
    let failure_path = ctx.out.join("failure_heatmap.png");
    std::fs::write(&report_path, report.to_json()?).with_context(|| format!("writing {}", report_path.display()))?;
    save_png(&report.success_heatmap.to_image(), &success_path)?;
    save_png(&report.failure_heatmap.to_image(), &failure_path)?;

    let sweep_result = match sweep {
        Some(levels) => {
            let res = search::sweep_opacity_with(&img, detector.as_ref(), &cfg, levels)?;
            let path = ctx.out.join("opacity_sweep.json");
            std::fs::write(&path, serde_json::to_string_pretty(&res)?)
                .with_context(|| format!("writing {}", path.display()))?;
            Some(res)
        }
        None => None,
    };

    let config = json!({ "image": image, "campaign": cfg, "detector": det.echo(), "sweep": sweep });
    let doc = json!({
        "command": "campaign",
        "config": config,
        "baseline_detection": report.baseline_detection,
        "evading_trials": report.evading_trials,
        "evasion_rate": report.evasion_rate,
        "region_stats": report.region_stats,
        "directional": report.directional,
        "sweep": sweep_result,
        "report": report_path,
        "success_heatmap": success_path,
        "failure_heatmap": failure_path,
    });
    ctx.emit(doc, || {
        let mut s = format!(
            "baseline face {:?}\nevasion rate {:.4} ({} / {})\n",
            report.baseline_detection.rect, report.evasion_rate, report.evading_trials, cfg.iterations
        );
        for r in &report.region_stats {
            s += &format!(
                "region {:<12} evading {} detected {}\n",
                r.region,
                r.evading_density.map_or("-".into(), |d| format!("{d:.4}")),
                r.detected_density.map_or("-".into(), |d| format!("{d:.4}")),
            );
        }
        if let Some(d) = &report.directional {
            s += &format!(
                "directional key {:.4} other {:.4} sign {:+}\n",
                d.key_density, d.other_density, d.sign
            );
        }
        for level in sweep_result.iter().flatten() {
            s += &format!("opacity {:.3} evasion rate {:.4}\n", level.opacity, level.evasion_rate);
        }
        s += &format!("wrote {}\n", report_path.display());
        s
    });
    Ok(EXIT_OK)
}

fn make_cloak(ctx: &Ctx, target: &Path, background: &Path, cfg: CloakConfig, output: &Option<PathBuf>) -> Result<u8> {
    cfg.validate()?;
    let t = load_image(target)?;
    let b = load_image(background)?;
    let built = cloak::build_cloak(&t, &b, &cfg)?;
    let png = output.clone().unwrap_or_else(|| ctx.out.join("cloak.png"));
    let stem = png.file_stem().and_then(|s| s.to_str()).unwrap_or("cloak");
    let trace_path = png.with_file_name(format!("{stem}_loss.tsv"));
    ctx.ensure_parent(&png)?;
    save_png(&built.image, &png)?;
    cloak::write_loss_trace(&trace_path, &built.result.loss_trace)?;

    let exact = cloak::closed_form_alpha(&built.target, &built.background, cfg.white_level)?;
    let closed_form_mse = cloak::mse(
        &cloak::blend(&exact, &built.background, cfg.white_level)?,
        &built.target,
    )?;
    let export_psnr = cloak::export_psnr(&built.background, &built.result.alpha, cfg.white_level)?;
    let config = json!({ "target": target, "background": background, "cloak": cfg });
    let doc = json!({
        "command": "cloak",
        "config": config,
        "final_mse": built.result.final_mse,
        "closed_form_mse": closed_form_mse,
        "export_psnr_db": export_psnr,
        "loss_trace": built.result.loss_trace,
        "output": png,
        "loss_trace_file": trace_path,
    });
    ctx.emit(doc, || {
        format!(
            "final mse {:.3e} (closed form {:.3e}), export PSNR {:.1} dB\nwrote {}\nwrote {}\n",
            built.result.final_mse,
            closed_form_mse,
            export_psnr,
            png.display(),
            trace_path.display()
        )
    });
    Ok(EXIT_OK)
}

fn verify(ctx: &Ctx, path: &Path, args: &DetectorArgs, target: Option<&Path>) -> Result<u8> {
    let det = ctx.detector(args)?;
    let report = compare_views(path, det.get().as_ref())?;
    let psnr = match target {
        Some(t) => {
            let cloak_img = load_image(path)?;
            let human = if cloak_img.has_alpha() {
                flatten_alpha(&cloak_img, [1.0; 3])?
            } else {
                cloak_img.to_rgb()
            };
            let target_img = load_image(t)?.to_rgb();
            Some(facecloak::image::psnr(&human, &target_img)?)
        }
        None => None,
    };
    let human = !report.human_view.is_empty();
    let machine = !report.machine_view.is_empty();
    let (code, verdict) = match (human, machine) {
        (true, false) => (EXIT_OK, "cloaked: human view detected, machine view evaded"),
        (true, true) => (EXIT_BOTH_DETECTED, "not cloaked: both views detected"),
        (false, false) => (EXIT_NEITHER_DETECTED, "no face in either view"),
        (false, true) => (EXIT_MACHINE_ONLY, "inverted: only the machine view detected"),
    };
    let config = json!({ "cloak": path, "target": target, "detector": det.echo() });
    let doc = json!({
        "command": "verify",
        "config": config,
        "human_view": report.human_view,
        "machine_view": report.machine_view,
        "psnr_vs_target": psnr,
        "verdict": verdict,
    });
    ctx.emit(doc, || {
        let mut s = format!(
            "human view: {} detection(s)\nmachine view: {} detection(s)\n",
            report.human_view.len(),
            report.machine_view.len()
        );
        if let Some(p) = psnr {
            s += &format!("PSNR vs target {p:.2} dB\n");
        }
        s += verdict;
        s.push('\n');
        s
    });
    Ok(code)
}

fn flatten(ctx: &Ctx, image: &Path, background: Option<&[f64]>, drop: bool, output: &Option<PathBuf>) -> Result<u8> {
    let bg = match background {
        Some(&[r, g, b]) => [r, g, b],
        Some(_) => return Err(usage("--background expects r,g,b")),
        None => [1.0; 3],
    };
    if bg.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(usage("--background components must lie in [0, 1]"));
    }
    let img = load_image(image)?;
    let flat = if drop { drop_alpha(&img)? } else { flatten_alpha(&img, bg)? };
    let png = ctx.out_path(output, image, "_flat.png");
    ctx.ensure_parent(&png)?;
    save_png(&flat, &png)?;
    let config = json!({ "image": image, "mode": if drop { "drop" } else { "composite" }, "background": bg });
    ctx.emit(json!({ "command": "flatten", "config": config, "output": png }), || {
        format!("wrote {}\n", png.display())
    });
    Ok(EXIT_OK)
}
