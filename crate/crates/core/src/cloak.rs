//! Alpha-transparency cloaking: find a per-pixel alpha so that a dark
//! background layer, composited over white, reproduces a target image,
//! while the raw RGB layer (alpha discarded) shows only the background.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeModel, Detection, DetectorParams};
use crate::detector::{compare_image_views, FaceDetector, LocalDetector};
use crate::error::{Error, Result};
use crate::image::{
    flatten_alpha, load_image, psnr, resize_bilinear, save_png, to_grayscale, Layout, RasterImage, Rect,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloakConfig {
    pub steps: u32,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Multiplier applied to the background before optimization; keeps it
    /// bounded away from white so every target level is reachable.
    pub background_scale: f64,
    pub white_level: f64,
    pub log_interval: u32,
    /// Square side both inputs are resized to; `None` keeps the input size.
    pub working_size: Option<u32>,
}

impl Default for CloakConfig {
    fn default() -> Self {
        CloakConfig {
            steps: 1000,
            learning_rate: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            background_scale: 0.5,
            white_level: 1.0,
            log_interval: 100,
            working_size: Some(256),
        }
    }
}

impl CloakConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive".into());
        }
        if !(self.white_level > 0.0 && self.white_level <= 1.0) {
            return bad(format!("white_level {} outside (0, 1]", self.white_level));
        }
        if !(self.background_scale > 0.0 && self.background_scale < self.white_level) {
            return bad(format!(
                "background_scale must lie in (0, white_level), got {}",
                self.background_scale
            ));
        }
        if self.working_size == Some(0) {
            return bad("working_size must be positive".into());
        }
        Ok(())
    }
}

/// Per-pixel alpha, row-major, shared by all color channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaField {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl AlphaField {
    pub fn constant(width: u32, height: u32, value: f64) -> Self {
        AlphaField {
            width,
            height,
            values: vec![value; width as usize * height as usize],
        }
    }

    fn check(&self, img: &RasterImage) -> Result<()> {
        if self.width != img.width() || self.height != img.height() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.width, self.height),
                found: img.shape_string(),
            });
        }
        Ok(())
    }
}

fn check_pair(a: &RasterImage, b: &RasterImage) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            expected: a.shape_string(),
            found: b.shape_string(),
        });
    }
    Ok(())
}

/// Composite of `background` at per-pixel `alpha` over a solid `white_level`.
pub fn blend(alpha: &AlphaField, background: &RasterImage, white_level: f64) -> Result<RasterImage> {
    alpha.check(background)?;
    let ch = background.channels();
    let data = background
        .pixels()
        .chunks_exact(ch)
        .zip(&alpha.values)
        .flat_map(|(p, &a)| p.iter().map(move |&b| a * b + (1.0 - a) * white_level))
        .collect();
    RasterImage::new(background.width(), background.height(), background.layout(), data)
}

/// Pairwise (cascade) summation in slice order: halves are summed
/// recursively down to blocks of 8, which are summed left to right.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// Mean squared error over all samples, reduced by a row-major pairwise sum.
pub fn mse(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    check_pair(a, b)?;
    let sq: Vec<f64> = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .collect();
    Ok(pairwise_sum(&sq) / sq.len() as f64)
}

/// Gradient of `mse(blend(alpha), target)` with respect to each alpha:
/// `(2 / N) * sum_c (blend_c - t_c) * (b_c - w)`, N = total samples.
pub fn alpha_gradient(
    alpha: &AlphaField,
    background: &RasterImage,
    target: &RasterImage,
    white_level: f64,
) -> Result<Vec<f64>> {
    alpha.check(background)?;
    check_pair(background, target)?;
    let ch = background.channels();
    let scale = 2.0 / background.pixels().len() as f64;
    Ok(background
        .pixels()
        .chunks_exact(ch)
        .zip(target.pixels().chunks_exact(ch))
        .zip(&alpha.values)
        .map(|((b, t), &a)| {
            let g: f64 = b
                .iter()
                .zip(t)
                .map(|(&b, &t)| (a * b + (1.0 - a) * white_level - t) * (b - white_level))
                .sum();
            scale * g
        })
        .collect())
}

/// Per-pixel minimizer of the blend error, clamped to `[0, 1]`. With one
/// channel (or replicated gray) this is `(w - t) / (w - b)`; with distinct
/// channels it is the least-squares `sum (w - t_c)(w - b_c) / sum (w - b_c)^2`.
/// Where the background is within 1e-9 of white, alpha has no effect and 0
/// is returned.
pub fn closed_form_alpha(target: &RasterImage, background: &RasterImage, white_level: f64) -> Result<AlphaField> {
    check_pair(background, target)?;
    let ch = background.channels();
    let values = background
        .pixels()
        .chunks_exact(ch)
        .zip(target.pixels().chunks_exact(ch))
        .map(|(b, t)| {
            let (mut num, mut den) = (0.0, 0.0);
            for (&b, &t) in b.iter().zip(t) {
                num += (white_level - t) * (white_level - b);
                den += (white_level - b) * (white_level - b);
            }
            if den.sqrt() < 1e-9 {
                0.0
            } else {
                (num / den).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(AlphaField {
        width: background.width(),
        height: background.height(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected Adam step on `params`, followed by projection
    /// onto `[0, 1]`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &CloakConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let update = cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_epsilon);
            *p = (*p - update).clamp(0.0, 1.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u32,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloakResult {
    pub alpha: AlphaField,
    /// Loss before update `step`, for every step that is a multiple of
    /// `log_interval` (always including step 0).
    pub loss_trace: Vec<LossPoint>,
    /// Loss after the last update.
    pub final_mse: f64,
}

/// Resizes to the working size, converts to gray and replicates to three
/// channels; an alpha channel is ignored.
pub fn prepare_layer(img: &RasterImage, working_size: Option<u32>) -> RasterImage {
    let gray = to_grayscale(img);
    let gray = match working_size {
        Some(s) => resize_bilinear(&gray, s, s),
        None => gray,
    };
    RasterImage::from_fn(gray.width(), gray.height(), Layout::Rgb, |x, y, _| gray.get(x, y, 0))
}

/// Prepared `(target, background_scaled)` pair at the working size.
pub fn prepare_inputs(
    target: &RasterImage,
    background_raw: &RasterImage,
    cfg: &CloakConfig,
) -> Result<(RasterImage, RasterImage)> {
    cfg.validate()?;
    let tgt = prepare_layer(target, cfg.working_size);
    let bg = prepare_layer(background_raw, cfg.working_size);
    check_pair(&tgt, &bg)?;
    let scaled = RasterImage::from_fn(bg.width(), bg.height(), Layout::Rgb, |x, y, c| {
        bg.get(x, y, c) * cfg.background_scale
    });
    Ok((tgt, scaled))
}

/// Preprocesses both images, then runs [`optimize_prepared`].
pub fn optimize_alpha(target: &RasterImage, background_raw: &RasterImage, cfg: &CloakConfig) -> Result<CloakResult> {
    let (tgt, bg) = prepare_inputs(target, background_raw, cfg)?;
    optimize_prepared(&tgt, &bg, cfg)
}

/// Minimizes `mse(blend(alpha, background), target)` with projected Adam,
/// starting from alpha = 1 everywhere. Inputs are used as given.
pub fn optimize_prepared(target: &RasterImage, background: &RasterImage, cfg: &CloakConfig) -> Result<CloakResult> {
    cfg.validate()?;
    check_pair(background, target)?;
    let white = cfg.white_level;
    let mut alpha = AlphaField::constant(background.width(), background.height(), 1.0);
    let mut adam = AdamState::new(alpha.values.len());
    let loss = |a: &AlphaField| -> Result<f64> { mse(&blend(a, background, white)?, target) };
    let mut trace = Vec::new();
    for step in 0..cfg.steps {
        if cfg.log_interval > 0 && step % cfg.log_interval == 0 {
            trace.push(LossPoint {
                step,
                mse: loss(&alpha)?,
            });
        }
        let grad = alpha_gradient(&alpha, background, target, white)?;
        adam.step(&mut alpha.values, &grad, cfg);
    }
    if trace.is_empty() {
        trace.push(LossPoint {
            step: 0,
            mse: loss(&AlphaField::constant(alpha.width, alpha.height, 1.0))?,
        });
    }
    let final_mse = loss(&alpha)?;
    Ok(CloakResult {
        alpha,
        loss_trace: trace,
        final_mse,
    })
}

/// RGBA image whose RGB layer is the scaled background and whose alpha
/// channel is the optimized field (straight alpha).
pub fn cloak_image(background_scaled: &RasterImage, alpha: &AlphaField) -> Result<RasterImage> {
    alpha.check(background_scaled)?;
    let rgb = background_scaled.to_rgb();
    let data = rgb
        .pixels()
        .chunks_exact(3)
        .zip(&alpha.values)
        .flat_map(|(p, &a)| [p[0], p[1], p[2], a])
        .collect();
    RasterImage::new(rgb.width(), rgb.height(), Layout::Rgba, data)
}

/// Writes [`cloak_image`] as an 8-bit RGBA PNG.
pub fn export_cloak(background_scaled: &RasterImage, alpha: &AlphaField, path: impl AsRef<Path>) -> Result<()> {
    save_png(&cloak_image(background_scaled, alpha)?, path)
}

/// PSNR between the white-composited 8-bit cloak and the float blend it
/// encodes; measures how much export quantization moved the human view.
pub fn export_psnr(background_scaled: &RasterImage, alpha: &AlphaField, white_level: f64) -> Result<f64> {
    let stored = cloak_image(background_scaled, alpha)?.quantized();
    let human = flatten_alpha(&stored, [white_level; 3])?;
    psnr(&human, &blend(alpha, &background_scaled.to_rgb(), white_level)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cloak {
    pub image: RasterImage,
    pub target: RasterImage,
    pub background: RasterImage,
    pub result: CloakResult,
}

/// Preprocess, optimize, and package the result as an RGBA image.
pub fn build_cloak(target: &RasterImage, background_raw: &RasterImage, cfg: &CloakConfig) -> Result<Cloak> {
    let (tgt, bg) = prepare_inputs(target, background_raw, cfg)?;
    let result = optimize_prepared(&tgt, &bg, cfg)?;
    let image = cloak_image(&bg, &result.alpha)?;
    Ok(Cloak {
        image,
        target: tgt,
        background: bg,
        result,
    })
}

/// Writes the loss trace as `step<TAB>mse` lines under a header.
pub fn write_loss_trace(path: impl AsRef<Path>, trace: &[LossPoint]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    writeln!(out, "step\tmse").map_err(io_err)?;
    for p in trace {
        writeln!(out, "{}\t{:.9e}", p.step, p.mse).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloakVerification {
    pub detector: String,
    /// Detections on the cloak composited over white.
    pub human_view: Vec<Detection>,
    /// Detections on the raw RGB layer.
    pub machine_view: Vec<Detection>,
    /// PSNR of the human view against the supplied target, in dB.
    pub psnr_vs_target: Option<f64>,
}

impl CloakVerification {
    /// Best overlap of a human-view detection with `reference`.
    pub fn human_iou(&self, reference: &Rect) -> f64 {
        best_iou(&self.human_view, reference)
    }

    pub fn machine_iou(&self, reference: &Rect) -> f64 {
        best_iou(&self.machine_view, reference)
    }
}

pub fn best_iou(dets: &[Detection], reference: &Rect) -> f64 {
    dets.iter().map(|d| d.rect.iou(reference)).fold(0.0, f64::max)
}

/// Loads an RGBA cloak and runs the local detector on both views.
pub fn verify_cloak(
    path: impl AsRef<Path>,
    model: &CascadeModel,
    params: &DetectorParams,
    target: Option<&RasterImage>,
) -> Result<CloakVerification> {
    let img = load_image(path)?;
    verify_cloak_with(&img, &LocalDetector::new(model, *params), target)
}

pub fn verify_cloak_with(
    cloak: &RasterImage,
    detector: &dyn FaceDetector,
    target: Option<&RasterImage>,
) -> Result<CloakVerification> {
    let views = compare_image_views(cloak, detector)?;
    let psnr_vs_target = match target {
        Some(t) => Some(psnr(&flatten_alpha(cloak, [1.0; 3])?, &t.to_rgb())?),
        None => None,
    };
    Ok(CloakVerification {
        detector: views.detector,
        human_view: views.human_view,
        machine_view: views.machine_view,
        psnr_vs_target,
    })
}
