use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::group::{group_rectangles, Candidate, Detection};
use super::integral::{integral, IntegralImage};
use super::model::CascadeModel;
use crate::error::{Error, Result};
use crate::image::{resize_bilinear, to_grayscale, RasterImage, Rect};

/// Below this window standard deviation (8-bit intensity units) the
/// variance normalization factor is replaced by 1.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Relative tolerance used when grouping raw windows.
pub const GROUP_EPS: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub scale_factor: f64,
    pub min_neighbors: u32,
    /// Smallest window side, in original-image pixels, that is scanned.
    pub min_size: u32,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            scale_factor: 1.1,
            min_neighbors: 3,
            min_size: 30,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor > 1.0) || !self.scale_factor.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "scale_factor must be > 1, got {}",
                self.scale_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowResult {
    pub passed: bool,
    /// Sum of the last stage that was evaluated.
    pub score: f64,
    /// Number of stages the window cleared.
    pub stages_passed: usize,
}

/// Runs the cascade on one window whose top-left corner is `window.x, window.y`.
///
/// Features are scaled by `scale` (1 for pyramid scanning, where the
/// window always has the model's base size). Each stump compares its
/// feature response, divided by the scaled area ratio, against
/// `threshold * A * sigma`, where `sigma` is the intensity standard
/// deviation over the window inset by one base pixel and `A` that inset
/// area in base pixels.
pub fn evaluate_window(
    model: &CascadeModel,
    ii: &IntegralImage,
    window: Rect,
    scale: f64,
) -> WindowResult {
    assert!(scale >= 1.0, "scale must be >= 1");
    assert!(
        window.x >= 0
            && window.y >= 0
            && window.right() <= ii.width() as i32
            && window.bottom() <= ii.height() as i32,
        "window {window:?} outside the integral image"
    );
    let (wx, wy) = (window.x as u32, window.y as u32);
    let sc = |v: u32| (v as f64 * scale).round() as u32;

    let (inner_w, inner_h) = (model.window_w - 2, model.window_h - 2);
    let (nx, ny, nw, nh) = (wx + sc(1), wy + sc(1), sc(inner_w).max(1), sc(inner_h).max(1));
    let n = (nw * nh) as f64;
    let s = ii.rect_sum(nx, ny, nw, nh);
    let sq = ii.rect_sq_sum(nx, ny, nw, nh);
    let variance = ((n * sq - s * s) / (n * n)).max(0.0);
    let mut sigma = variance.sqrt();
    if sigma < SIGMA_FLOOR {
        sigma = 1.0;
    }
    let base_area = (inner_w * inner_h) as f64;
    let norm = base_area * sigma;
    let area_ratio = scale * scale;

    let mut score = 0.0;
    for (si, stage) in model.stages.iter().enumerate() {
        let mut sum = 0.0;
        for weak in &stage.classifiers {
            let feature = &model.features[weak.feature_index];
            let mut response = 0.0;
            for r in &feature.rects {
                response +=
                    r.weight * ii.rect_sum(wx + sc(r.x), wy + sc(r.y), sc(r.w).max(1), sc(r.h).max(1));
            }
            response /= area_ratio;
            sum += if response < weak.threshold * norm {
                weak.fail_value
            } else {
                weak.pass_value
            };
        }
        score = sum;
        if sum < stage.stage_threshold {
            return WindowResult {
                passed: false,
                score,
                stages_passed: si,
            };
        }
    }
    WindowResult {
        passed: true,
        score,
        stages_passed: model.stages.len(),
    }
}

/// One pyramid level: the factor the image was shrunk by and its size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidLevel {
    pub factor: f64,
    pub width: u32,
    pub height: u32,
    pub window: u32,
}

/// Pyramid levels scanned for an image of `width x height`. Level `k` uses
/// factor `scale_factor^k`, image size `round(dim / factor)` and maps back
/// to a window of side `round(base * factor)`. Levels whose mapped window
/// is smaller than `min_size` are skipped; the scan stops once the shrunk
/// image no longer holds a base window.
pub fn pyramid_levels(model: &CascadeModel, width: u32, height: u32, params: &DetectorParams) -> Vec<PyramidLevel> {
    let mut levels = Vec::new();
    let mut factor = 1.0f64;
    loop {
        let lw = (width as f64 / factor).round() as u32;
        let lh = (height as f64 / factor).round() as u32;
        if lw < model.window_w || lh < model.window_h {
            break;
        }
        let win_w = (model.window_w as f64 * factor).round() as u32;
        let win_h = (model.window_h as f64 * factor).round() as u32;
        if win_w >= params.min_size && win_h >= params.min_size {
            levels.push(PyramidLevel {
                factor,
                width: lw,
                height: lh,
                window: win_w.max(win_h),
            });
        }
        factor *= params.scale_factor;
    }
    levels
}

/// Window stride at a pyramid level: 2 px while the level is shrunk by at
/// most 2x, 1 px on coarser levels (same rule as the reference runtime).
pub fn scan_step(factor: f64) -> usize {
    if factor > 2.0 {
        1
    } else {
        2
    }
}

/// Raw accepted windows, in original-image coordinates, ordered by level
/// then row then column.
pub fn scan_candidates(model: &CascadeModel, img: &RasterImage, params: &DetectorParams) -> Result<Vec<Candidate>> {
    params.validate()?;
    let gray = to_grayscale(img);
    let (w, h) = (gray.width(), gray.height());
    let levels = pyramid_levels(model, w, h, params);
    let per_level: Vec<Vec<Candidate>> = levels
        .par_iter()
        .map(|level| {
            let scaled = resize_bilinear(&gray, level.width, level.height);
            let ii = integral(&scaled);
            let win_w = (model.window_w as f64 * level.factor).round() as i32;
            let win_h = (model.window_h as f64 * level.factor).round() as i32;
            let mut found = Vec::new();
            let step = scan_step(level.factor);
            for y in (0..=(level.height - model.window_h)).step_by(step) {
                for x in (0..=(level.width - model.window_w)).step_by(step) {
                    let win = Rect::new(x as i32, y as i32, model.window_w as i32, model.window_h as i32);
                    let res = evaluate_window(model, &ii, win, 1.0);
                    if res.passed {
                        let rect = Rect::new(
                            (x as f64 * level.factor).round() as i32,
                            (y as f64 * level.factor).round() as i32,
                            win_w,
                            win_h,
                        );
                        found.push(Candidate {
                            rect,
                            score: res.score,
                        });
                    }
                }
            }
            found
        })
        .collect();
    Ok(per_level.into_iter().flatten().collect())
}

/// Multi-scale face detection over an image pyramid.
///
/// Results are grouped, clipped to the image, and sorted by descending
/// weight with ties broken by `y` then `x`.
pub fn detect_multiscale(model: &CascadeModel, img: &RasterImage, params: &DetectorParams) -> Result<Vec<Detection>> {
    let candidates = scan_candidates(model, img, params)?;
    let mut found: Vec<Detection> = group_rectangles(&candidates, params.min_neighbors, GROUP_EPS)
        .into_iter()
        .filter_map(|mut d| {
            d.rect = d.rect.clip_to(img.width(), img.height())?;
            Some(d)
        })
        .collect();
    found.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.rect.y.cmp(&b.rect.y))
            .then(a.rect.x.cmp(&b.rect.x))
    });
    Ok(found)
}
