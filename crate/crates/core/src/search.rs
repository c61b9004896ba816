//! Evasion campaigns: repeatedly disguise the detected face, re-detect, and
//! summarize which face regions the successful disguises covered.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeModel, Detection, DetectorParams};
use crate::detector::{FaceDetector, LocalDetector};
use crate::error::{Error, Result};
use crate::image::{Layout, RasterImage, Rect};
use crate::perturb::{apply_disguise, coverage_mask, PerturbationConfig, SeededRng, Shape};

pub const REPORT_VERSION: u32 = 1;

/// Intersection over union of two boxes.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub iterations: u32,
    pub perturbation: PerturbationConfig,
    pub detector_params: DetectorParams,
    /// A post-perturbation detection overlapping the baseline box at least
    /// this much means the face was still found.
    pub success_iou: f64,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            iterations: 200,
            perturbation: PerturbationConfig::default(),
            detector_params: DetectorParams::default(),
            success_iou: 0.3,
            seed: 0,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.success_iou > 0.0 && self.success_iou < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "success_iou must be in (0, 1), got {}",
                self.success_iou
            )));
        }
        self.perturbation.validate()?;
        self.detector_params.validate()
    }
}

/// A named face region as one or more blocks of face-box fractions
/// `[x0, x1, y0, y1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRegion {
    pub name: String,
    pub blocks: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRegionMap {
    pub regions: Vec<KeyRegion>,
}

impl Default for KeyRegionMap {
    fn default() -> Self {
        let region = |name: &str, blocks: &[[f64; 4]]| KeyRegion {
            name: name.to_string(),
            blocks: blocks.to_vec(),
        };
        KeyRegionMap {
            regions: vec![
                region("brow", &[[0.10, 0.90, 0.18, 0.34]]),
                region("nose_bridge", &[[0.38, 0.62, 0.25, 0.60]]),
                region("mouth", &[[0.25, 0.75, 0.62, 0.80]]),
                region("jawline", &[[0.05, 0.95, 0.80, 1.00]]),
                region("forehead", &[[0.15, 0.85, 0.00, 0.18]]),
                region("cheeks", &[[0.05, 0.30, 0.40, 0.70], [0.70, 0.95, 0.40, 0.70]]),
            ],
        }
    }
}

impl KeyRegionMap {
    pub fn get(&self, name: &str) -> Option<&KeyRegion> {
        self.regions.iter().find(|r| r.name == name)
    }

    /// Union of the named regions, as a single multi-block region.
    pub fn union(&self, names: &[&str]) -> Option<KeyRegion> {
        let mut blocks = Vec::new();
        for n in names {
            blocks.extend(self.get(n)?.blocks.iter().copied());
        }
        Some(KeyRegion {
            name: names.join("+"),
            blocks,
        })
    }
}

impl KeyRegion {
    /// Membership grid over a `width x height` face box. Block edges are
    /// rounded to the nearest pixel; blocks are half-open and may overlap.
    pub fn pixel_mask(&self, width: u32, height: u32) -> Vec<bool> {
        let mut mask = vec![false; width as usize * height as usize];
        for &[fx0, fx1, fy0, fy1] in &self.blocks {
            let x0 = (fx0 * width as f64).round() as usize;
            let x1 = ((fx1 * width as f64).round() as usize).min(width as usize);
            let y0 = (fy0 * height as f64).round() as usize;
            let y1 = ((fy1 * height as f64).round() as usize).min(height as usize);
            for y in y0..y1 {
                for x in x0..x1 {
                    mask[y * width as usize + x] = true;
                }
            }
        }
        mask
    }
}

/// Per-pixel counts over the baseline face box, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl Heatmap {
    pub fn zeros(width: u32, height: u32) -> Self {
        Heatmap {
            width,
            height,
            counts: vec![0; width as usize * height as usize],
        }
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    fn add_mask(&mut self, bits: &[bool]) {
        for (c, &b) in self.counts.iter_mut().zip(bits) {
            *c += b as u32;
        }
    }

    /// Gray image with counts scaled linearly so the largest count is white.
    pub fn to_image(&self) -> RasterImage {
        let max = self.max().max(1) as f64;
        RasterImage::from_fn(self.width, self.height, Layout::Gray, |x, y, _| {
            self.counts[(y * self.width + x) as usize] as f64 / max
        })
    }
}

/// Per-region mean coverage, in map order.
pub fn region_density(heatmap: &Heatmap, regions: &KeyRegionMap, n_trials: u32) -> Result<Vec<(String, f64)>> {
    regions
        .regions
        .iter()
        .map(|r| Ok((r.name.clone(), single_region_density(heatmap, r, n_trials)?)))
        .collect()
}

/// Mean coverage of `region` per trial: summed counts over the region's
/// pixels divided by `pixels * n_trials`.
pub fn single_region_density(heatmap: &Heatmap, region: &KeyRegion, n_trials: u32) -> Result<f64> {
    if n_trials == 0 {
        return Err(Error::InvalidConfig("n_trials must be >= 1".into()));
    }
    let mask = region.pixel_mask(heatmap.width, heatmap.height);
    let pixels = mask.iter().filter(|m| **m).count();
    if pixels == 0 {
        return Err(Error::EmptyRegion(region.name.clone()));
    }
    let total: u64 = heatmap
        .counts
        .iter()
        .zip(&mask)
        .filter(|(_, m)| **m)
        .map(|(c, _)| *c as u64)
        .sum();
    Ok(total as f64 / (pixels as f64 * n_trials as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: u32,
    pub shapes: Vec<Shape>,
    pub post_detections: Vec<Detection>,
    pub evaded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStat {
    pub region: String,
    /// Mean coverage among evading trials; `None` when there were none.
    pub evading_density: Option<f64>,
    pub detected_density: Option<f64>,
}

/// Coverage of brow, jawline and mouth versus forehead and cheeks among the
/// evading trials. A positive `difference` means successful disguises
/// concentrated on the former.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalStat {
    pub key_regions: Vec<String>,
    pub other_regions: Vec<String>,
    pub key_density: f64,
    pub other_density: f64,
    pub difference: f64,
    pub sign: i8,
}

pub const KEY_REGIONS: [&str; 3] = ["brow", "jawline", "mouth"];
pub const OTHER_REGIONS: [&str; 2] = ["forehead", "cheeks"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub report_version: u32,
    pub detector: String,
    pub config: CampaignConfig,
    pub image_width: u32,
    pub image_height: u32,
    pub baseline_detection: Detection,
    pub trials: Vec<TrialRecord>,
    pub evading_trials: u32,
    pub evasion_rate: f64,
    pub regions: KeyRegionMap,
    pub success_heatmap: Heatmap,
    pub failure_heatmap: Heatmap,
    pub region_stats: Vec<RegionStat>,
    pub directional: Option<DirectionalStat>,
}

impl CampaignReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn face_box(&self) -> Rect {
        self.baseline_detection.rect
    }
}

/// Highest-weight detection, or an error when the image has no face.
pub fn baseline_face(img: &RasterImage, detector: &dyn FaceDetector) -> Result<Detection> {
    let found = detector.detect(img)?;
    found
        .into_iter()
        .max_by(|a, b| {
            a.weight
                .total_cmp(&b.weight)
                .then(b.rect.y.cmp(&a.rect.y))
                .then(b.rect.x.cmp(&a.rect.x))
        })
        .ok_or(Error::NoFaceInBaseline)
}

fn evaded(post: &[Detection], baseline: &Rect, success_iou: f64) -> bool {
    !post.iter().any(|d| iou(&d.rect, baseline) >= success_iou)
}

/// Runs a campaign against the local cascade detector.
pub fn run_campaign(img: &RasterImage, model: &CascadeModel, cfg: &CampaignConfig) -> Result<CampaignReport> {
    run_campaign_with(img, &LocalDetector::new(model, cfg.detector_params), cfg)
}

/// Runs `cfg.iterations` trials; trial `i` uses RNG substream `i` of
/// `cfg.seed`. Trials run in parallel but are aggregated in index order,
/// so the report does not depend on scheduling.
pub fn run_campaign_with(
    img: &RasterImage,
    detector: &dyn FaceDetector,
    cfg: &CampaignConfig,
) -> Result<CampaignReport> {
    cfg.validate()?;
    let baseline = baseline_face(img, detector)?;
    let face = baseline.rect;
    let trials: Vec<TrialRecord> = (0..cfg.iterations)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededRng::substream(cfg.seed, i as u64);
            let (perturbed, shapes) = apply_disguise(img, face, &cfg.perturbation, &mut rng);
            let post = detector.detect(&perturbed)?;
            Ok(TrialRecord {
                index: i,
                evaded: evaded(&post, &face, cfg.success_iou),
                shapes,
                post_detections: post,
            })
        })
        .collect::<Result<_>>()?;
    summarize(detector.name(), img.width(), img.height(), baseline, *cfg, trials)
}

/// Regenerates the perturbed image of trial `index` from the report's seed.
pub fn replay_trial(img: &RasterImage, report: &CampaignReport, index: u32) -> Result<(RasterImage, Vec<Shape>)> {
    if index >= report.config.iterations {
        return Err(Error::InvalidConfig(format!(
            "trial {index} out of range for {} iterations",
            report.config.iterations
        )));
    }
    if (img.width(), img.height()) != (report.image_width, report.image_height) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", report.image_width, report.image_height),
            found: img.shape_string(),
        });
    }
    let mut rng = SeededRng::substream(report.config.seed, index as u64);
    Ok(apply_disguise(img, report.face_box(), &report.config.perturbation, &mut rng))
}

fn summarize(
    detector: String,
    width: u32,
    height: u32,
    baseline: Detection,
    config: CampaignConfig,
    trials: Vec<TrialRecord>,
) -> Result<CampaignReport> {
    let face = baseline.rect;
    let (fw, fh) = (face.w as u32, face.h as u32);
    let mut success = Heatmap::zeros(fw, fh);
    let mut failure = Heatmap::zeros(fw, fh);
    for t in &trials {
        let mask = coverage_mask(&t.shapes, width, height).crop(face);
        if t.evaded {
            success.add_mask(mask.bits());
        } else {
            failure.add_mask(mask.bits());
        }
    }
    let evading = trials.iter().filter(|t| t.evaded).count() as u32;
    let detected = trials.len() as u32 - evading;
    let regions = KeyRegionMap::default();

    let density = |map: &Heatmap, region: &KeyRegion, n: u32| -> Result<Option<f64>> {
        if n == 0 {
            Ok(None)
        } else {
            single_region_density(map, region, n).map(Some)
        }
    };
    let region_stats = regions
        .regions
        .iter()
        .map(|r| {
            Ok(RegionStat {
                region: r.name.clone(),
                evading_density: density(&success, r, evading)?,
                detected_density: density(&failure, r, detected)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let directional = if evading == 0 {
        None
    } else {
        let key = regions.union(&KEY_REGIONS).expect("default regions");
        let other = regions.union(&OTHER_REGIONS).expect("default regions");
        let key_density = single_region_density(&success, &key, evading)?;
        let other_density = single_region_density(&success, &other, evading)?;
        let difference = key_density - other_density;
        Some(DirectionalStat {
            key_regions: KEY_REGIONS.iter().map(|s| s.to_string()).collect(),
            other_regions: OTHER_REGIONS.iter().map(|s| s.to_string()).collect(),
            key_density,
            other_density,
            difference,
            sign: if difference > 0.0 {
                1
            } else if difference < 0.0 {
                -1
            } else {
                0
            },
        })
    };

    Ok(CampaignReport {
        report_version: REPORT_VERSION,
        detector,
        config,
        image_width: width,
        image_height: height,
        baseline_detection: baseline,
        evading_trials: evading,
        evasion_rate: evading as f64 / config.iterations as f64,
        trials,
        regions,
        success_heatmap: success,
        failure_heatmap: failure,
        region_stats,
        directional,
    })
}

/// Recomputes every derived field of `report` from its trial list and
/// reports the first field that disagrees.
pub fn verify_report(report: &CampaignReport) -> std::result::Result<(), String> {
    if report.trials.len() != report.config.iterations as usize {
        return Err(format!(
            "{} trials recorded for {} iterations",
            report.trials.len(),
            report.config.iterations
        ));
    }
    let face = report.face_box();
    for (i, t) in report.trials.iter().enumerate() {
        if t.index as usize != i {
            return Err(format!("trial {i} carries index {}", t.index));
        }
        if t.evaded != evaded(&t.post_detections, &face, report.config.success_iou) {
            return Err(format!("trial {i}: evasion flag disagrees with its detections"));
        }
    }
    let rebuilt = summarize(
        report.detector.clone(),
        report.image_width,
        report.image_height,
        report.baseline_detection,
        report.config,
        report.trials.clone(),
    )
    .map_err(|e| e.to_string())?;
    let checks: [(&str, bool); 6] = [
        ("evading_trials", rebuilt.evading_trials == report.evading_trials),
        ("evasion_rate", rebuilt.evasion_rate == report.evasion_rate),
        ("success_heatmap", rebuilt.success_heatmap == report.success_heatmap),
        ("failure_heatmap", rebuilt.failure_heatmap == report.failure_heatmap),
        ("region_stats", rebuilt.region_stats == report.region_stats),
        ("directional", rebuilt.directional == report.directional),
    ];
    match checks.iter().find(|(_, ok)| !ok) {
        Some((field, _)) => Err(format!("{field} does not match the trials")),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpacityLevelResult {
    pub opacity: f64,
    pub evading_trials: u32,
    pub evasion_rate: f64,
}

/// Runs one campaign per opacity level with the same seed, so every level
/// draws identical shape geometry and colors.
pub fn sweep_opacity(
    img: &RasterImage,
    model: &CascadeModel,
    cfg: &CampaignConfig,
    opacity_levels: &[f64],
) -> Result<Vec<OpacityLevelResult>> {
    sweep_opacity_with(img, &LocalDetector::new(model, cfg.detector_params), cfg, opacity_levels)
}

pub fn sweep_opacity_with(
    img: &RasterImage,
    detector: &dyn FaceDetector,
    cfg: &CampaignConfig,
    opacity_levels: &[f64],
) -> Result<Vec<OpacityLevelResult>> {
    if let Some(bad) = opacity_levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::InvalidConfig(format!("opacity level {bad} outside [0, 1]")));
    }
    opacity_levels
        .iter()
        .map(|&opacity| {
            let level_cfg = CampaignConfig {
                perturbation: cfg.perturbation.with_opacity(opacity),
                ..*cfg
            };
            let report = run_campaign_with(img, detector, &level_cfg)?;
            Ok(OpacityLevelResult {
                opacity,
                evading_trials: report.evading_trials,
                evasion_rate: report.evasion_rate,
            })
        })
        .collect()
}
