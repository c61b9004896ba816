//! Uniform face-detector interface over the local cascade engine and remote
//! HTTP detection services.

mod remote;
pub mod stub;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::{detect_multiscale, CascadeModel, Detection, DetectorParams};
use crate::error::{Error, Result};
use crate::image::{drop_alpha, flatten_alpha, load_image, RasterImage};

pub use remote::{
    remote_detect, set_remote_concurrency, BoxFormat, RemoteDetection, RemoteDetector,
    RemoteDetectorConfig, ResponseMapping,
};

pub trait FaceDetector: Sync {
    fn detect(&self, img: &RasterImage) -> Result<Vec<Detection>>;

    fn name(&self) -> String;
}

/// Adapter over [`detect_multiscale`]; returns its output unchanged.
#[derive(Debug, Clone, Copy)]
pub struct LocalDetector<'m> {
    pub model: &'m CascadeModel,
    pub params: DetectorParams,
}

impl<'m> LocalDetector<'m> {
    pub fn new(model: &'m CascadeModel, params: DetectorParams) -> Self {
        LocalDetector { model, params }
    }
}

impl FaceDetector for LocalDetector<'_> {
    fn detect(&self, img: &RasterImage) -> Result<Vec<Detection>> {
        detect_multiscale(self.model, img, &self.params)
    }

    fn name(&self) -> String {
        "local-haar-cascade".to_string()
    }
}

/// White background used to simulate how viewers composite transparent PNGs.
pub const WHITE: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualViewReport {
    pub detector: String,
    /// Detections on the PNG composited over white (what people see).
    pub human_view: Vec<Detection>,
    /// Detections on the raw RGB layer with alpha discarded.
    pub machine_view: Vec<Detection>,
}

/// Runs `detector` on both renderings of an RGBA image.
pub fn compare_image_views(img: &RasterImage, detector: &dyn FaceDetector) -> Result<DualViewReport> {
    if !img.has_alpha() {
        return Err(Error::NotRgba(img.shape_string()));
    }
    let human = flatten_alpha(img, WHITE)?;
    let machine = drop_alpha(img)?;
    Ok(DualViewReport {
        detector: detector.name(),
        human_view: detector.detect(&human)?,
        machine_view: detector.detect(&machine)?,
    })
}

/// Loads a PNG and compares its human and machine views. Images without an
/// alpha channel are treated as fully opaque, so both views coincide.
pub fn compare_views(img_path: impl AsRef<Path>, detector: &dyn FaceDetector) -> Result<DualViewReport> {
    let img = load_image(img_path)?;
    if img.has_alpha() {
        compare_image_views(&img, detector)
    } else {
        let rgb = img.to_rgb();
        let found = detector.detect(&rgb)?;
        Ok(DualViewReport {
            detector: detector.name(),
            human_view: found.clone(),
            machine_view: found,
        })
    }
}
