//! Face detection, randomized disguise search and alpha-transparency
//! cloaking.
//!
//! The crate is organized around one image type, [`RasterImage`], and a
//! from-scratch Haar cascade detector. [`perturb`] draws random shapes over
//! a detected face, [`search`] runs evasion campaigns and summarizes which
//! face regions the successful disguises covered, [`cloak`] builds
//! dual-layer PNGs whose composited view and raw RGB layer disagree, and
//! [`detector`] abstracts over the local engine and remote HTTP services.

pub mod cascade;
pub mod cloak;
pub mod detector;
pub mod error;
pub mod image;
pub mod perturb;
pub mod search;

pub use cascade::{detect_multiscale, parse_cascade, CascadeModel, Detection, DetectorParams};
pub use error::{Error, RemoteError, Result};
pub use image::{
    drop_alpha, flatten_alpha, load_image, resize_bilinear, save_png, to_grayscale, Layout,
    RasterImage, Rect,
};
pub use cloak::{build_cloak, optimize_alpha, verify_cloak, AlphaField, CloakConfig, CloakResult};
pub use detector::{compare_views, FaceDetector, LocalDetector, RemoteDetector, RemoteDetectorConfig};
pub use perturb::{apply_disguise, rasterize, PerturbationConfig, SeededRng, Shape};
pub use search::{
    replay_trial, run_campaign, sweep_opacity, verify_report, CampaignConfig, CampaignReport,
};
