//! Viola-Jones Haar cascade detection: model parsing, integral images,
//! variance-normalized window evaluation, pyramid scanning and grouping.

mod detect;
mod group;
mod integral;
mod model;

pub use detect::{
    detect_multiscale, evaluate_window, pyramid_levels, scan_candidates, scan_step, DetectorParams,
    PyramidLevel, WindowResult, GROUP_EPS, SIGMA_FLOOR,
};
pub use group::{group_rectangles, similar, Candidate, Detection};
pub use integral::{integral, IntegralImage};
pub use model::{
    parse_cascade, CascadeModel, CascadeStage, HaarFeature, HaarRect, WeakClassifier,
};
