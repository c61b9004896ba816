//! Random cosmetic shape perturbations drawn over a face box.

mod raster;
mod rng;
mod shape;

pub use raster::{apply_disguise, coverage_mask, rasterize, CoverageMask};
pub use rng::SeededRng;
pub use shape::{random_shape, ColorMode, Geometry, PerturbationConfig, Shape, ShapeKind};
