use serde::{Deserialize, Serialize};

use super::rng::SeededRng;
use super::shape::{random_shape, PerturbationConfig, Shape};
use crate::image::{Layout, RasterImage, Rect};

/// Draws `shape` with hard edges onto a copy of `img`.
///
/// Covered pixels become `opacity * color + (1 - opacity) * under`. On gray
/// images the color's BT.601 luma is used; alpha channels are left as is.
pub fn rasterize(img: &RasterImage, shape: &Shape) -> RasterImage {
    let mut out = img.clone();
    draw_into(&mut out, shape);
    out
}

pub(crate) fn draw_into(img: &mut RasterImage, shape: &Shape) {
    let Some(bounds) = shape.clipped_bounds(img.width(), img.height()) else {
        return;
    };
    let op = shape.opacity;
    let [r, g, b] = shape.color;
    let luma = 0.299 * r + 0.587 * g + 0.114 * b;
    let (layout, ch, width) = (img.layout(), img.channels(), img.width() as usize);
    let data = img.pixels_mut();
    for y in bounds.y..bounds.bottom() {
        for x in bounds.x..bounds.right() {
            if !shape.covers(x, y) {
                continue;
            }
            let i = (y as usize * width + x as usize) * ch;
            match layout {
                Layout::Gray => data[i] = blend(op, luma, data[i]),
                Layout::Rgb | Layout::Rgba => {
                    for (c, v) in shape.color.iter().enumerate() {
                        data[i + c] = blend(op, *v, data[i + c]);
                    }
                }
            }
        }
    }
}

#[inline]
fn blend(op: f64, color: f64, under: f64) -> f64 {
    (op * color + (1.0 - op) * under).clamp(0.0, 1.0)
}

/// Generates `cfg.shapes_per_iteration` shapes inside `face` and draws them,
/// in generation order, onto a copy of `img`.
pub fn apply_disguise(
    img: &RasterImage,
    face: Rect,
    cfg: &PerturbationConfig,
    rng: &mut SeededRng,
) -> (RasterImage, Vec<Shape>) {
    let shapes: Vec<Shape> = (0..cfg.shapes_per_iteration)
        .map(|_| random_shape(rng, face, cfg))
        .collect();
    let mut out = img.clone();
    for s in &shapes {
        draw_into(&mut out, s);
    }
    (out, shapes)
}

/// Binary per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMask {
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
}

impl CoverageMask {
    pub fn empty(width: u32, height: u32) -> Self {
        CoverageMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Restricts the mask to `rect`, returning a `rect.w x rect.h` mask.
    /// Parts of `rect` outside the canvas read as uncovered.
    pub fn crop(&self, rect: Rect) -> CoverageMask {
        let mut out = CoverageMask::empty(rect.w as u32, rect.h as u32);
        for dy in 0..rect.h {
            for dx in 0..rect.w {
                let (x, y) = (rect.x + dx, rect.y + dy);
                if x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height {
                    out.bits[(dy * rect.w + dx) as usize] = self.get(x as u32, y as u32);
                }
            }
        }
        out
    }
}

/// Union of the pixels covered by `shapes`, using the same predicate as
/// [`rasterize`].
pub fn coverage_mask(shapes: &[Shape], canvas_w: u32, canvas_h: u32) -> CoverageMask {
    let mut mask = CoverageMask::empty(canvas_w, canvas_h);
    for s in shapes {
        let Some(b) = s.clipped_bounds(canvas_w, canvas_h) else {
            continue;
        };
        for y in b.y..b.bottom() {
            for x in b.x..b.right() {
                if s.covers(x, y) {
                    mask.bits[y as usize * canvas_w as usize + x as usize] = true;
                }
            }
        }
    }
    mask
}
