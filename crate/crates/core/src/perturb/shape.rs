use serde::{Deserialize, Serialize};

use super::rng::SeededRng;
use crate::error::{Error, Result};
use crate::image::Rect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Circle,
    Triangle,
    Line,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Rectangle,
        ShapeKind::Circle,
        ShapeKind::Triangle,
        ShapeKind::Line,
    ];
}

/// Shape outline in image pixel coordinates. Pixel `(x, y)` has its center
/// at `(x + 0.5, y + 0.5)`; rectangles use integer pixel spans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    Rectangle { rect: Rect },
    Circle { center: [f64; 2], radius: f64 },
    Triangle { vertices: [[f64; 2]; 3] },
    Line { from: [f64; 2], to: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    #[serde(flatten)]
    pub geometry: Geometry,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Outline band or line width in pixels.
    pub thickness: u32,
    pub filled: bool,
    /// Region the shape is clipped to (the face box it was generated for).
    pub clip: Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    UniformRandomRgb,
    GrayscaleTones,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub shapes_per_iteration: u32,
    /// Characteristic size as a fraction of the face box's smaller side.
    pub size_range: [f64; 2],
    pub thickness_range: [u32; 2],
    pub opacity_range: [f64; 2],
    pub color_mode: ColorMode,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            shapes_per_iteration: 15,
            size_range: [0.05, 0.60],
            thickness_range: [1, 8],
            opacity_range: [1.0, 1.0],
            color_mode: ColorMode::UniformRandomRgb,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.shapes_per_iteration == 0 {
            return bad("shapes_per_iteration must be >= 1".into());
        }
        let [s0, s1] = self.size_range;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return bad(format!("size_range {:?} must satisfy 0 < lo <= hi", self.size_range));
        }
        let [t0, t1] = self.thickness_range;
        if !(t0 >= 1 && t0 <= t1) {
            return bad(format!(
                "thickness_range {:?} must satisfy 1 <= lo <= hi",
                self.thickness_range
            ));
        }
        let [o0, o1] = self.opacity_range;
        if !(0.0 <= o0 && o0 <= o1 && o1 <= 1.0) {
            return bad(format!(
                "opacity_range {:?} must satisfy 0 <= lo <= hi <= 1",
                self.opacity_range
            ));
        }
        Ok(())
    }

    /// Same configuration with every shape drawn at exactly `opacity`.
    pub fn with_opacity(mut self, opacity: f64) -> Self {
        self.opacity_range = [opacity, opacity];
        self
    }
}

impl Shape {
    pub fn kind(&self) -> ShapeKind {
        match self.geometry {
            Geometry::Rectangle { .. } => ShapeKind::Rectangle,
            Geometry::Circle { .. } => ShapeKind::Circle,
            Geometry::Triangle { .. } => ShapeKind::Triangle,
            Geometry::Line { .. } => ShapeKind::Line,
        }
    }

    /// Generated size before clipping: the larger rectangle side, the circle
    /// diameter, the triangle's circumscribing diameter, or the line length.
    pub fn characteristic_size(&self) -> f64 {
        match self.geometry {
            Geometry::Rectangle { rect } => rect.w.max(rect.h) as f64,
            Geometry::Circle { radius, .. } => 2.0 * radius,
            Geometry::Triangle { vertices } => {
                let c = centroid_of_circle(&vertices);
                2.0 * dist(c, vertices[0])
            }
            Geometry::Line { from, to } => dist(from, to),
        }
    }

    /// Pixel bounding box of everything the shape may cover, clipped to
    /// its clip region and to a `width x height` canvas.
    pub fn clipped_bounds(&self, width: u32, height: u32) -> Option<Rect> {
        let half = self.thickness as f64 / 2.0;
        let raw = match self.geometry {
            Geometry::Rectangle { rect } => rect,
            Geometry::Circle { center, radius } => {
                let reach = if self.filled { radius } else { radius + half };
                float_box(center[0] - reach, center[1] - reach, center[0] + reach, center[1] + reach)
            }
            Geometry::Triangle { vertices } => {
                let pad = if self.filled { 0.0 } else { half };
                let xs = vertices.map(|v| v[0]);
                let ys = vertices.map(|v| v[1]);
                float_box(
                    xs.iter().copied().fold(f64::INFINITY, f64::min) - pad,
                    ys.iter().copied().fold(f64::INFINITY, f64::min) - pad,
                    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad,
                    ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad,
                )
            }
            Geometry::Line { from, to } => float_box(
                from[0].min(to[0]) - half,
                from[1].min(to[1]) - half,
                from[0].max(to[0]) + half,
                from[1].max(to[1]) + half,
            ),
        };
        raw.intersection(&self.clip)?.clip_to(width, height)
    }

    /// Whether the shape covers pixel `(px, py)`, ignoring color and opacity.
    pub fn covers(&self, px: i32, py: i32) -> bool {
        if !self.clip.contains(px, py) {
            return false;
        }
        let p = [px as f64 + 0.5, py as f64 + 0.5];
        let half = self.thickness as f64 / 2.0;
        match self.geometry {
            Geometry::Rectangle { rect } => {
                if !rect.contains(px, py) {
                    return false;
                }
                if self.filled {
                    return true;
                }
                let t = self.thickness as i32;
                let inner = Rect::new(rect.x + t, rect.y + t, rect.w - 2 * t, rect.h - 2 * t);
                !(inner.is_valid() && inner.contains(px, py))
            }
            Geometry::Circle { center, radius } => {
                let d2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
                if self.filled {
                    d2 <= radius * radius
                } else {
                    (d2.sqrt() - radius).abs() <= half
                }
            }
            Geometry::Triangle { vertices: [a, b, c] } => {
                if self.filled {
                    inside_triangle(p, a, b, c)
                } else {
                    segment_distance(p, a, b)
                        .min(segment_distance(p, b, c))
                        .min(segment_distance(p, c, a))
                        <= half
                }
            }
            Geometry::Line { from, to } => segment_distance(p, from, to) <= half,
        }
    }
}

fn float_box(x0: f64, y0: f64, x1: f64, y1: f64) -> Rect {
    let (x0, y0) = (x0.floor() as i32, y0.floor() as i32);
    let (x1, y1) = (x1.ceil() as i32, y1.ceil() as i32);
    Rect::new(x0, y0, (x1 - x0).max(1), (y1 - y0).max(1))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

// Circumcenter; generated triangles are inscribed in a circle, so this
// recovers the generation center.
fn centroid_of_circle(v: &[[f64; 2]; 3]) -> [f64; 2] {
    let [a, b, c] = *v;
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    if d.abs() < 1e-12 {
        return [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
    }
    let sq = |p: [f64; 2]| p[0] * p[0] + p[1] * p[1];
    let ux = (sq(a) * (b[1] - c[1]) + sq(b) * (c[1] - a[1]) + sq(c) * (a[1] - b[1])) / d;
    let uy = (sq(a) * (c[0] - b[0]) + sq(b) * (a[0] - c[0]) + sq(c) * (b[0] - a[0])) / d;
    [ux, uy]
}

fn edge(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Half-space test, edges inclusive, for either winding.
pub(crate) fn inside_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let area = edge(c, a, b);
    if area == 0.0 {
        return false;
    }
    let (e0, e1, e2) = (edge(p, a, b), edge(p, b, c), edge(p, c, a));
    if area > 0.0 {
        e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0
    } else {
        e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0
    }
}

pub(crate) fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

/// Draws one random shape centered uniformly inside `face`.
///
/// Draw order is fixed: kind, center x, center y, primary size, secondary
/// size, thickness, fill flag, opacity, color, then kind-specific
/// directions. Because the opacity draw always consumes one value, two
/// configurations that differ only in opacity produce identical geometry.
pub fn random_shape(rng: &mut SeededRng, face: Rect, cfg: &PerturbationConfig) -> Shape {
    let kind = ShapeKind::ALL[rng.below(4) as usize];
    let cx = face.x as f64 + rng.next_f64() * face.w as f64;
    let cy = face.y as f64 + rng.next_f64() * face.h as f64;
    let base = face.w.min(face.h) as f64;
    let size = rng.uniform(cfg.size_range[0], cfg.size_range[1]) * base;
    let size2 = rng.uniform(cfg.size_range[0], cfg.size_range[1]) * base;
    let thickness = rng.range_inclusive(cfg.thickness_range[0], cfg.thickness_range[1]);
    let filled = rng.coin();
    let opacity = rng.uniform(cfg.opacity_range[0], cfg.opacity_range[1]);
    let color = match cfg.color_mode {
        ColorMode::UniformRandomRgb => [rng.next_f64(), rng.next_f64(), rng.next_f64()],
        ColorMode::GrayscaleTones => {
            let v = rng.next_f64();
            [v, v, v]
        }
    };
    let half = size / 2.0;
    let geometry = match kind {
        ShapeKind::Rectangle => {
            let w = size.round().max(1.0);
            let h = size2.round().max(1.0);
            Geometry::Rectangle {
                rect: Rect::new(
                    (cx - w / 2.0).round() as i32,
                    (cy - h / 2.0).round() as i32,
                    w as i32,
                    h as i32,
                ),
            }
        }
        ShapeKind::Circle => Geometry::Circle {
            center: [cx, cy],
            radius: half,
        },
        ShapeKind::Triangle => {
            let vertices = [(); 3].map(|_| {
                let d = rng.unit_vector();
                [cx + half * d[0], cy + half * d[1]]
            });
            Geometry::Triangle { vertices }
        }
        ShapeKind::Line => {
            let d = rng.unit_vector();
            Geometry::Line {
                from: [cx - half * d[0], cy - half * d[1]],
                to: [cx + half * d[0], cy + half * d[1]],
            }
        }
    };
    Shape {
        geometry,
        color,
        opacity,
        thickness,
        filled,
        clip: face,
    }
}
