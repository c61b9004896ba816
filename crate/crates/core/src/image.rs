//! Normalized raster images and 8-bit PNG input/output.
//!
//! Pixels are stored as row-major, channel-interleaved `f64` intensities in
//! `[0, 1]`. Quantization to bytes happens only at the PNG boundary:
//! a stored value `v` is written as `round(v * 255)` and a byte `b` is read
//! back as `b / 255`. Channel order is always RGB(A).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Gray,
    Rgb,
    Rgba,
}

impl Layout {
    pub fn channels(self) -> usize {
        match self {
            Layout::Gray => 1,
            Layout::Rgb => 3,
            Layout::Rgba => 4,
        }
    }
}

/// Axis-aligned rectangle in pixel units with a top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl Rect {
    pub const fn new(x: i32, y: i32, w: i32, h: i32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0 && self.h > 0
    }

    pub fn right(&self) -> i32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i32 {
        self.y + self.h
    }

    pub fn area(&self) -> i64 {
        if self.is_valid() {
            self.w as i64 * self.h as i64
        } else {
            0
        }
    }

    pub fn contains(&self, px: i32, py: i32) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// Intersection over union; 0 for disjoint rectangles.
    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection(other).map_or(0, |r| r.area());
        let union = self.area() + other.area() - inter;
        if union <= 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Clips the rectangle to a `width` x `height` canvas.
    pub fn clip_to(&self, width: u32, height: u32) -> Option<Rect> {
        self.intersection(&Rect::new(0, 0, width as i32, height as i32))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    layout: Layout,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, layout: Layout, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * layout.channels();
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected: format!("{expected} samples"),
                found: format!("{} samples", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(RasterImage {
            width,
            height,
            layout,
            data,
        })
    }

    /// Image with every sample set to `value` (clamped into `[0, 1]`).
    pub fn filled(width: u32, height: u32, layout: Layout, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let n = width as usize * height as usize * layout.channels();
        RasterImage {
            width,
            height,
            layout,
            data: vec![value.clamp(0.0, 1.0); n],
        }
    }

    /// Builds an image from 8-bit samples, mapping byte `b` to `b / 255`.
    pub fn from_bytes(width: u32, height: u32, layout: Layout, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Self::new(width, height, layout, data)
    }

    /// Builds an image from a closure over `(x, y, channel)`; results are clamped.
    pub fn from_fn(
        width: u32,
        height: u32,
        layout: Layout,
        mut f: impl FnMut(u32, u32, usize) -> f64,
    ) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let ch = layout.channels();
        let mut data = Vec::with_capacity(width as usize * height as usize * ch);
        for y in 0..height {
            for x in 0..width {
                for c in 0..ch {
                    data.push(f(x, y, c).clamp(0.0, 1.0));
                }
            }
        }
        RasterImage {
            width,
            height,
            layout,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn channels(&self) -> usize {
        self.layout.channels()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: u32, y: u32, c: usize) -> f64 {
        self.data[self.index(x, y) + c]
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f64] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels()]
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels()
    }

    pub fn same_shape(&self, other: &RasterImage) -> bool {
        self.width == other.width && self.height == other.height && self.layout == other.layout
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{} {:?}", self.width, self.height, self.layout)
    }

    /// Quantizes every sample with `round(v * 255)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    /// Rounds every sample to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantized(&self) -> RasterImage {
        let data = self.data.iter().map(|&v| quantize(v) as f64 / 255.0).collect();
        RasterImage { data, ..*self }
    }

    pub fn has_alpha(&self) -> bool {
        self.layout == Layout::Rgba
    }

    /// Replicates a gray image into RGB; RGB passes through, RGBA drops alpha.
    pub fn to_rgb(&self) -> RasterImage {
        match self.layout {
            Layout::Rgb => self.clone(),
            Layout::Rgba => drop_alpha(self).expect("layout checked"),
            Layout::Gray => {
                let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
                RasterImage {
                    width: self.width,
                    height: self.height,
                    layout: Layout::Rgb,
                    data,
                }
            }
        }
    }

    /// Cuts out `rect`, which must lie inside the image.
    pub fn crop(&self, rect: Rect) -> Result<RasterImage> {
        let inside = rect.is_valid()
            && rect.x >= 0
            && rect.y >= 0
            && rect.right() <= self.width as i32
            && rect.bottom() <= self.height as i32;
        if !inside {
            return Err(Error::InvalidImage(format!(
                "crop {rect:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let ch = self.channels();
        let mut data = Vec::with_capacity(rect.area() as usize * ch);
        for y in rect.y..rect.bottom() {
            let start = self.index(rect.x as u32, y as u32);
            data.extend_from_slice(&self.data[start..start + rect.w as usize * ch]);
        }
        Ok(RasterImage {
            width: rect.w as u32,
            height: rect.h as u32,
            layout: self.layout,
            data,
        })
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// BT.601 luma. Gray input is returned unchanged; alpha is ignored.
pub fn to_grayscale(img: &RasterImage) -> RasterImage {
    if img.layout == Layout::Gray {
        return img.clone();
    }
    let ch = img.channels();
    let data = img
        .data
        .chunks_exact(ch)
        .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
        .collect();
    RasterImage {
        width: img.width,
        height: img.height,
        layout: Layout::Gray,
        data,
    }
}

/// Composites straight-alpha RGBA over a solid background:
/// `out = a * src + (1 - a) * bg` per channel.
pub fn flatten_alpha(img: &RasterImage, background: [f64; 3]) -> Result<RasterImage> {
    if img.layout != Layout::Rgba {
        return Err(Error::NotRgba(img.shape_string()));
    }
    let data = img
        .data
        .chunks_exact(4)
        .flat_map(|p| {
            let a = p[3];
            [0, 1, 2].map(|c| (a * p[c] + (1.0 - a) * background[c]).clamp(0.0, 1.0))
        })
        .collect();
    Ok(RasterImage {
        width: img.width,
        height: img.height,
        layout: Layout::Rgb,
        data,
    })
}

/// Discards the alpha channel and returns the RGB layer verbatim.
pub fn drop_alpha(img: &RasterImage) -> Result<RasterImage> {
    if img.layout != Layout::Rgba {
        return Err(Error::NotRgba(img.shape_string()));
    }
    let data = img
        .data
        .chunks_exact(4)
        .flat_map(|p| [p[0], p[1], p[2]])
        .collect();
    Ok(RasterImage {
        width: img.width,
        height: img.height,
        layout: Layout::Rgb,
        data,
    })
}

/// Bilinear resampling with corner-aligned sampling: output pixel `i` samples
/// source coordinate `i * (src - 1) / (dst - 1)`, so the first and last
/// pixels of each axis map onto each other. A one-pixel output axis samples
/// the source center. Coordinates are clamped at the edges.
pub fn resize_bilinear(img: &RasterImage, new_w: u32, new_h: u32) -> RasterImage {
    assert!(new_w > 0 && new_h > 0, "target size must be positive");
    if new_w == img.width && new_h == img.height {
        return img.clone();
    }
    let xs = sample_axis(img.width, new_w);
    let ys = sample_axis(img.height, new_h);
    let ch = img.channels();
    let mut data = Vec::with_capacity(new_w as usize * new_h as usize * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p00 = img.index(x0, y0);
            let p10 = img.index(x1, y0);
            let p01 = img.index(x0, y1);
            let p11 = img.index(x1, y1);
            for c in 0..ch {
                let top = img.data[p00 + c] * (1.0 - fx) + img.data[p10 + c] * fx;
                let bot = img.data[p01 + c] * (1.0 - fx) + img.data[p11 + c] * fx;
                data.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    RasterImage {
        width: new_w,
        height: new_h,
        layout: img.layout,
        data,
    }
}

fn sample_axis(src: u32, dst: u32) -> Vec<(u32, u32, f64)> {
    let last = (src - 1) as f64;
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                last / 2.0
            } else {
                i as f64 * last / (dst - 1) as f64
            };
            let lo = (pos.floor() as u32).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    decode_png(&bytes)
}

/// Decodes an in-memory PNG. Palette images are expanded, 16-bit samples
/// are reduced to 8 bits and gray+alpha is widened to RGBA.
pub fn decode_png(bytes: &[u8]) -> Result<RasterImage> {
    if bytes.len() < 8 || bytes[..8] != PNG_SIGNATURE {
        let kind = sniff_format(bytes);
        return Err(Error::UnsupportedFormat(kind.to_string()));
    }
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::CorruptImage(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::CorruptImage(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width, info.height);
    match info.color_type {
        png::ColorType::Grayscale => RasterImage::from_bytes(w, h, Layout::Gray, &buf),
        png::ColorType::Rgb => RasterImage::from_bytes(w, h, Layout::Rgb, &buf),
        png::ColorType::Rgba => RasterImage::from_bytes(w, h, Layout::Rgba, &buf),
        png::ColorType::GrayscaleAlpha => {
            let rgba: Vec<u8> = buf
                .chunks_exact(2)
                .flat_map(|p| [p[0], p[0], p[0], p[1]])
                .collect();
            RasterImage::from_bytes(w, h, Layout::Rgba, &rgba)
        }
        png::ColorType::Indexed => Err(Error::UnsupportedFormat(
            "unexpanded palette PNG".to_string(),
        )),
    }
}

fn sniff_format(bytes: &[u8]) -> &'static str {
    match bytes {
        [0xFF, 0xD8, 0xFF, ..] => "JPEG",
        [b'G', b'I', b'F', b'8', ..] => "GIF",
        [b'B', b'M', ..] => "BMP",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "WebP",
        [] => "empty file",
        _ => "unrecognized data",
    }
}

/// Encodes an 8-bit PNG; RGBA is written as straight (non-premultiplied) alpha.
pub fn encode_png(img: &RasterImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width, img.height);
        encoder.set_color(match img.layout {
            Layout::Gray => png::ColorType::Grayscale,
            Layout::Rgb => png::ColorType::Rgb,
            Layout::Rgba => png::ColorType::Rgba,
        });
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("in-memory PNG header");
        writer
            .write_image_data(&img.to_bytes())
            .expect("in-memory PNG body");
    }
    out
}

pub fn save_png(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    std::io::Write::write_all(&mut writer, &encode_png(img)).map_err(io_err)?;
    std::io::Write::flush(&mut writer).map_err(io_err)
}

/// Peak signal-to-noise ratio in dB for unit-range images.
pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            expected: a.shape_string(),
            found: b.shape_string(),
        });
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rgba(px: &[[f64; 4]]) -> RasterImage {
        RasterImage::new(
            px.len() as u32,
            1,
            Layout::Rgba,
            px.iter().flatten().copied().collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(RasterImage::new(0, 1, Layout::Gray, vec![]).is_err());
        assert!(RasterImage::new(2, 1, Layout::Gray, vec![0.5]).is_err());
        assert!(RasterImage::new(1, 1, Layout::Gray, vec![1.5]).is_err());
    }

    #[test]
    fn grayscale_weights() {
        let white = RasterImage::filled(3, 2, Layout::Rgb, 1.0);
        assert!(to_grayscale(&white).pixels().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let red = RasterImage::new(1, 1, Layout::Rgb, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((to_grayscale(&red).get(0, 0, 0) - 0.299).abs() < 1e-12);
        let g = to_grayscale(&red);
        assert_eq!(to_grayscale(&g), g);
    }

    #[test]
    fn grayscale_matches_scalar_recomputation() {
        let mut state = 0x9E37_79B9_7F4A_7C15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let img = RasterImage::from_fn(17, 9, Layout::Rgba, |_, _, _| next());
        let gray = to_grayscale(&img);
        for y in 0..9 {
            for x in 0..17 {
                let p = img.pixel(x, y);
                let expect = p[0] * 0.299 + p[1] * 0.587 + p[2] * 0.114;
                assert!((gray.get(x, y, 0) - expect).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn flatten_cases() {
        let opaque = rgba(&[[0.1, 0.2, 0.3, 1.0]]);
        let flat = flatten_alpha(&opaque, [0.7, 0.7, 0.7]).unwrap();
        assert_eq!(flat, drop_alpha(&opaque).unwrap());

        let clear = rgba(&[[0.1, 0.2, 0.3, 0.0]]);
        let flat = flatten_alpha(&clear, [1.0; 3]).unwrap();
        assert!(flat.pixels().iter().all(|&v| v == 1.0));

        let half = rgba(&[[0.2, 0.2, 0.2, 0.5]]);
        let flat = flatten_alpha(&half, [1.0; 3]).unwrap();
        assert!((flat.get(0, 0, 0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn flatten_is_affine_in_alpha() {
        for k in 0..=10 {
            let a = k as f64 / 10.0;
            let img = rgba(&[[0.3, 0.3, 0.3, a], [0.3, 0.3, 0.3, a]]);
            let flat = flatten_alpha(&img, [0.9; 3]).unwrap();
            let expect = a * 0.3 + (1.0 - a) * 0.9;
            assert!(flat.pixels().iter().all(|&v| (v - expect).abs() < 1e-12));
        }
    }

    #[test]
    fn alpha_ops_require_rgba() {
        let rgb = RasterImage::filled(2, 2, Layout::Rgb, 0.5);
        assert!(matches!(drop_alpha(&rgb), Err(Error::NotRgba(_))));
        assert!(matches!(flatten_alpha(&rgb, [1.0; 3]), Err(Error::NotRgba(_))));
    }

    #[test]
    fn drop_alpha_is_projection() {
        let img = rgba(&[[0.1, 0.2, 0.3, 0.4], [0.5, 0.6, 0.7, 0.0]]);
        assert_eq!(drop_alpha(&img).unwrap().pixels(), &[0.1, 0.2, 0.3, 0.5, 0.6, 0.7]);
    }

    #[test]
    fn resize_corner_aligned() {
        let img = RasterImage::new(2, 1, Layout::Gray, vec![0.0, 1.0]).unwrap();
        let up = resize_bilinear(&img, 3, 1);
        assert_eq!(up.pixels(), &[0.0, 0.5, 1.0]);

        let same = resize_bilinear(&img, 2, 1);
        assert_eq!(same, img);

        let flat = RasterImage::filled(7, 5, Layout::Rgb, 0.25);
        let r = resize_bilinear(&flat, 3, 11);
        assert!(r.pixels().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn load_reports_missing_and_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        assert!(matches!(load_image(&missing), Err(Error::MissingFile(_))));

        let jpeg = dir.path().join("x.jpg");
        std::fs::write(&jpeg, [0xFF, 0xD8, 0xFF, 0xE0, 0, 0]).unwrap();
        match load_image(&jpeg) {
            Err(Error::UnsupportedFormat(kind)) => assert_eq!(kind, "JPEG"),
            other => panic!("unexpected {other:?}"),
        }

        let broken = dir.path().join("broken.png");
        let mut bytes = PNG_SIGNATURE.to_vec();
        bytes.extend_from_slice(b"garbage");
        std::fs::write(&broken, bytes).unwrap();
        assert!(matches!(load_image(&broken), Err(Error::CorruptImage(_))));
    }

    #[test]
    fn white_png_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        save_png(&RasterImage::filled(2, 2, Layout::Rgb, 1.0), &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.layout(), Layout::Rgb);
        assert!(back.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn iou_arithmetic() {
        let a = Rect::new(0, 0, 10, 10);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&Rect::new(20, 20, 5, 5)), 0.0);
        assert!((a.iou(&Rect::new(5, 0, 10, 10)) - 1.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn png_round_trip_is_exact_after_quantization(
            w in 1u32..9, h in 1u32..9, layout_idx in 0usize..3, seed in any::<u64>()
        ) {
            let layout = [Layout::Gray, Layout::Rgb, Layout::Rgba][layout_idx];
            let mut s = seed | 1;
            let img = RasterImage::from_fn(w, h, layout, |_, _, _| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                (s % 1000) as f64 / 999.0
            });
            let back = decode_png(&encode_png(&img)).unwrap();
            prop_assert_eq!(back.layout(), layout);
            prop_assert_eq!(back.to_bytes(), img.to_bytes());
            for (a, b) in back.pixels().iter().zip(img.pixels()) {
                prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
