use crate::image::{quantize, Layout, RasterImage};

/// Summed-area tables over 8-bit intensity levels (0..=255).
///
/// Both grids are `(width + 1) x (height + 1)` with a zero first row and
/// column, accumulated in `f64` in row-major order. Because the summed
/// values are integers, every entry is exact and a four-lookup rectangle
/// sum equals the brute-force sum bit for bit.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: u32,
    height: u32,
    sum: Vec<f64>,
    sq_sum: Vec<f64>,
}

impl IntegralImage {
    pub fn from_levels(width: u32, height: u32, levels: &[u8]) -> Self {
        assert_eq!(levels.len(), width as usize * height as usize);
        let stride = width as usize + 1;
        let mut sum = vec![0.0; stride * (height as usize + 1)];
        let mut sq_sum = sum.clone();
        for y in 0..height as usize {
            let mut row = 0.0;
            let mut row_sq = 0.0;
            for x in 0..width as usize {
                let v = levels[y * width as usize + x] as f64;
                row += v;
                row_sq += v * v;
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + row;
                sq_sum[i] = sq_sum[i - stride] + row_sq;
            }
        }
        IntegralImage {
            width,
            height,
            sum,
            sq_sum,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Cumulative sum of all levels strictly above and left of `(x, y)`.
    pub fn sat(&self, x: u32, y: u32) -> f64 {
        self.sum[y as usize * (self.width as usize + 1) + x as usize]
    }

    pub fn sq_sat(&self, x: u32, y: u32) -> f64 {
        self.sq_sum[y as usize * (self.width as usize + 1) + x as usize]
    }

    #[inline]
    fn lookup(grid: &[f64], stride: usize, x: u32, y: u32, w: u32, h: u32) -> f64 {
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + w as usize, y0 + h as usize);
        grid[y1 * stride + x1] - grid[y0 * stride + x1] - grid[y1 * stride + x0]
            + grid[y0 * stride + x0]
    }

    /// Sum of levels in `[x, x + w) x [y, y + h)`.
    #[inline]
    pub fn rect_sum(&self, x: u32, y: u32, w: u32, h: u32) -> f64 {
        debug_assert!(x + w <= self.width && y + h <= self.height);
        Self::lookup(&self.sum, self.width as usize + 1, x, y, w, h)
    }

    #[inline]
    pub fn rect_sq_sum(&self, x: u32, y: u32, w: u32, h: u32) -> f64 {
        debug_assert!(x + w <= self.width && y + h <= self.height);
        Self::lookup(&self.sq_sum, self.width as usize + 1, x, y, w, h)
    }
}

/// Quantizes a gray image to 8-bit levels and builds its integral image.
/// Color inputs are converted with BT.601 first.
pub fn integral(img: &RasterImage) -> IntegralImage {
    let gray = if img.layout() == Layout::Gray {
        std::borrow::Cow::Borrowed(img)
    } else {
        std::borrow::Cow::Owned(crate::image::to_grayscale(img))
    };
    let levels: Vec<u8> = gray.pixels().iter().map(|&v| quantize(v)).collect();
    IntegralImage::from_levels(gray.width(), gray.height(), &levels)
}
