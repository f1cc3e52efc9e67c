//! Image ingestion, dense patch grids, local descriptors and ground-truth
//! patch labels.
//!
//! Images are 8-bit grayscale; color input is reduced with integer BT.601
//! luma. Descriptors are 128-d gradient orientation histograms (4x4 cells,
//! 8 bins) computed from pixels inside the patch only, so two patches with
//! identical content produce identical descriptors regardless of position.

use crate::error::{Error, Result};
use std::path::Path;

pub const DESCRIPTOR_DIM: usize = 128;
const CELLS: usize = 4;
const ORIENT_BINS: usize = 8;
/// Per-entry clip applied after the first normalization pass.
const CLIP: f64 = 0.2;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "pixel count {} != {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, pixels })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Load a PGM (P5) or PNG file; color PNG is converted via integer luma.
    pub fn load(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        match ext.as_str() {
            "pgm" => read_pgm(path),
            "png" => read_png(path),
            other => Err(Error::Data(format!(
                "unsupported image extension '{}' for {}",
                other,
                path.display()
            ))),
        }
    }
}

/// BT.601 integer luma with rounding.
#[inline]
pub fn luma_bt601(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

fn read_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        image::DynamicImage::ImageLuma8(g) => g.into_raw(),
        other => {
            let rgb = other.to_rgb8();
            rgb.pixels().map(|p| luma_bt601(p[0], p[1], p[2])).collect()
        }
    };
    GrayImage::new(w, h, pixels)
}

/// Minimal P5 reader, 8-bit only. Header tokens may be separated by any
/// whitespace and `#` comments.
fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path)?;
    let bad = |msg: &str| Error::Data(format!("{}: {}", path.display(), msg));
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(bad("not a P5 PGM"));
    }
    let mut pos = 2usize;
    let mut next_token = |bytes: &[u8]| -> Result<usize> {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("malformed PGM header".into()));
        }
        std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::Data("malformed PGM header".into()))
    };
    let width = next_token(&bytes)?;
    let height = next_token(&bytes)?;
    let maxval = next_token(&bytes)?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM input is supported"));
    }
    // exactly one whitespace byte after maxval
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(bad("truncated PGM payload"));
    }
    GrayImage::new(width, height, bytes[pos..pos + need].to_vec())
}

/// Regular lattice of fixed-size patches, fully inside the image. Patches
/// that would cross the boundary are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn patch_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Top-left pixel of patch `(row, col)`.
    pub fn origin(&self, row: usize, col: usize) -> (usize, usize) {
        (col * self.stride, row * self.stride)
    }

    /// Pixel center of patch `index` (row-major), exact for even patch sizes.
    pub fn center(&self, index: usize) -> (usize, usize) {
        let (row, col) = (index / self.cols, index % self.cols);
        let (x, y) = self.origin(row, col);
        (x + self.patch_size / 2, y + self.patch_size / 2)
    }
}

pub fn build_patch_grid(
    width: usize,
    height: usize,
    patch_size: usize,
    stride: usize,
) -> Result<PatchGrid> {
    if patch_size == 0 || stride == 0 {
        return Err(Error::Dimension("patch_size and stride must be >= 1".into()));
    }
    if width < patch_size || height < patch_size {
        return Err(Error::Dimension(format!(
            "image {}x{} smaller than patch size {}",
            width, height, patch_size
        )));
    }
    Ok(PatchGrid {
        patch_size,
        stride,
        rows: (height - patch_size) / stride + 1,
        cols: (width - patch_size) / stride + 1,
    })
}

/// 128-d non-negative descriptor; zero vector for gradient-free patches,
/// unit L2 norm otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f64>,
}

impl Descriptor {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Gradient-orientation histogram of one patch.
///
/// Central differences on patch-interior pixels, hard assignment into 8
/// orientation bins per 4x4 spatial cell, then L2 normalization, 0.2
/// clipping and renormalization.
pub fn dense_descriptor(
    image: &GrayImage,
    x0: usize,
    y0: usize,
    patch_size: usize,
) -> Result<Descriptor> {
    if x0 + patch_size > image.width || y0 + patch_size > image.height {
        return Err(Error::Dimension(format!(
            "patch ({},{}) size {} out of bounds for {}x{} image",
            x0, y0, patch_size, image.width, image.height
        )));
    }
    let cell = patch_size as f64 / CELLS as f64;
    let mut hist = vec![0.0f64; DESCRIPTOR_DIM];
    for py in 1..patch_size - 1 {
        for px in 1..patch_size - 1 {
            let gx = image.at(x0 + px + 1, y0 + py) as f64
                - image.at(x0 + px - 1, y0 + py) as f64;
            let gy = image.at(x0 + px, y0 + py + 1) as f64
                - image.at(x0 + px, y0 + py - 1) as f64;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx); // (-pi, pi]
            let mut bin = ((angle + std::f64::consts::PI)
                / (2.0 * std::f64::consts::PI / ORIENT_BINS as f64))
                as usize;
            if bin >= ORIENT_BINS {
                bin = 0; // angle == +pi wraps onto -pi
            }
            let cx = ((px as f64 / cell) as usize).min(CELLS - 1);
            let cy = ((py as f64 / cell) as usize).min(CELLS - 1);
            hist[(cy * CELLS + cx) * ORIENT_BINS + bin] += mag;
        }
    }
    let norm = crate::linalg::norm2(&hist);
    if norm < 1e-12 {
        return Ok(Descriptor { values: vec![0.0; DESCRIPTOR_DIM] });
    }
    for v in hist.iter_mut() {
        *v = (*v / norm).min(CLIP);
    }
    let norm = crate::linalg::norm2(&hist);
    for v in hist.iter_mut() {
        *v /= norm;
    }
    Ok(Descriptor { values: hist })
}

/// Descriptors for every patch of the grid, row-major.
pub fn grid_descriptors(image: &GrayImage, grid: &PatchGrid) -> Result<Vec<Descriptor>> {
    let mut out = Vec::with_capacity(grid.patch_count());
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let (x, y) = grid.origin(row, col);
            out.push(dense_descriptor(image, x, y, grid.patch_size)?);
        }
    }
    Ok(out)
}

/// Per-patch labels in {-1, +1} for one category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchLabelMap {
    pub labels: Vec<i8>,
}

/// Binary pixel mask; nonzero = object.
#[derive(Debug, Clone)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub object: Vec<bool>,
}

impl Mask {
    pub fn from_image(img: &GrayImage) -> Self {
        Mask {
            width: img.width,
            height: img.height,
            object: img.pixels.iter().map(|&p| p != 0).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_image(&GrayImage::load(path)?))
    }
}

/// Label +1 iff the object-pixel fraction inside the patch reaches `frac`.
pub fn label_patches(
    grid: &PatchGrid,
    mask: &Mask,
    image_width: usize,
    image_height: usize,
    frac: f64,
) -> Result<PatchLabelMap> {
    if mask.width != image_width || mask.height != image_height {
        return Err(Error::Dimension(format!(
            "mask {}x{} != image {}x{}",
            mask.width, mask.height, image_width, image_height
        )));
    }
    let area = (grid.patch_size * grid.patch_size) as f64;
    let mut labels = Vec::with_capacity(grid.patch_count());
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let (x0, y0) = grid.origin(row, col);
            let mut count = 0usize;
            for y in y0..y0 + grid.patch_size {
                let base = y * mask.width;
                for x in x0..x0 + grid.patch_size {
                    if mask.object[base + x] {
                        count += 1;
                    }
                }
            }
            labels.push(if count as f64 / area >= frac { 1 } else { -1 });
        }
    }
    Ok(PatchLabelMap { labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_image(w: usize, h: usize, v: u8) -> GrayImage {
        GrayImage::new(w, h, vec![v; w * h]).unwrap()
    }

    #[test]
    fn grid_single_patch() {
        let g = build_patch_grid(64, 64, 64, 16).unwrap();
        assert_eq!((g.rows, g.cols), (1, 1));
    }

    #[test]
    fn grid_3x3_with_offsets() {
        let g = build_patch_grid(96, 96, 64, 16).unwrap();
        assert_eq!((g.rows, g.cols), (3, 3));
        let offsets: Vec<usize> = (0..3).map(|c| g.origin(0, c).0).collect();
        assert_eq!(offsets, vec![0, 16, 32]);
    }

    #[test]
    fn grid_too_small() {
        assert!(matches!(build_patch_grid(63, 64, 64, 16), Err(Error::Dimension(_))));
    }

    #[test]
    fn descriptor_constant_patch_is_zero() {
        let img = constant_image(64, 64, 120);
        let d = dense_descriptor(&img, 0, 0, 64).unwrap();
        assert!(d.is_zero());
    }

    #[test]
    fn descriptor_vertical_edge_concentrates_horizontal_gradient() {
        // bright right half: gradient points along +x through the center
        let mut px = vec![0u8; 64 * 64];
        for y in 0..64 {
            for x in 32..64 {
                px[y * 64 + x] = 200;
            }
        }
        let img = GrayImage::new(64, 64, px).unwrap();
        let d = dense_descriptor(&img, 0, 0, 64).unwrap();
        // oracle: gradients are all +x (angle 0, bin 4) or zero
        let horiz: f64 = (0..16)
            .map(|c| {
                let e0 = d.values[c * 8]; // bin holding angle == pi
                let e4 = d.values[c * 8 + 4]; // bin holding angle == 0
                e0 * e0 + e4 * e4
            })
            .sum();
        let total: f64 = d.values.iter().map(|v| v * v).sum();
        assert!(horiz / total > 0.9, "horizontal share {}", horiz / total);
    }

    #[test]
    fn descriptor_unit_norm_on_textured_patch() {
        let mut px = vec![0u8; 64 * 64];
        let mut v = 13u32;
        for p in px.iter_mut() {
            v = v.wrapping_mul(1664525).wrapping_add(1013904223);
            *p = (v >> 24) as u8;
        }
        let img = GrayImage::new(64, 64, px).unwrap();
        let d = dense_descriptor(&img, 0, 0, 64).unwrap();
        let n = crate::linalg::norm2(&d.values);
        assert!((n - 1.0).abs() < 1e-6);
        assert!(d.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn descriptor_locality() {
        // identical content at two positions -> identical descriptor bits
        let mut px = vec![0u8; 128 * 96];
        let pattern = |x: usize, y: usize| ((x * 31 + y * 17) % 251) as u8;
        for y in 0..64 {
            for x in 0..64 {
                px[(y + 10) * 128 + x] = pattern(x, y);
                px[(y + 20) * 128 + (x + 64)] = pattern(x, y);
            }
        }
        let img = GrayImage::new(128, 96, px).unwrap();
        let a = dense_descriptor(&img, 0, 10, 64).unwrap();
        let b = dense_descriptor(&img, 64, 20, 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn descriptor_out_of_bounds() {
        let img = constant_image(64, 64, 0);
        assert!(matches!(dense_descriptor(&img, 1, 0, 64), Err(Error::Dimension(_))));
    }

    #[test]
    fn labels_quarter_threshold() {
        let grid = build_patch_grid(64, 64, 64, 16).unwrap();
        let area = 64 * 64;
        let mut object = vec![false; area];
        // exactly 25% of pixels
        for i in 0..area / 4 {
            object[i] = true;
        }
        let mask = Mask { width: 64, height: 64, object: object.clone() };
        let l = label_patches(&grid, &mask, 64, 64, 0.25).unwrap();
        assert_eq!(l.labels, vec![1]);

        // one object pixel short of the threshold
        object[area / 4 - 1] = false;
        let mask = Mask { width: 64, height: 64, object };
        let l = label_patches(&grid, &mask, 64, 64, 0.25).unwrap();
        assert_eq!(l.labels, vec![-1]);
    }

    #[test]
    fn labels_full_mask() {
        let grid = build_patch_grid(96, 96, 64, 16).unwrap();
        let mask = Mask { width: 96, height: 96, object: vec![true; 96 * 96] };
        let l = label_patches(&grid, &mask, 96, 96, 0.25).unwrap();
        assert!(l.labels.iter().all(|&v| v == 1));
    }

    #[test]
    fn labels_mask_size_mismatch() {
        let grid = build_patch_grid(64, 64, 64, 16).unwrap();
        let mask = Mask { width: 32, height: 64, object: vec![false; 32 * 64] };
        assert!(matches!(
            label_patches(&grid, &mask, 64, 64, 0.25),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn label_monotone_under_mask_growth() {
        let grid = build_patch_grid(96, 96, 64, 16).unwrap();
        let mut object = vec![false; 96 * 96];
        for y in 0..40 {
            for x in 0..40 {
                object[y * 96 + x] = true;
            }
        }
        let small = Mask { width: 96, height: 96, object: object.clone() };
        for y in 0..96 {
            for x in 0..60 {
                object[y * 96 + x] = true;
            }
        }
        let big = Mask { width: 96, height: 96, object };
        let ls = label_patches(&grid, &small, 96, 96, 0.25).unwrap();
        let lb = label_patches(&grid, &big, 96, 96, 0.25).unwrap();
        for (s, b) in ls.labels.iter().zip(&lb.labels) {
            assert!(!(s == &1 && b == &-1));
        }
    }

    #[test]
    fn luma_rounding() {
        assert_eq!(luma_bt601(255, 255, 255), 255);
        assert_eq!(luma_bt601(0, 0, 0), 0);
        // 299*100 + 587*50 + 114*200 = 29900+29350+22800 = 82050 -> 82.05 -> 82
        assert_eq!(luma_bt601(100, 50, 200), 82);
    }
}
