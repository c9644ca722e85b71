use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle. Width and height are at least one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", try_from = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    /// # Panics
    /// If `w` or `h` is zero.
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        assert!(w >= 1 && h >= 1, "BBox needs w >= 1 and h >= 1");
        BBox { x, y, w, h }
    }

    pub fn try_new(x: u32, y: u32, w: u32, h: u32) -> Option<Self> {
        (w >= 1 && h >= 1).then_some(BBox { x, y, w, h })
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.right() <= width as u64 && self.bottom() <= height as u64
    }

    pub fn contains(&self, px: usize, py: usize) -> bool {
        (px as u64) >= self.x as u64
            && (px as u64) < self.right()
            && (py as u64) >= self.y as u64
            && (py as u64) < self.bottom()
    }

    /// Intersection rectangle, if non-empty.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 as i64 - x0 as i64 <= 0 || y1 as i64 - y0 as i64 <= 0 {
            return None;
        }
        Some(BBox {
            x: x0,
            y: y0,
            w: (x1 - x0 as u64) as u32,
            h: (y1 - y0 as u64) as u32,
        })
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = String;

    fn try_from(v: [u32; 4]) -> std::result::Result<Self, String> {
        BBox::try_new(v[0], v[1], v[2], v[3])
            .ok_or_else(|| format!("box {:?} has zero width or height", v))
    }
}

/// Row-major grid of intensities in `[0, 1]`.
///
/// Used for candidate saliency maps, GT masks, coarse masks, fused output and
/// grayscale scene images alike.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dim("map data", width * height, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid(format!(
                "map value {} at index {} is outside [0, 1]",
                data[i], i
            )));
        }
        Ok(SaliencyMap {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!((0.0..=1.0).contains(&value));
        SaliencyMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds a map from a per-pixel function; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        SaliencyMap {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        assert!((0.0..=1.0).contains(&v));
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Sum of intensities inside `bbox` (which must fit in the map).
    pub fn box_sum(&self, bbox: &BBox) -> f64 {
        let mut acc = 0.0f64;
        for y in bbox.y as usize..bbox.bottom() as usize {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            acc += row[bbox.x as usize..bbox.right() as usize]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
        acc
    }

    /// Thresholds at `> threshold` into a {0, 1} map.
    pub fn binarized(&self, threshold: f32) -> SaliencyMap {
        SaliencyMap {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| if v > threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn ensure_dims(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::Invalid(format!(
                "{what}: map is {}x{}, expected {}x{}",
                self.width, self.height, width, height
            )));
        }
        Ok(())
    }
}
