//! Histogram of oriented gradients with unsigned orientations and
//! overlapping L2-Hys normalized blocks.

use std::f64::consts::PI;

use crate::retrieval::{resize_bilinear, Grid};

#[derive(Debug, Clone, PartialEq)]
pub struct HogConfig {
    pub size: usize,
    pub cell: usize,
    pub bins: usize,
    /// Block side in cells; blocks step by one cell.
    pub block: usize,
    /// L2-Hys clipping value.
    pub clip: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            size: 128,
            cell: 8,
            bins: 9,
            block: 2,
            clip: 0.2,
        }
    }
}

impl HogConfig {
    pub fn cells(&self) -> usize {
        self.size / self.cell
    }

    pub fn dim(&self) -> usize {
        let blocks = self.cells() + 1 - self.block;
        blocks * blocks * self.block * self.block * self.bins
    }
}

/// Per-cell orientation histograms, `cells x cells x bins`, row-major.
///
/// Bin `k` is centered on `k * 180 / bins` degrees; votes are the gradient
/// magnitude split linearly between the two nearest bins.
pub fn cell_histograms(image: &Grid, cfg: &HogConfig) -> Vec<f64> {
    let n = cfg.size;
    let img = resize_bilinear(image, n, n);
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, n as isize - 1) as usize;
        let y = y.clamp(0, n as isize - 1) as usize;
        img.data[y * n + x]
    };
    let cells = cfg.cells();
    let bin_width = PI / cfg.bins as f64;
    let mut hist = vec![0.0; cells * cells * cfg.bins];
    for y in 0..cells * cfg.cell {
        for x in 0..cells * cfg.cell {
            let (xi, yi) = (x as isize, y as isize);
            let mut gx = at(xi + 1, yi) - at(xi - 1, yi);
            let mut gy = at(xi, yi + 1) - at(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            // Fold into the upper half plane so g and -g vote identically.
            if gy < 0.0 || (gy == 0.0 && gx < 0.0) {
                gx = -gx;
                gy = -gy;
            }
            let angle = gy.atan2(gx).min(PI - f64::EPSILON); // [0, pi)
            let pos = angle / bin_width;
            let lo = pos.floor() as usize % cfg.bins;
            let hi = (lo + 1) % cfg.bins;
            let frac = pos - pos.floor();
            let base = ((y / cfg.cell) * cells + x / cfg.cell) * cfg.bins;
            hist[base + lo] += mag * (1.0 - frac);
            hist[base + hi] += mag * frac;
        }
    }
    hist
}

/// Concatenated L2-Hys normalized blocks.
pub fn hog_descriptor(image: &Grid, cfg: &HogConfig) -> Vec<f64> {
    let hist = cell_histograms(image, cfg);
    let cells = cfg.cells();
    let blocks = cells + 1 - cfg.block;
    let mut out = Vec::with_capacity(cfg.dim());
    let mut block = Vec::with_capacity(cfg.block * cfg.block * cfg.bins);
    for by in 0..blocks {
        for bx in 0..blocks {
            block.clear();
            for cy in by..by + cfg.block {
                for cx in bx..bx + cfg.block {
                    let base = (cy * cells + cx) * cfg.bins;
                    block.extend_from_slice(&hist[base..base + cfg.bins]);
                }
            }
            l2_hys(&mut block, cfg.clip);
            out.extend_from_slice(&block);
        }
    }
    out
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // all-zero blocks stay zero
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

fn l2_hys(v: &mut [f64], clip: f64) {
    l2_normalize(v);
    for x in v.iter_mut() {
        *x = x.min(clip);
    }
    l2_normalize(v);
}
