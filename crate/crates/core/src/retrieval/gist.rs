//! GIST-style scene descriptor: mean Gabor energy over a spatial grid, for a
//! bank of frequency-domain Gabor filters.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::retrieval::{resize_bilinear, Grid};

#[derive(Debug, Clone, PartialEq)]
pub struct GistConfig {
    /// Side of the square canonical image.
    pub size: usize,
    pub scales: usize,
    pub orientations: usize,
    /// Cells per side of the pooling grid.
    pub grid: usize,
}

impl Default for GistConfig {
    fn default() -> Self {
        GistConfig {
            size: 128,
            scales: 4,
            orientations: 8,
            grid: 4,
        }
    }
}

impl GistConfig {
    pub fn dim(&self) -> usize {
        self.scales * self.orientations * self.grid * self.grid
    }
}

/// Precomputed filter bank and FFT plans. Cheap to share across threads.
pub struct GistExtractor {
    cfg: GistConfig,
    filters: Vec<Vec<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Highest center frequency (cycles per pixel); each further scale halves it.
const TOP_FREQUENCY: f64 = 0.25;
/// Log-Gabor radial bandwidth, as the ratio sigma/f0.
const RADIAL_SIGMA_RATIO: f64 = 0.55;

fn signed_freq(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

impl GistExtractor {
    pub fn new(cfg: GistConfig) -> Self {
        let n = cfg.size;
        let angular_sigma = PI / cfg.orientations as f64 * 0.6;
        let log_sigma = RADIAL_SIGMA_RATIO.ln();
        let mut filters = Vec::with_capacity(cfg.scales * cfg.orientations);
        for s in 0..cfg.scales {
            let f0 = TOP_FREQUENCY / (1u64 << s) as f64;
            for o in 0..cfg.orientations {
                let theta0 = o as f64 * PI / cfg.orientations as f64;
                let mut g = vec![0.0; n * n];
                for v in 0..n {
                    let fy = signed_freq(v, n);
                    for u in 0..n {
                        let fx = signed_freq(u, n);
                        let rho = (fx * fx + fy * fy).sqrt();
                        if rho == 0.0 {
                            continue; // no DC response
                        }
                        let radial = (-(rho / f0).ln().powi(2) / (2.0 * log_sigma * log_sigma)).exp();
                        // angular distance modulo pi: the filter is symmetric
                        let mut d = fy.atan2(fx) - theta0;
                        d = (d + PI / 2.0).rem_euclid(PI) - PI / 2.0;
                        let angular = (-(d * d) / (2.0 * angular_sigma * angular_sigma)).exp();
                        g[v * n + u] = radial * angular;
                    }
                }
                filters.push(g);
            }
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        GistExtractor {
            cfg,
            filters,
            fwd,
            inv,
        }
    }

    pub fn config(&self) -> &GistConfig {
        &self.cfg
    }

    fn fft2(&self, data: &mut [Complex<f64>], fft: &Arc<dyn Fft<f64>>) {
        let n = self.cfg.size;
        for row in data.chunks_exact_mut(n) {
            fft.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for x in 0..n {
            for y in 0..n {
                col[y] = data[y * n + x];
            }
            fft.process(&mut col);
            for y in 0..n {
                data[y * n + x] = col[y];
            }
        }
    }

    /// Descriptor ordered by scale, orientation, then grid cell (row-major).
    pub fn describe(&self, image: &Grid) -> Vec<f64> {
        let n = self.cfg.size;
        let img = resize_bilinear(image, n, n);
        let mean = img.data.iter().sum::<f64>() / img.data.len() as f64;
        let mut spectrum: Vec<Complex<f64>> =
            img.data.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
        self.fft2(&mut spectrum, &self.fwd);

        let g = self.cfg.grid;
        let cell = n / g;
        let norm = 1.0 / (n * n) as f64;
        let mut out = Vec::with_capacity(self.cfg.dim());
        let mut buf = vec![Complex::new(0.0, 0.0); n * n];
        for filter in &self.filters {
            for ((b, s), &h) in buf.iter_mut().zip(&spectrum).zip(filter) {
                *b = s * h;
            }
            self.fft2(&mut buf, &self.inv);
            for cy in 0..g {
                for cx in 0..g {
                    let mut acc = 0.0;
                    for y in cy * cell..(cy + 1) * cell {
                        for x in cx * cell..(cx + 1) * cell {
                            acc += buf[y * n + x].norm() * norm;
                        }
                    }
                    out.push(acc / (cell * cell) as f64);
                }
            }
        }
        out
    }
}
