//! Hybrid image retrieval: semantic neighbors by image-level feature
//! distance, then scene neighbors by GIST+HOG distance.

pub mod gist;
pub mod hog;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::SaliencyMap;

pub use gist::{GistConfig, GistExtractor};
pub use hog::{cell_histograms, hog_descriptor, HogConfig};

/// Plain `f64` raster used by the descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl From<&SaliencyMap> for Grid {
    fn from(m: &SaliencyMap) -> Self {
        Grid {
            width: m.width(),
            height: m.height(),
            data: m.data().iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Bilinear resampling with pixel-center alignment; identity when the size
/// already matches.
pub fn resize_bilinear(src: &Grid, width: usize, height: usize) -> Grid {
    if src.width == width && src.height == height {
        return src.clone();
    }
    let sx = src.width as f64 / width as f64;
    let sy = src.height as f64 / height as f64;
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (src.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (src.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src.width - 1);
            let wx = fx - x0 as f64;
            let p = |xx: usize, yy: usize| src.data[yy * src.width + xx];
            let top = p(x0, y0) * (1.0 - wx) + p(x1, y0) * wx;
            let bottom = p(x0, y1) * (1.0 - wx) + p(x1, y1) * wx;
            data.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    Grid {
        width,
        height,
        data,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Semantic neighbors.
    pub k_semantic: usize,
    /// Scene-layout neighbors.
    pub k_scene: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k_semantic: 2,
            k_scene: 3,
        }
    }
}

impl RetrievalConfig {
    pub fn k(&self) -> usize {
        self.k_semantic + self.k_scene
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_semantic == 0 || self.k_scene == 0 {
            return Err(Error::Config("retrieval.k_semantic and k_scene must be positive".into()));
        }
        Ok(())
    }
}

/// Computes `[gist/|gist| || hog/|hog|]`.
pub struct SceneDescriber {
    gist: GistExtractor,
    hog: HogConfig,
}

impl Default for SceneDescriber {
    fn default() -> Self {
        SceneDescriber::new(GistConfig::default(), HogConfig::default())
    }
}

impl SceneDescriber {
    pub fn new(gist: GistConfig, hog: HogConfig) -> Self {
        SceneDescriber {
            gist: GistExtractor::new(gist),
            hog,
        }
    }

    pub fn dim(&self) -> usize {
        self.gist.config().dim() + self.hog.dim()
    }

    pub fn describe(&self, image: &Grid) -> Vec<f64> {
        let mut g = self.gist.describe(image);
        let mut h = hog_descriptor(image, &self.hog);
        normalize(&mut g);
        normalize(&mut h);
        g.extend_from_slice(&h);
        g
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// What retrieval needs to know about one image.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalEntry {
    pub id: String,
    pub image_feature: Vec<f32>,
    pub scene: Vec<f64>,
}

fn sq_dist_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest<'a>(
    candidates: &[&'a RetrievalEntry],
    dist: impl Fn(&RetrievalEntry) -> f64,
) -> Vec<&'a RetrievalEntry> {
    let mut scored: Vec<(f64, &RetrievalEntry)> = candidates.iter().map(|e| (dist(e), *e)).collect();
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.1.id.cmp(&b.1.id))
    });
    scored.into_iter().map(|(_, e)| e).collect()
}

/// The `k_semantic` nearest pool images by image-feature distance, followed
/// by the `k_scene` nearest by scene distance among those not yet chosen.
/// The query itself is never returned; ties go to the smaller id.
pub fn retrieve_hybrid(query: &RetrievalEntry, pool: &[RetrievalEntry], cfg: &RetrievalConfig) -> Vec<String> {
    let candidates: Vec<&RetrievalEntry> = pool.iter().filter(|e| e.id != query.id).collect();
    let mut chosen: Vec<String> = nearest(&candidates, |e| sq_dist_f32(&query.image_feature, &e.image_feature))
        .into_iter()
        .take(cfg.k_semantic)
        .map(|e| e.id.clone())
        .collect();
    let scene: Vec<String> = nearest(&candidates, |e| sq_dist(&query.scene, &e.scene))
        .into_iter()
        .filter(|e| !chosen.contains(&e.id))
        .take(cfg.k_scene)
        .map(|e| e.id.clone())
        .collect();
    chosen.extend(scene);
    chosen
}
