//! Seeded synthetic datasets with a planted linear saliency latent.
//!
//! Each proposal gets Gaussian local and context features; its latent is
//! `w . [local || context]` for one fixed `w`. The GT mask covers the
//! top-latent box, and every candidate map paints each box with a monotone
//! function of its latent plus optional Gaussian noise, so with zero noise
//! the summed-map order inside and across images follows the latent.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    save_manifest, write_feature_blob, write_map, BBox, FeatureStore, ImageRecord, Manifest, ObjectProposal,
    SaliencyMap, Split,
};
use crate::pairgen::{Label, LabelSource, PairScope, Provenance, TrainingPair};

/// Boxes occupy distinct cells of a `GRID x GRID` layout, so they never overlap.
pub const GRID: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub images: usize,
    pub proposals: usize,
    pub width: usize,
    pub height: usize,
    /// Single-scale feature length; proposals carry twice this.
    pub feature_dim: usize,
    pub models: usize,
    /// Standard deviation of the per-pixel map noise.
    pub noise: f64,
    /// Share of images whose GT may drive labels; the rest form the pool.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            images: 20,
            proposals: 5,
            width: 64,
            height: 64,
            feature_dim: 64,
            models: 5,
            noise: 0.0,
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.images == 0 || self.proposals == 0 || self.feature_dim == 0 {
            return Err(Error::Config("synth: images, proposals and feature_dim must be positive".into()));
        }
        if self.proposals > GRID * GRID {
            return Err(Error::Config(format!("synth: at most {} proposals per image", GRID * GRID)));
        }
        if self.width < 4 * GRID || self.height < 4 * GRID {
            return Err(Error::Config(format!("synth: images must be at least {0}x{0}", 4 * GRID)));
        }
        if !(self.noise >= 0.0) || !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("synth: noise must be >= 0 and train_fraction in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One generated proposal with its ground-truth latent.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedProposal {
    pub id: String,
    pub bbox: BBox,
    pub latent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedImage {
    pub id: String,
    pub proposals: Vec<PlantedProposal>,
    /// Index into `proposals` of the GT object.
    pub salient: usize,
}

/// An in-memory fixture; [`SynthDataset::write`] puts it on disk.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: Manifest,
    pub features: FeatureStore,
    pub images: Vec<SaliencyMap>,
    pub gts: Vec<SaliencyMap>,
    pub maps: Vec<Vec<SaliencyMap>>,
    pub planted: Vec<PlantedImage>,
    pub weights: Vec<f64>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v as f32
        })
        .collect()
}

fn dot(w: &[f64], f: &[f32]) -> f64 {
    w.iter().zip(f).map(|(a, &b)| a * b as f64).sum()
}

/// Map intensity for a latent: a logistic squash of the standardized latent.
fn intensity(latent: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * latent).exp())
}

fn random_box(rng: &mut ChaCha8Rng, cell: usize, cfg: &SynthConfig) -> BBox {
    let cw = cfg.width / GRID;
    let ch = cfg.height / GRID;
    let (cx, cy) = ((cell % GRID) * cw, (cell / GRID) * ch);
    let w = rng.random_range(cw / 2..=cw);
    let h = rng.random_range(ch / 2..=ch);
    let x = cx + rng.random_range(0..=cw - w);
    let y = cy + rng.random_range(0..=ch - h);
    BBox::new(x as u32, y as u32, w as u32, h as u32)
}

fn render(rng: &mut ChaCha8Rng, cfg: &SynthConfig, boxes: &[BBox]) -> SaliencyMap {
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let freq: f64 = rng.random_range(0.05..0.4);
    let base: f64 = rng.random_range(0.2..0.6);
    let shades: Vec<f32> = boxes.iter().map(|_| rng.random_range(0.0..1.0)).collect();
    let (c, s) = (theta.cos(), theta.sin());
    SaliencyMap::from_fn(cfg.width, cfg.height, |x, y| {
        if let Some(k) = boxes.iter().position(|b| b.contains(x, y)) {
            return shades[k];
        }
        let t = (x as f64 * c + y as f64 * s) * freq;
        (base + 0.25 * t.sin()) as f32
    })
}

/// Builds the fixture. Identical configs give identical datasets.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.feature_dim;
    // unit-variance latent for unit-variance features
    let scale = 1.0 / ((2 * d) as f64).sqrt();
    let weights: Vec<f64> = (0..2 * d).map(|_| StandardNormal.sample(&mut rng)).map(|v: f64| v * scale).collect();
    let noise = if cfg.noise > 0.0 {
        Some(Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let train_count = (cfg.images as f64 * cfg.train_fraction).round() as usize;

    let mut features = FeatureStore::new(d);
    let mut records = Vec::with_capacity(cfg.images);
    let (mut images, mut gts, mut maps, mut planted) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..cfg.images {
        let id = format!("img{i:04}");
        let mut cells: Vec<usize> = (0..GRID * GRID).collect();
        for k in 0..cfg.proposals {
            let j = rng.random_range(k..cells.len());
            cells.swap(k, j);
        }
        let mut props = Vec::with_capacity(cfg.proposals);
        let mut planted_props = Vec::with_capacity(cfg.proposals);
        for (k, &cell) in cells[..cfg.proposals].iter().enumerate() {
            let bbox = random_box(&mut rng, cell, cfg);
            let local = gaussian_vec(&mut rng, d);
            let context = gaussian_vec(&mut rng, d);
            let latent = dot(&weights[..d], &local) + dot(&weights[d..], &context);
            let pid = format!("p{k:02}");
            props.push(ObjectProposal {
                id: pid.clone(),
                bbox,
                confidence: (rng.random_range(500..=1000) as f64) / 1000.0,
                feature_ref: features.push(&local)?,
                enlarged_feature_ref: features.push(&context)?,
            });
            planted_props.push(PlantedProposal { id: pid, bbox, latent });
        }
        let salient = planted_props
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.latent.total_cmp(&b.1.latent))
            .map(|(k, _)| k)
            .unwrap();
        let image_feature = features.push(&gaussian_vec(&mut rng, d))?;
        let boxes: Vec<BBox> = planted_props.iter().map(|p| p.bbox).collect();
        images.push(render(&mut rng, cfg, &boxes));
        gts.push(crate::localization::build_coarse_mask(cfg.width, cfg.height, &[boxes[salient]]));
        let mut image_maps = Vec::with_capacity(cfg.models);
        for _ in 0..cfg.models {
            let mut raw = vec![0.0f64; cfg.width * cfg.height];
            for p in &planted_props {
                let v = intensity(p.latent);
                for y in p.bbox.y as usize..p.bbox.bottom() as usize {
                    for x in p.bbox.x as usize..p.bbox.right() as usize {
                        raw[y * cfg.width + x] = v;
                    }
                }
            }
            if let Some(n) = &noise {
                raw.iter_mut().for_each(|v| *v += n.sample(&mut rng));
            }
            // quantize as the map files will
            let data = raw.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0).collect();
            image_maps.push(SaliencyMap::new(cfg.width, cfg.height, data)?);
        }
        maps.push(image_maps);
        records.push(ImageRecord {
            id: id.clone(),
            width: cfg.width,
            height: cfg.height,
            split: if i < train_count { Split::Train } else { Split::Pool },
            image: Some(format!("images/{id}.pgm")),
            gt_mask: Some(format!("gt/{id}.pgm")),
            candidate_maps: (0..cfg.models).map(|m| format!("maps/{id}_{m}.pgm")).collect(),
            image_feature_ref: Some(image_feature),
            proposals: props,
        });
        planted.push(PlantedImage {
            id,
            proposals: planted_props,
            salient,
        });
    }
    Ok(SynthDataset {
        manifest: Manifest {
            feature_dim: d,
            feature_blob: Some("features.srf".into()),
            images: records,
        },
        features,
        images,
        gts,
        maps,
        planted,
        weights,
    })
}

impl SynthDataset {
    /// Writes `manifest.json`, `features.srf` and the PGM files under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_feature_blob(&self.features, &dir.join("features.srf"))?;
        for (k, rec) in self.manifest.images.iter().enumerate() {
            write_map(&self.images[k], &dir.join(rec.image.as_ref().unwrap()))?;
            write_map(&self.gts[k], &dir.join(rec.gt_mask.as_ref().unwrap()))?;
            for (m, rel) in rec.candidate_maps.iter().enumerate() {
                write_map(&self.maps[k][m], &dir.join(rel))?;
            }
        }
        save_manifest(&self.manifest, &dir.join("manifest.json"))
    }
}

/// Pairs of random feature vectors labeled by a planted linear latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparableConfig {
    pub train_pairs: usize,
    pub holdout_pairs: usize,
    /// Feature length fed to the ranker.
    pub dim: usize,
    /// Minimum latent gap of a kept pair, in latent standard deviations.
    pub min_gap: f64,
    pub seed: u64,
}

impl Default for SeparableConfig {
    fn default() -> Self {
        SeparableConfig {
            train_pairs: 1000,
            holdout_pairs: 500,
            dim: 32,
            min_gap: 0.25,
            seed: 0,
        }
    }
}

/// `(train, holdout)` pairs; `pgt = +1` iff the first vector has the larger
/// latent. Pairs closer than `min_gap` in latent are redrawn.
pub fn separable_pairs(cfg: &SeparableConfig) -> (Vec<TrainingPair>, Vec<TrainingPair>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 1.0 / (cfg.dim as f64).sqrt();
    let w: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).map(|v: f64| v * scale).collect();
    let provenance = Provenance {
        scope: PairScope::Intra,
        source: LabelSource::Gt,
    };
    let mut draw = |n: usize| {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let f1 = gaussian_vec(&mut rng, cfg.dim);
            let f2 = gaussian_vec(&mut rng, cfg.dim);
            let (l1, l2) = (dot(&w, &f1), dot(&w, &f2));
            if (l1 - l2).abs() < cfg.min_gap {
                continue;
            }
            out.push(TrainingPair {
                f1,
                f2,
                pgt: Label::from_bool(l1 > l2),
                provenance,
            });
        }
        out
    };
    let train = draw(cfg.train_pairs);
    let holdout = draw(cfg.holdout_pairs);
    (train, holdout)
}
