//! Pixel-level evaluation (MAE, F-, S- and E-measure) and box-level
//! localization precision/recall.

pub mod boxes;
pub mod structure;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{BBox, SaliencyMap};
use crate::par::Exec;

pub use boxes::{gt_objects, match_boxes, LocalizationPrf};

/// Matches `eps` of the reference evaluation code.
const EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub beta_sq: f64,
    /// Number of uniform thresholds `(k + 1) / n`, `k < n`, for the mean and
    /// max modes. Every level lies in (0, 1], so a perfect binary map scores 1
    /// at each of them.
    pub thresholds: usize,
    pub alpha: f64,
    /// A selected box counts when its IOU with a GT object exceeds this.
    pub overlap: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            beta_sq: 0.3,
            thresholds: 256,
            alpha: 0.5,
            overlap: 0.5,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_sq > 0.0) {
            return Err(Error::Config("metrics.beta_sq must be > 0".into()));
        }
        if self.thresholds == 0 {
            return Err(Error::Config("metrics.thresholds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config("metrics.alpha must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config("metrics.overlap must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<f32> {
        let n = self.thresholds as f32;
        (1..=self.thresholds).map(|k| k as f32 / n).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Single threshold at twice the mean prediction, capped at 1.
    Adaptive,
    Mean,
    Max,
}

pub fn f_beta(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let den = beta_sq * precision + recall;
    if den <= 0.0 {
        0.0
    } else {
        (1.0 + beta_sq) * precision * recall / den
    }
}

fn check(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::Invalid(format!(
            "prediction is {}x{} but GT is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

fn gt_bits(gt: &SaliencyMap) -> Vec<bool> {
    gt.data().iter().map(|&v| v > 0.5).collect()
}

pub fn mae(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    check(pred, gt)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (p as f64 - g as f64).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Confusion counts of one binarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    /// GT foreground pixels.
    pub positives: usize,
    pub pixels: usize,
}

impl Counts {
    pub fn f_measure(&self, beta_sq: f64) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let p = self.tp as f64 / (self.tp + self.fp) as f64;
        let r = self.tp as f64 / self.positives as f64;
        f_beta(p, r, beta_sq)
    }

    /// Enhanced alignment of the binarized prediction, averaged over pixels.
    pub fn e_measure(&self) -> f64 {
        let n = self.pixels as f64;
        let pred_fg = (self.tp + self.fp) as f64;
        if self.positives == 0 {
            return (n - pred_fg) / n;
        }
        if self.positives == self.pixels {
            return pred_fg / n;
        }
        let mp = pred_fg / n;
        let mg = self.positives as f64 / n;
        let fn_ = (self.positives - self.tp) as f64;
        let tn = n - pred_fg - fn_;
        let cell = |p: f64, g: f64| {
            let (a, b) = (p - mp, g - mg);
            let align = 2.0 * a * b / (a * a + b * b + EPS);
            (align + 1.0) * (align + 1.0) / 4.0
        };
        (self.tp as f64 * cell(1.0, 1.0)
            + self.fp as f64 * cell(1.0, 0.0)
            + fn_ * cell(0.0, 1.0)
            + tn * cell(0.0, 0.0))
            / n
    }
}

/// Counts for `pred >= threshold`.
pub fn counts_at(pred: &SaliencyMap, gt: &[bool], threshold: f64) -> Counts {
    let mut c = Counts {
        tp: 0,
        fp: 0,
        positives: gt.iter().filter(|&&g| g).count(),
        pixels: gt.len(),
    };
    for (&p, &g) in pred.data().iter().zip(gt) {
        if p as f64 >= threshold {
            if g {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
    }
    c
}

/// Counts at every grid threshold, from one pass over the pixels.
pub fn sweep(pred: &SaliencyMap, gt: &[bool], cfg: &MetricConfig) -> Vec<Counts> {
    let grid = cfg.grid();
    let levels = grid.len();
    // bucket b holds pixels that pass exactly thresholds 0..b
    let mut pos = vec![0usize; levels + 1];
    let mut neg = vec![0usize; levels + 1];
    for (&p, &g) in pred.data().iter().zip(gt) {
        let b = grid.partition_point(|&t| t <= p);
        if g {
            pos[b] += 1;
        } else {
            neg[b] += 1;
        }
    }
    let positives = pos.iter().sum();
    let mut out = vec![
        Counts {
            tp: 0,
            fp: 0,
            positives,
            pixels: gt.len()
        };
        levels
    ];
    let (mut tp, mut fp) = (0, 0);
    for k in (0..levels).rev() {
        tp += pos[k + 1];
        fp += neg[k + 1];
        out[k].tp = tp;
        out[k].fp = fp;
    }
    out
}

pub fn adaptive_threshold(pred: &SaliencyMap) -> f64 {
    (2.0 * pred.mean()).min(1.0)
}

fn by_mode(pred: &SaliencyMap, gt: &SaliencyMap, cfg: &MetricConfig, mode: Mode, f: impl Fn(&Counts) -> f64) -> Result<f64> {
    check(pred, gt)?;
    let bits = gt_bits(gt);
    Ok(match mode {
        Mode::Adaptive => f(&counts_at(pred, &bits, adaptive_threshold(pred))),
        Mode::Mean => {
            let v = sweep(pred, &bits, cfg);
            v.iter().map(&f).sum::<f64>() / v.len() as f64
        }
        Mode::Max => sweep(pred, &bits, cfg).iter().map(&f).fold(0.0, f64::max),
    })
}

pub fn f_measure(pred: &SaliencyMap, gt: &SaliencyMap, cfg: &MetricConfig, mode: Mode) -> Result<f64> {
    by_mode(pred, gt, cfg, mode, |c| c.f_measure(cfg.beta_sq))
}

pub fn e_measure(pred: &SaliencyMap, gt: &SaliencyMap, cfg: &MetricConfig, mode: Mode) -> Result<f64> {
    by_mode(pred, gt, cfg, mode, Counts::e_measure)
}

pub fn s_measure(pred: &SaliencyMap, gt: &SaliencyMap, cfg: &MetricConfig) -> Result<f64> {
    check(pred, gt)?;
    let p: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    Ok(structure::s_measure(&p, &gt_bits(gt), pred.width(), cfg.alpha))
}

/// Micro-averaged box precision/recall over all images. `selected[i]` are
/// the boxes chosen for the image whose GT is `gts[i]`.
pub fn localization_prf(selected: &[Vec<BBox>], gts: &[SaliencyMap], cfg: &MetricConfig) -> Result<LocalizationPrf> {
    if selected.len() != gts.len() {
        return Err(Error::Invalid(format!(
            "{} box lists for {} GT masks",
            selected.len(),
            gts.len()
        )));
    }
    let (mut tp, mut sel, mut obj) = (0, 0, 0);
    for (boxes, gt) in selected.iter().zip(gts) {
        let objects = gt_objects(gt);
        tp += match_boxes(boxes, &objects, cfg.overlap);
        sel += boxes.len();
        obj += objects.len();
    }
    Ok(LocalizationPrf::from_counts(tp, sel, obj, cfg.beta_sq))
}

/// Row names of the report, in order.
pub const METRIC_NAMES: [&str; 8] = ["Smeasure", "MAE", "adpEm", "meanEm", "maxEm", "adpFm", "meanFm", "maxFm"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValues {
    pub s_measure: f64,
    pub mae: f64,
    pub adp_em: f64,
    pub mean_em: f64,
    pub max_em: f64,
    pub adp_fm: f64,
    pub mean_fm: f64,
    pub max_fm: f64,
}

impl MetricValues {
    pub fn as_array(&self) -> [f64; 8] {
        [
            self.s_measure,
            self.mae,
            self.adp_em,
            self.mean_em,
            self.max_em,
            self.adp_fm,
            self.mean_fm,
            self.max_fm,
        ]
    }

    fn from_array(a: [f64; 8]) -> Self {
        MetricValues {
            s_measure: a[0],
            mae: a[1],
            adp_em: a[2],
            mean_em: a[3],
            max_em: a[4],
            adp_fm: a[5],
            mean_fm: a[6],
            max_fm: a[7],
        }
    }
}

pub fn evaluate_image(pred: &SaliencyMap, gt: &SaliencyMap, cfg: &MetricConfig) -> Result<MetricValues> {
    check(pred, gt)?;
    let bits = gt_bits(gt);
    let adp = counts_at(pred, &bits, adaptive_threshold(pred));
    let grid = sweep(pred, &bits, cfg);
    let n = grid.len() as f64;
    let em: Vec<f64> = grid.iter().map(Counts::e_measure).collect();
    let fm: Vec<f64> = grid.iter().map(|c| c.f_measure(cfg.beta_sq)).collect();
    Ok(MetricValues {
        s_measure: s_measure(pred, gt, cfg)?,
        mae: mae(pred, gt)?,
        adp_em: adp.e_measure(),
        mean_em: em.iter().sum::<f64>() / n,
        max_em: em.iter().cloned().fold(0.0, f64::max),
        adp_fm: adp.f_measure(cfg.beta_sq),
        mean_fm: fm.iter().sum::<f64>() / n,
        max_fm: fm.iter().cloned().fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub values: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub images: Vec<ImageScore>,
    pub mean: MetricValues,
    pub localization: Option<LocalizationPrfRow>,
}

/// Serializable copy of [`LocalizationPrf`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationPrfRow {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl From<LocalizationPrf> for LocalizationPrfRow {
    fn from(l: LocalizationPrf) -> Self {
        LocalizationPrfRow {
            precision: l.precision,
            recall: l.recall,
            f_measure: l.f_measure,
        }
    }
}

/// One evaluation item: image id, prediction, GT.
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub pred: &'a SaliencyMap,
    pub gt: &'a SaliencyMap,
}

/// Per-image metrics in input order and their plain mean. The first failing
/// image aborts with its id in the message.
pub fn evaluate(dataset: &str, items: &[EvalItem], cfg: &MetricConfig, exec: Exec) -> Result<MetricReport> {
    cfg.validate()?;
    let images = exec.try_map(items, |it| {
        evaluate_image(it.pred, it.gt, cfg)
            .map(|values| ImageScore {
                id: it.id.to_string(),
                values,
            })
            .map_err(|e| Error::Invalid(format!("image {}: {e}", it.id)))
    })?;
    let mut sum = [0.0; 8];
    for img in &images {
        for (s, v) in sum.iter_mut().zip(img.values.as_array()) {
            *s += v;
        }
    }
    let n = images.len().max(1) as f64;
    Ok(MetricReport {
        dataset: dataset.to_string(),
        mean: MetricValues::from_array(sum.map(|s| s / n)),
        images,
        localization: None,
    })
}

impl MetricReport {
    /// Metric-by-dataset text table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10}{:>12}", "metric", self.dataset);
        for (name, v) in METRIC_NAMES.iter().zip(self.mean.as_array()) {
            let _ = writeln!(out, "{name:<10}{v:>12.4}");
        }
        if let Some(l) = &self.localization {
            for (name, v) in [("locP", l.precision), ("locR", l.recall), ("locF", l.f_measure)] {
                let _ = writeln!(out, "{name:<10}{v:>12.4}");
            }
        }
        let _ = writeln!(out, "{:<10}{:>12}", "images", self.images.len());
        out
    }
}
