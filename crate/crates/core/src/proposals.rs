//! Proposal filtering by overlap and enlarged-context geometry.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{BBox, ObjectProposal};

/// Context box side scale used for the multi-scale feature.
pub const ENLARGE_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub iou_threshold: f64,
    pub max_proposals: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            iou_threshold: 0.5,
            max_proposals: 10,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config("filter.iou_threshold must lie in (0, 1]".into()));
        }
        if self.max_proposals == 0 {
            return Err(Error::Config("filter.max_proposals must be positive".into()));
        }
        Ok(())
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Drops overlapping proposals, keeping the larger box of every pair whose
/// IOU reaches the threshold, then keeps the `max_proposals` most confident
/// survivors, most confident first.
///
/// Among equal areas the less confident box is dropped; on a full tie the
/// one with the larger id goes.
pub fn filter_proposals(proposals: &[ObjectProposal], cfg: &FilterConfig) -> Vec<ObjectProposal> {
    let mut by_area: Vec<&ObjectProposal> = proposals.iter().collect();
    by_area.sort_by(|a, b| {
        b.bbox
            .area()
            .cmp(&a.bbox.area())
            .then_with(|| by_confidence(a, b))
    });
    let mut kept: Vec<&ObjectProposal> = Vec::with_capacity(by_area.len());
    for p in by_area {
        if kept.iter().all(|k| iou(&k.bbox, &p.bbox) < cfg.iou_threshold) {
            kept.push(p);
        }
    }
    kept.sort_by(|a, b| by_confidence(a, b));
    kept.truncate(cfg.max_proposals);
    kept.into_iter().cloned().collect()
}

/// Confidence descending, then id ascending.
fn by_confidence(a: &ObjectProposal, b: &ObjectProposal) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.id.cmp(&b.id))
}

/// Center-preserving enlargement to `round(factor * w) x round(factor * h)`,
/// shifted back inside the image and truncated only if larger than the image.
pub fn enlarge(bbox: &BBox, factor: f64, width: usize, height: usize) -> BBox {
    assert!(factor >= 1.0, "enlarge factor must be >= 1");
    let axis = |start: u32, len: u32, limit: usize| -> (u32, u32) {
        let new_len = ((factor * len as f64).round() as u64).clamp(1, limit as u64);
        let center = start as f64 + len as f64 / 2.0;
        let lo = (center - new_len as f64 / 2.0).round() as i64;
        let lo = lo.clamp(0, limit as i64 - new_len as i64);
        (lo as u32, new_len as u32)
    };
    let (x, w) = axis(bbox.x, bbox.w, width);
    let (y, h) = axis(bbox.y, bbox.h, height);
    BBox::new(x, y, w, h)
}
