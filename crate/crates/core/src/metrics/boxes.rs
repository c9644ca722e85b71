//! Box-level localization scoring against connected-component GT objects.

use crate::io::{BBox, SaliencyMap};
use crate::proposals::iou;

/// Tight bounding rectangles of the 8-connected foreground components, in
/// raster order of each component's first pixel.
pub fn gt_objects(gt: &SaliencyMap) -> Vec<BBox> {
    let (w, h) = gt.dims();
    let fg: Vec<bool> = gt.data().iter().map(|&v| v > 0.5).collect();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !fg[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if fg[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(BBox::new(x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32));
    }
    out
}

/// True positives under greedy best-IOU-first one-to-one matching; a pair
/// only matches when its IOU is strictly above `overlap`.
pub fn match_boxes(selected: &[BBox], objects: &[BBox], overlap: f64) -> usize {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, s) in selected.iter().enumerate() {
        for (j, o) in objects.iter().enumerate() {
            let v = iou(s, o);
            if v > overlap {
                cands.push((v, i, j));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_s = vec![false; selected.len()];
    let mut used_o = vec![false; objects.len()];
    let mut tp = 0;
    for (_, i, j) in cands {
        if !used_s[i] && !used_o[j] {
            used_s[i] = true;
            used_o[j] = true;
            tp += 1;
        }
    }
    tp
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LocalizationPrf {
    pub true_positives: usize,
    pub selected: usize,
    pub objects: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl LocalizationPrf {
    /// Micro-averaged over all images.
    pub fn from_counts(tp: usize, selected: usize, objects: usize, beta_sq: f64) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, selected);
        let recall = ratio(tp, objects);
        LocalizationPrf {
            true_positives: tp,
            selected,
            objects,
            precision,
            recall,
            f_measure: super::f_beta(precision, recall, beta_sq),
        }
    }
}
