//! Semantic saliency scores (pairwise win counts), adaptive choice of the
//! number of salient objects, and the coarse mask.

use crate::error::{Error, Result};
use crate::io::{BBox, SaliencyMap};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredProposal {
    pub id: String,
    pub bbox: BBox,
    /// Raw branch output.
    pub branch: f32,
    /// Number of comparison partners with a strictly lower branch output.
    pub score: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub entries: Vec<ScoredProposal>,
}

impl ScoreTable {
    /// Scores in descending order.
    pub fn descending(&self) -> Vec<u32> {
        let mut xi: Vec<u32> = self.entries.iter().map(|e| e.score).collect();
        xi.sort_unstable_by(|a, b| b.cmp(a));
        xi
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries ordered by score descending, ties by id.
    pub fn ranked(&self) -> Vec<&ScoredProposal> {
        let mut r: Vec<&ScoredProposal> = self.entries.iter().collect();
        r.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        r
    }

    pub fn top(&self, q: usize) -> Vec<&ScoredProposal> {
        let mut r = self.ranked();
        r.truncate(q);
        r
    }
}

/// Win counts: for each own proposal, how many other own proposals and how
/// many retrieved proposals have a strictly lower branch output.
///
/// `own` holds `(id, box, branch output)`; `partners` the outputs of every
/// proposal in the retrieved images.
pub fn score_all(own: &[(String, BBox, f32)], partners: &[f32]) -> ScoreTable {
    let mut pool: Vec<f32> = own.iter().map(|o| o.2).chain(partners.iter().copied()).collect();
    pool.sort_by(|a, b| a.total_cmp(b));
    let entries = own
        .iter()
        .map(|(id, bbox, s)| {
            // The proposal itself never counts: it is not strictly below itself.
            let below = pool.partition_point(|v| v < s);
            ScoredProposal {
                id: id.clone(),
                bbox: *bbox,
                branch: *s,
                score: below as u32,
            }
        })
        .collect();
    ScoreTable { entries }
}

/// Position of the largest drop in the descending score sequence
/// (1-based, smallest on ties); 1 when there is nothing to compare.
pub fn select_q(table: &ScoreTable) -> Result<usize> {
    if table.is_empty() {
        return Err(Error::Invalid("cannot select q from an empty score table".into()));
    }
    Ok(select_q_from(&table.descending()))
}

pub fn select_q_from(xi: &[u32]) -> usize {
    let mut best = (1usize, 0u32);
    for (i, w) in xi.windows(2).enumerate() {
        let drop = w[0] - w[1];
        if drop > best.1 {
            best = (i + 1, drop);
        }
    }
    best.0
}

/// Binary map that is 1 exactly on the union of `boxes`.
pub fn build_coarse_mask(width: usize, height: usize, boxes: &[BBox]) -> SaliencyMap {
    let mut mask = SaliencyMap::zeros(width, height);
    for b in boxes {
        for y in b.y as usize..b.bottom() as usize {
            for x in b.x as usize..b.right() as usize {
                mask.set(x, y, 1.0);
            }
        }
    }
    mask
}
