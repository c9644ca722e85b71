//! Object-level training pairs: multi-scale features, intra/inter-image pair
//! enumeration and pseudo-GT labels.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{BBox, FeatureStore, ImageRecord, ObjectProposal, SaliencyMap};
use crate::ranker::Scalar;

/// Coverage a box needs (strictly exceeded) to count as GT-salient.
pub const PSL_COVERAGE: f64 = 0.70;

/// A binary order label: `Pos` means the first object is the more salient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn from_bool(first_wins: bool) -> Self {
        if first_wins {
            Label::Pos
        } else {
            Label::Neg
        }
    }

    pub fn value(self) -> i8 {
        match self {
            Label::Pos => 1,
            Label::Neg => -1,
        }
    }

    pub fn from_value(v: i8) -> Option<Self> {
        match v {
            1 => Some(Label::Pos),
            -1 => Some(Label::Neg),
            _ => None,
        }
    }

    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Label::Pos => T::one(),
            Label::Neg => -T::one(),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairScope {
    Intra,
    Inter,
}

/// Which rule produced the label: GT coverage or the summed candidate maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelSource {
    Gt,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub scope: PairScope,
    pub source: LabelSource,
}

impl Provenance {
    /// Two-bit code: bit 0 = inter-image, bit 1 = model-based.
    pub fn code(self) -> u8 {
        (matches!(self.scope, PairScope::Inter) as u8) | ((matches!(self.source, LabelSource::Model) as u8) << 1)
    }

    pub fn from_code(c: u8) -> Option<Self> {
        (c < 4).then_some(Provenance {
            scope: if c & 1 == 1 { PairScope::Inter } else { PairScope::Intra },
            source: if c & 2 == 2 { LabelSource::Model } else { LabelSource::Gt },
        })
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let scope = match self.scope {
            PairScope::Intra => "intra",
            PairScope::Inter => "inter",
        };
        let source = match self.source {
            LabelSource::Gt => "gt",
            LabelSource::Model => "model",
        };
        write!(f, "{scope}/{source}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub f1: Vec<f32>,
    pub f2: Vec<f32>,
    pub pgt: Label,
    pub provenance: Provenance,
}

/// `[feature(P) || feature(P_enlarged)]`, original first.
pub fn multiscale_feature(p: &ObjectProposal, store: &FeatureStore, single_dim: usize) -> Result<Vec<f32>> {
    if store.dim() != single_dim {
        return Err(Error::dim(
            format!("feature store for proposal {}", p.id),
            single_dim,
            store.dim(),
        ));
    }
    let resolve = |r: u32, field: &str| {
        store.get(r).ok_or_else(|| {
            Error::Invalid(format!(
                "proposal {}: {field} {r} does not resolve (store holds {})",
                p.id,
                store.len()
            ))
        })
    };
    let local = resolve(p.feature_ref, "feature_ref")?;
    let context = resolve(p.enlarged_feature_ref, "enlarged_feature_ref")?;
    let mut f = Vec::with_capacity(2 * single_dim);
    f.extend_from_slice(local);
    f.extend_from_slice(context);
    Ok(f)
}

/// `+1` iff strictly more than 70% of the box is GT foreground.
pub fn psl(bbox: &BBox, gt: &SaliencyMap) -> Label {
    let fg = gt.box_sum(bbox).round() as u64;
    // fg / area > 7 / 10, in integers
    Label::from_bool(10 * fg > 7 * bbox.area())
}

/// Mean of the summed candidate maps over the box.
pub fn psl5(bbox: &BBox, maps: &[SaliencyMap]) -> f64 {
    let total: f64 = maps.iter().map(|m| m.box_sum(bbox)).sum();
    total / bbox.area() as f64
}

/// What is known about one proposal when labeling a pair.
#[derive(Debug, Clone, Copy)]
pub struct ProposalContext<'a> {
    pub bbox: BBox,
    /// Present only for images whose GT may drive labels.
    pub gt: Option<&'a SaliencyMap>,
    pub maps: &'a [SaliencyMap],
}

/// Precomputed perceptual labels of a proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptualLabels {
    pub psl: Option<Label>,
    pub psl5: Option<f64>,
}

impl<'a> ProposalContext<'a> {
    pub fn labels(&self) -> PerceptualLabels {
        PerceptualLabels {
            psl: self.gt.map(|g| psl(&self.bbox, g)),
            psl5: (!self.maps.is_empty()).then(|| psl5(&self.bbox, self.maps)),
        }
    }
}

/// Pseudo-GT for a pair. GT labels decide when both sides have them and
/// disagree; otherwise the summed-map comparison decides, with ties going
/// to `-1`.
pub fn make_pgt(p1: &ProposalContext, p2: &ProposalContext) -> Result<(Label, LabelSource)> {
    pgt_from_labels(&p1.labels(), &p2.labels())
}

pub fn pgt_from_labels(a: &PerceptualLabels, b: &PerceptualLabels) -> Result<(Label, LabelSource)> {
    if let (Some(la), Some(lb)) = (a.psl, b.psl) {
        if la != lb {
            return Ok((Label::from_bool(la > lb), LabelSource::Gt));
        }
    }
    match (a.psl5, b.psl5) {
        (Some(sa), Some(sb)) => Ok((Label::from_bool(sa > sb), LabelSource::Model)),
        _ => Err(Error::Invalid(
            "pair cannot be labeled: a proposal has neither a usable GT label nor candidate maps".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProposalKey {
    pub image: String,
    pub proposal: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledProposal {
    pub key: ProposalKey,
    pub labels: PerceptualLabels,
}

/// An image's (already filtered) proposals with their perceptual labels,
/// ordered by proposal id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub proposals: Vec<LabeledProposal>,
}

impl LabeledImage {
    pub fn new(rec: &ImageRecord, gt: Option<&SaliencyMap>, maps: &[SaliencyMap]) -> Self {
        let mut proposals: Vec<LabeledProposal> = rec
            .proposals
            .iter()
            .map(|p| LabeledProposal {
                key: ProposalKey {
                    image: rec.id.clone(),
                    proposal: p.id.clone(),
                },
                labels: ProposalContext {
                    bbox: p.bbox,
                    gt,
                    maps,
                }
                .labels(),
            })
            .collect();
        proposals.sort_by(|a, b| a.key.proposal.cmp(&b.key.proposal));
        LabeledImage {
            id: rec.id.clone(),
            proposals,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRef {
    pub first: ProposalKey,
    pub second: ProposalKey,
    pub pgt: Label,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    /// Model-labeled pairs with `|PSL5(p1) - PSL5(p2)| < epsilon` are skipped.
    /// Zero disables the filter.
    pub epsilon: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig { epsilon: 0.0 }
    }
}

/// All unordered pairs within `image`, then every (proposal of `image`,
/// proposal of a retrieved image) pair. Pairs between two retrieved images
/// are never formed.
pub fn enumerate_pairs(
    image: &LabeledImage,
    retrieved: &[&LabeledImage],
    cfg: &PairConfig,
) -> Result<Vec<PairRef>> {
    let mut out = Vec::new();
    let mut push = |a: &LabeledProposal, b: &LabeledProposal, scope: PairScope| -> Result<()> {
        let (pgt, source) = pgt_from_labels(&a.labels, &b.labels).map_err(|e| {
            Error::Invalid(format!(
                "{}:{} vs {}:{}: {e}",
                a.key.image, a.key.proposal, b.key.image, b.key.proposal
            ))
        })?;
        if source == LabelSource::Model && cfg.epsilon > 0.0 {
            let gap = (a.labels.psl5.unwrap() - b.labels.psl5.unwrap()).abs();
            if gap < cfg.epsilon {
                return Ok(());
            }
        }
        out.push(PairRef {
            first: a.key.clone(),
            second: b.key.clone(),
            pgt,
            provenance: Provenance { scope, source },
        });
        Ok(())
    };
    let own = &image.proposals;
    for i in 0..own.len() {
        for j in i + 1..own.len() {
            push(&own[i], &own[j], PairScope::Intra)?;
        }
    }
    for p in own {
        for r in retrieved {
            for q in &r.proposals {
                push(p, q, PairScope::Inter)?;
            }
        }
    }
    Ok(out)
}

/// Counts of labels per provenance, for the pair summary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LabelBalance {
    /// Indexed by provenance code, then `[neg, pos]`.
    pub counts: [[usize; 2]; 4],
}

impl LabelBalance {
    pub fn tally(pairs: &[PairRef]) -> Self {
        let mut b = LabelBalance::default();
        for p in pairs {
            b.counts[p.provenance.code() as usize][(p.pgt == Label::Pos) as usize] += 1;
        }
        b
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

impl fmt::Display for LabelBalance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "provenance\tneg\tpos\ttotal")?;
        for code in 0..4u8 {
            let [n, p] = self.counts[code as usize];
            writeln!(f, "{}\t{n}\t{p}\t{}", Provenance::from_code(code).unwrap(), n + p)?;
        }
        let neg: usize = self.counts.iter().map(|c| c[0]).sum();
        let pos: usize = self.counts.iter().map(|c| c[1]).sum();
        writeln!(f, "all\t{neg}\t{pos}\t{}", neg + pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_with_rect(w: usize, h: usize, r: BBox) -> SaliencyMap {
        SaliencyMap::from_fn(w, h, |x, y| if r.contains(x, y) { 1.0 } else { 0.0 })
    }

    #[test]
    fn multiscale_concatenation_order() {
        let a: Vec<f32> = (0..4).map(|i| i as f32).collect();
        let b: Vec<f32> = (10..14).map(|i| i as f32).collect();
        let store = FeatureStore::from_rows(4, &[a.clone(), b.clone()]).unwrap();
        let p = ObjectProposal {
            id: "p".into(),
            bbox: BBox::new(0, 0, 2, 2),
            confidence: 1.0,
            feature_ref: 0,
            enlarged_feature_ref: 1,
        };
        let f = multiscale_feature(&p, &store, 4).unwrap();
        assert_eq!(&f[..4], &a[..]);
        assert_eq!(&f[4..], &b[..]);
        let same = ObjectProposal {
            enlarged_feature_ref: 0,
            ..p.clone()
        };
        assert_eq!(multiscale_feature(&same, &store, 4).unwrap(), [a.clone(), a].concat());
        let short = FeatureStore::from_rows(4095, &[vec![0.0; 4095]]).unwrap();
        assert!(multiscale_feature(&p, &short, 4096).is_err());
        let dangling = ObjectProposal {
            feature_ref: 9,
            ..p
        };
        assert!(multiscale_feature(&dangling, &store, 4).is_err());
    }

    #[test]
    fn psl_cases() {
        let gt = mask_with_rect(40, 40, BBox::new(5, 5, 20, 20));
        assert_eq!(psl(&BBox::new(10, 10, 5, 5), &gt), Label::Pos);
        assert_eq!(psl(&BBox::new(0, 0, 5, 5), &SaliencyMap::zeros(40, 40)), Label::Neg);
        // 10x10 box with exactly 70 foreground pixels: 7 of 10 rows covered.
        let gt70 = mask_with_rect(20, 20, BBox::new(0, 0, 10, 7));
        assert_eq!(gt70.box_sum(&BBox::new(0, 0, 10, 10)), 70.0);
        assert_eq!(psl(&BBox::new(0, 0, 10, 10), &gt70), Label::Neg);
        let gt71 = SaliencyMap::from_fn(20, 20, |x, y| {
            if y < 7 || (y == 7 && x == 0) { 1.0 } else { 0.0 }
        });
        assert_eq!(psl(&BBox::new(0, 0, 10, 10), &gt71), Label::Pos);
    }

    #[test]
    fn psl5_cases() {
        let b = BBox::new(1, 1, 3, 2);
        let zeros = vec![SaliencyMap::zeros(6, 6); 5];
        assert_eq!(psl5(&b, &zeros), 0.0);
        let ones = vec![SaliencyMap::filled(6, 6, 1.0); 5];
        assert_eq!(psl5(&b, &ones), 5.0);
        let mut mixed = vec![SaliencyMap::zeros(6, 6); 4];
        mixed.insert(0, SaliencyMap::filled(6, 6, 0.5));
        assert_eq!(psl5(&b, &mixed), 0.5);
    }

    fn lab(psl: Option<Label>, psl5: Option<f64>) -> PerceptualLabels {
        PerceptualLabels { psl, psl5 }
    }

    #[test]
    fn pgt_dispatch() {
        let r = pgt_from_labels(&lab(Some(Label::Pos), Some(0.0)), &lab(Some(Label::Neg), Some(5.0)));
        assert_eq!(r.unwrap(), (Label::Pos, LabelSource::Gt));
        let r = pgt_from_labels(&lab(Some(Label::Neg), Some(3.0)), &lab(Some(Label::Neg), Some(1.0)));
        assert_eq!(r.unwrap(), (Label::Pos, LabelSource::Model));
        let r = pgt_from_labels(&lab(None, Some(2.0)), &lab(None, Some(2.0)));
        assert_eq!(r.unwrap(), (Label::Neg, LabelSource::Model));
        // one side from the pool: model route even if the other has GT
        let r = pgt_from_labels(&lab(Some(Label::Pos), Some(1.0)), &lab(None, Some(4.0)));
        assert_eq!(r.unwrap(), (Label::Neg, LabelSource::Model));
        assert!(pgt_from_labels(&lab(None, None), &lab(None, Some(1.0))).is_err());
    }

    #[test]
    fn make_pgt_from_contexts() {
        let gt = mask_with_rect(20, 20, BBox::new(0, 0, 10, 10));
        let maps = vec![SaliencyMap::zeros(20, 20)];
        let a = ProposalContext { bbox: BBox::new(0, 0, 5, 5), gt: Some(&gt), maps: &maps };
        let b = ProposalContext { bbox: BBox::new(12, 12, 5, 5), gt: Some(&gt), maps: &maps };
        assert_eq!(make_pgt(&a, &b).unwrap(), (Label::Pos, LabelSource::Gt));
        assert_eq!(make_pgt(&b, &a).unwrap(), (Label::Neg, LabelSource::Gt));
        let bare = ProposalContext { bbox: BBox::new(0, 0, 2, 2), gt: None, maps: &[] };
        assert!(make_pgt(&a, &bare).is_err());
    }

    fn image(id: &str, n: usize) -> LabeledImage {
        LabeledImage {
            id: id.into(),
            proposals: (0..n)
                .map(|i| LabeledProposal {
                    key: ProposalKey { image: id.into(), proposal: format!("p{i}") },
                    labels: lab(None, Some(i as f64)),
                })
                .collect(),
        }
    }

    #[test]
    fn pair_counts() {
        let cfg = PairConfig::default();
        assert_eq!(enumerate_pairs(&image("a", 3), &[], &cfg).unwrap().len(), 3);
        let (r1, r2) = (image("b", 1), image("c", 3));
        let pairs = enumerate_pairs(&image("a", 2), &[&r1, &r2], &cfg).unwrap();
        assert_eq!(pairs.len(), 1 + 8);
        assert!(pairs.iter().all(|p| p.first.image == "a"));
        assert_eq!(
            pairs.iter().filter(|p| p.provenance.scope == PairScope::Intra).count(),
            1
        );
        assert!(enumerate_pairs(&image("a", 1), &[], &cfg).unwrap().is_empty());
    }

    #[test]
    fn epsilon_filter_drops_close_pairs() {
        let mut img = image("a", 3);
        img.proposals[1].labels.psl5 = Some(0.05);
        let cfg = PairConfig { epsilon: 0.1 };
        // psl5 values 0, 0.05, 2: only the (0, 0.05) pair is dropped
        assert_eq!(enumerate_pairs(&img, &[], &cfg).unwrap().len(), 2);
    }

    #[test]
    fn provenance_codes_round_trip() {
        for c in 0..4u8 {
            assert_eq!(Provenance::from_code(c).unwrap().code(), c);
        }
        assert!(Provenance::from_code(4).is_none());
    }

    proptest! {
        #[test]
        fn swap_negates_unless_tied(
            g1 in proptest::option::of(any::<bool>()),
            g2 in proptest::option::of(any::<bool>()),
            s1 in 0.0f64..5.0,
            s2 in 0.0f64..5.0,
        ) {
            let a = lab(g1.map(Label::from_bool), Some(s1));
            let b = lab(g2.map(Label::from_bool), Some(s2));
            let (ab, src) = pgt_from_labels(&a, &b).unwrap();
            let (ba, _) = pgt_from_labels(&b, &a).unwrap();
            if src == LabelSource::Gt || s1 != s2 {
                prop_assert_eq!(ab, ba.flipped());
            } else {
                prop_assert_eq!(ab, Label::Neg);
                prop_assert_eq!(ba, Label::Neg);
            }
        }

        #[test]
        fn psl5_monotone(
            x in 0usize..8, y in 0usize..8, bump in 0.0f32..1.0, base in 0.0f32..1.0,
        ) {
            let b = BBox::new(2, 2, 4, 4);
            let m = SaliencyMap::filled(8, 8, base);
            let before = psl5(&b, std::slice::from_ref(&m));
            let mut raised = m.clone();
            raised.set(x, y, (base + bump).min(1.0));
            prop_assert!(psl5(&b, &[raised]) >= before);
        }
    }
}
