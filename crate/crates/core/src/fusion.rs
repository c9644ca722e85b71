//! Confidence-weighted fusion of candidate saliency maps inside the
//! localized boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{BBox, SaliencyMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Weight of the global agreement term.
    pub lambda: f64,
    /// Stabilizer in the global agreement ratio.
    pub c: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            lambda: 0.5,
            c: 1e-6,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("fusion.lambda must be >= 0".into()));
        }
        if !(self.c > 0.0) {
            return Err(Error::Config("fusion.c must be > 0".into()));
        }
        Ok(())
    }
}

/// `Conf(i, j)` for model `i` (rows) and box `j` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfMatrix {
    pub models: usize,
    pub boxes: usize,
    pub values: Vec<f64>,
}

impl ConfMatrix {
    pub fn get(&self, model: usize, bbox: usize) -> f64 {
        self.values[model * self.boxes + bbox]
    }

    pub fn scaled(&self, c: f64) -> ConfMatrix {
        ConfMatrix {
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

fn same_dims(a: &SaliencyMap, b: &SaliencyMap, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Invalid(format!(
            "{what}: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Local term plus `lambda` times the global term.
///
/// Local: mean of `sal / ic` over the box (the box sits inside the coarse
/// mask, so this is the mean in-box saliency). Global: mean over the image
/// of `(sal * ic + C) / (sal + ic + C)`; pixels where both are zero count
/// as full agreement.
pub fn confidence(sal: &SaliencyMap, ic: &SaliencyMap, bbox: &BBox, cfg: &FusionConfig) -> Result<f64> {
    same_dims(sal, ic, "saliency map vs coarse mask")?;
    if !bbox.fits_in(sal.width(), sal.height()) {
        return Err(Error::Invalid(format!("box {bbox:?} exceeds the map")));
    }
    let mut local = 0.0;
    for y in bbox.y as usize..bbox.bottom() as usize {
        for x in bbox.x as usize..bbox.right() as usize {
            let m = ic.get(x, y) as f64;
            if m <= 0.0 {
                return Err(Error::Invalid(format!(
                    "box {bbox:?} leaves the coarse mask at ({x}, {y})"
                )));
            }
            local += sal.get(x, y) as f64 / m;
        }
    }
    local /= bbox.area() as f64;
    let global = sal
        .data()
        .iter()
        .zip(ic.data())
        .map(|(&s, &m)| {
            let (s, m) = (s as f64, m as f64);
            (s * m + cfg.c) / (s + m + cfg.c)
        })
        .sum::<f64>()
        / sal.len() as f64;
    Ok(local + cfg.lambda * global)
}

pub fn confidence_matrix(
    sals: &[SaliencyMap],
    ic: &SaliencyMap,
    boxes: &[BBox],
    cfg: &FusionConfig,
) -> Result<ConfMatrix> {
    let mut values = Vec::with_capacity(sals.len() * boxes.len());
    for sal in sals {
        for b in boxes {
            values.push(confidence(sal, ic, b, cfg)?);
        }
    }
    Ok(ConfMatrix {
        models: sals.len(),
        boxes: boxes.len(),
        values,
    })
}

/// `sum_i sum_j Conf(i,j) * [x in box_j] * sal_i(x)`, divided by its maximum
/// (all-zero when the maximum is zero). Zero outside the boxes.
pub fn fuse(sals: &[SaliencyMap], conf: &ConfMatrix, boxes: &[BBox], ic: &SaliencyMap) -> Result<SaliencyMap> {
    if conf.models != sals.len() || conf.boxes != boxes.len() {
        return Err(Error::Invalid(format!(
            "confidence matrix is {}x{}, expected {}x{}",
            conf.models,
            conf.boxes,
            sals.len(),
            boxes.len()
        )));
    }
    for s in sals {
        same_dims(s, ic, "candidate map vs coarse mask")?;
    }
    let (w, h) = ic.dims();
    let mut raw = vec![0.0f64; w * h];
    for (i, sal) in sals.iter().enumerate() {
        for (j, b) in boxes.iter().enumerate() {
            let c = conf.get(i, j);
            for y in b.y as usize..b.bottom() as usize {
                for x in b.x as usize..b.right() as usize {
                    raw[y * w + x] += c * sal.get(x, y) as f64;
                }
            }
        }
    }
    let max = raw.iter().cloned().fold(0.0f64, f64::max);
    let data = if max > 0.0 {
        raw.iter().map(|&v| (v / max) as f32).collect()
    } else {
        vec![0.0; w * h]
    };
    SaliencyMap::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localization::build_coarse_mask;
    use proptest::prelude::*;

    fn fixture_4x4() -> (SaliencyMap, BBox) {
        let b = BBox::new(1, 1, 2, 2);
        (build_coarse_mask(4, 4, &[b]), b)
    }

    #[test]
    fn sal_equal_to_mask() {
        let (ic, b) = fixture_4x4();
        let cfg = FusionConfig::default();
        let c = cfg.c;
        let expected_global = (12.0 + 4.0 * (1.0 + c) / (2.0 + c)) / 16.0;
        let conf = confidence(&ic, &ic, &b, &cfg).unwrap();
        assert!((conf - (1.0 + 0.5 * expected_global)).abs() < 1e-12);
        assert!((conf - 1.4375).abs() < 1e-4);
    }

    #[test]
    fn zero_saliency() {
        let (ic, b) = fixture_4x4();
        let cfg = FusionConfig::default();
        let c = cfg.c;
        let conf = confidence(&SaliencyMap::zeros(4, 4), &ic, &b, &cfg).unwrap();
        let global = (12.0 + 4.0 * c / (1.0 + c)) / 16.0;
        assert!((conf - 0.5 * global).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_is_mean_box_saliency() {
        let (ic, b) = fixture_4x4();
        let sal = SaliencyMap::from_fn(4, 4, |x, y| (x + 4 * y) as f32 / 16.0);
        let cfg = FusionConfig { lambda: 0.0, ..FusionConfig::default() };
        let conf = confidence(&sal, &ic, &b, &cfg).unwrap();
        let mean = sal.box_sum(&b) / 4.0;
        assert_eq!(conf, mean);
    }

    #[test]
    fn dimension_checks() {
        let (ic, b) = fixture_4x4();
        assert!(confidence(&SaliencyMap::zeros(5, 4), &ic, &b, &FusionConfig::default()).is_err());
        let outside = BBox::new(0, 0, 2, 2);
        assert!(confidence(&ic, &ic, &outside, &FusionConfig::default()).is_err());
    }

    #[test]
    fn fuse_zero_and_single_term() {
        let b = BBox::new(0, 0, 3, 3);
        let ic = build_coarse_mask(3, 3, &[b]);
        let conf = ConfMatrix { models: 1, boxes: 1, values: vec![1.0] };
        let zero = fuse(&[SaliencyMap::zeros(3, 3)], &conf, &[b], &ic).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let sal = SaliencyMap::from_fn(3, 3, |x, y| (x + y) as f32 / 8.0);
        let out = fuse(std::slice::from_ref(&sal), &conf, &[b], &ic).unwrap();
        let max = 4.0 / 8.0;
        for (o, s) in out.data().iter().zip(sal.data()) {
            assert!((o - s / max).abs() < 1e-6);
        }
    }

    #[test]
    fn overlap_gets_double_weight() {
        // 6x6, boxes (0,0,4,4) and (2,2,4,4), uniform saliency 0.5, Conf = 1:
        // raw = 0.5 on single-cover pixels, 1.0 on the 2x2 overlap.
        let boxes = [BBox::new(0, 0, 4, 4), BBox::new(2, 2, 4, 4)];
        let ic = build_coarse_mask(6, 6, &boxes);
        let conf = ConfMatrix { models: 1, boxes: 2, values: vec![1.0, 1.0] };
        let out = fuse(&[SaliencyMap::filled(6, 6, 0.5)], &conf, &boxes, &ic).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let covers = boxes.iter().filter(|b| b.contains(x, y)).count();
                assert_eq!(out.get(x, y), covers as f32 / 2.0, "({x},{y})");
            }
        }
    }

    proptest! {
        #[test]
        fn fusion_invariants(
            vals in proptest::collection::vec(0u8..=255, 2 * 64),
            bx in 0u32..5, by in 0u32..5, bw in 1u32..4, bh in 1u32..4,
            scale in 0.1f64..10.0,
        ) {
            let sals: Vec<SaliencyMap> = vals
                .chunks(64)
                .map(|c| SaliencyMap::new(8, 8, c.iter().map(|&v| v as f32 / 255.0).collect()).unwrap())
                .collect();
            let boxes = [BBox::new(bx, by, bw, bh), BBox::new(2, 2, 3, 3)];
            let ic = build_coarse_mask(8, 8, &boxes);
            let cfg = FusionConfig::default();
            let conf = confidence_matrix(&sals, &ic, &boxes, &cfg).unwrap();
            prop_assert!(conf.values.iter().all(|v| v.is_finite() && *v >= 0.0));
            let out = fuse(&sals, &conf, &boxes, &ic).unwrap();
            let scaled = fuse(&sals, &conf.scaled(scale), &boxes, &ic).unwrap();
            let mut any_positive = false;
            for y in 0..8 {
                for x in 0..8 {
                    let inside = boxes.iter().any(|b| b.contains(x, y));
                    if !inside { prop_assert_eq!(out.get(x, y), 0.0); }
                    if inside && sals.iter().any(|s| s.get(x, y) > 0.0) { any_positive = true; }
                    prop_assert!((out.get(x, y) - scaled.get(x, y)).abs() <= 1e-6);
                }
            }
            let max = out.data().iter().cloned().fold(0.0f32, f32::max);
            if any_positive { prop_assert_eq!(max, 1.0); }
        }

        #[test]
        fn confidence_monotone_in_box_saliency(
            base in 0.0f32..0.9, bump in 0.0f32..0.1, px in 1usize..3, py in 1usize..3,
        ) {
            let (ic, b) = fixture_4x4();
            let sal = SaliencyMap::filled(4, 4, base);
            let mut raised = sal.clone();
            raised.set(px, py, base + bump);
            let cfg = FusionConfig::default();
            prop_assert!(confidence(&raised, &ic, &b, &cfg).unwrap() >= confidence(&sal, &ic, &b, &cfg).unwrap());
        }
    }
}
