use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::blob::FeatureStore;
use crate::pairgen::{Label, TrainingPair};
use crate::par::Exec;
use crate::ranker::loss::{hinge_loss_with, pair_gradient, HingeVariant};
use crate::ranker::model::{branch_dims, Gradient, Mlp, DEFAULT_HIDDEN};

/// Pairs per gradient work unit. Fixed so the reduction order never depends
/// on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Hinge margin rho.
    pub margin: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: u32,
    pub seed: u64,
    /// Multiplier on the fan-in scaled init standard deviation.
    pub init_scale: f64,
    pub hidden: Vec<usize>,
    pub variant: HingeVariant,
    /// Share of pairs held out to pick the best epoch.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 10.0,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            init_scale: 1.0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            variant: HingeVariant::AsWritten,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config("train.margin must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("train.momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("train.validation_fraction must lie in [0, 1)".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("train.hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// A training pair by reference into a store of multi-scale features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexedPair {
    pub a: u32,
    pub b: u32,
    pub pgt: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp<f32>,
    pub best_epoch: u32,
    pub best_loss: f64,
    pub log: Vec<EpochStats>,
}

/// Trains on owned feature pairs; see [`train_indexed`].
pub fn train(pairs: &[TrainingPair], cfg: &TrainConfig, exec: Exec) -> Result<TrainOutcome> {
    let dim = pairs.first().map(|p| p.f1.len()).unwrap_or(0);
    let mut store = FeatureStore::new(dim);
    let mut indexed = Vec::with_capacity(pairs.len());
    for p in pairs {
        let a = store.push(&p.f1)?;
        let b = store.push(&p.f2)?;
        indexed.push(IndexedPair { a, b, pgt: p.pgt });
    }
    train_indexed(&store, &indexed, cfg, exec)
}

/// Minibatch SGD with momentum on the mean hinge loss.
///
/// Returns the parameters with the lowest held-out loss seen at the end of
/// any epoch (the initial model counts as epoch 0; later epochs win ties).
/// Fully determined by `cfg.seed`.
pub fn train_indexed(
    store: &FeatureStore,
    pairs: &[IndexedPair],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Training("empty pair set".into()));
    }
    for p in pairs {
        for idx in [p.a, p.b] {
            if store.get(idx).is_none() {
                return Err(Error::Training(format!("pair references missing feature {idx}")));
            }
        }
    }
    let dims = branch_dims(store.dim(), &cfg.hidden);
    let mut model = Mlp::<f32>::init(&dims, cfg.seed, cfg.init_scale)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if cfg.validation_fraction > 0.0 && pairs.len() >= 2 {
        ((pairs.len() as f64 * cfg.validation_fraction).ceil() as usize).clamp(1, pairs.len() - 1)
    } else {
        0
    };
    let val: Vec<IndexedPair> = order[..n_val].iter().map(|&i| pairs[i]).collect();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();
    let monitor: Vec<IndexedPair> = if val.is_empty() {
        train_idx.iter().map(|&i| pairs[i]).collect()
    } else {
        val.clone()
    };

    let rho = cfg.margin as f32;
    let lr = cfg.learning_rate as f32;
    let mu = cfg.momentum as f32;

    let (init_loss, _) = evaluate(&model, store, &monitor, cfg, exec);
    let mut best = (model.clone(), 0u32, init_loss);
    let mut velocity = Gradient::zeros_like(&model);
    let mut log = Vec::with_capacity(cfg.epochs as usize);

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for (b, batch) in train_idx.chunks(cfg.batch_size).enumerate() {
            let chunks: Vec<&[usize]> = batch.chunks(GRAD_CHUNK).collect();
            let parts = exec.map(&chunks, |chunk| {
                let mut g = Gradient::zeros_like(&model);
                let mut loss = 0.0f32;
                for &i in chunk.iter() {
                    let p = pairs[i];
                    loss += pair_gradient(
                        &model,
                        store.get(p.a).unwrap(),
                        store.get(p.b).unwrap(),
                        p.pgt,
                        rho,
                        cfg.variant,
                        &mut g,
                    );
                }
                (g, loss)
            });
            let mut parts = parts.into_iter();
            let (mut grad, mut batch_loss) = parts.next().unwrap();
            for (g, l) in parts {
                grad.add_assign(&g);
                batch_loss += l;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss in epoch {epoch}, batch {b} (pairs {:?})",
                    batch
                )));
            }
            grad.scale(1.0 / batch.len() as f32);
            velocity.momentum_update(&grad, mu, lr);
            model.apply_step(&velocity);
            epoch_loss += batch_loss as f64;
        }
        if !model.is_finite() {
            return Err(Error::Training(format!("parameters diverged in epoch {epoch}")));
        }
        let train_loss = epoch_loss / train_idx.len().max(1) as f64;
        let (val_loss, val_accuracy) = evaluate(&model, store, &monitor, cfg, exec);
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} acc {val_accuracy:.4}");
        if val_loss <= best.2 {
            best = (model.clone(), epoch, val_loss);
        }
        log.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
    }

    Ok(TrainOutcome {
        model: best.0,
        best_epoch: best.1,
        best_loss: best.2,
        log,
    })
}

fn unique_refs(pairs: &[IndexedPair]) -> Vec<u32> {
    let mut refs: Vec<u32> = pairs.iter().flat_map(|p| [p.a, p.b]).collect();
    refs.sort_unstable();
    refs.dedup();
    refs
}

/// Scores every referenced feature once; returns `(index, score)` sorted by index.
fn score_refs(model: &Mlp<f32>, store: &FeatureStore, refs: &[u32], exec: Exec) -> Vec<(u32, f32)> {
    exec.map(refs, |&r| (r, model.forward(store.get(r).unwrap()).unwrap()))
}

fn lookup(scores: &[(u32, f32)], r: u32) -> f32 {
    let i = scores.binary_search_by_key(&r, |&(k, _)| k).unwrap();
    scores[i].1
}

/// Mean hinge loss and pairwise ranking accuracy.
fn evaluate(
    model: &Mlp<f32>,
    store: &FeatureStore,
    pairs: &[IndexedPair],
    cfg: &TrainConfig,
    exec: Exec,
) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let scores = score_refs(model, store, &unique_refs(pairs), exec);
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for p in pairs {
        let s1 = lookup(&scores, p.a) as f64;
        let s2 = lookup(&scores, p.b) as f64;
        loss += hinge_loss_with(cfg.variant, s1, s2, p.pgt, cfg.margin);
        if ranks_correctly(s1, s2, p.pgt) {
            correct += 1;
        }
    }
    (loss / pairs.len() as f64, correct as f64 / pairs.len() as f64)
}

fn ranks_correctly(s1: f64, s2: f64, pgt: Label) -> bool {
    match pgt {
        Label::Pos => s1 > s2,
        Label::Neg => s2 > s1,
    }
}

/// Fraction of pairs whose score order agrees with the label (ties count
/// as wrong).
pub fn pairwise_accuracy(
    model: &Mlp<f32>,
    store: &FeatureStore,
    pairs: &[IndexedPair],
    exec: Exec,
) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let scores = score_refs(model, store, &unique_refs(pairs), exec);
    let correct = pairs
        .iter()
        .filter(|p| ranks_correctly(lookup(&scores, p.a) as f64, lookup(&scores, p.b) as f64, p.pgt))
        .count();
    correct as f64 / pairs.len() as f64
}

/// Mean loss of `pairs` under `model`, for descent checks.
pub fn mean_loss(
    model: &Mlp<f32>,
    store: &FeatureStore,
    pairs: &[IndexedPair],
    cfg: &TrainConfig,
    exec: Exec,
) -> f64 {
    evaluate(model, store, pairs, cfg, exec).0
}
