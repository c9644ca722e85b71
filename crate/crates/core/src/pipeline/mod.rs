//! Stage runner: every stage reads its inputs from disk and writes its
//! outputs under the run directory, so any suffix of the chain can be
//! re-run alone.
//!
//! | stage    | reads                          | writes                                  |
//! |----------|--------------------------------|-----------------------------------------|
//! | ingest   | manifest and everything it names | `ingest.tsv`                          |
//! | retrieve | images, image features         | `retrieval.tsv`                         |
//! | pairs    | `retrieval.tsv`, GT, maps      | `pairs.bin`, `pairs_summary.txt`        |
//! | train    | `pairs.bin`, features          | `ranker.srm`, `train_log.txt`           |
//! | rank     | `ranker.srm`, `retrieval.tsv`  | `rank.tsv`, optional `coarse/<id>.pgm`  |
//! | fuse     | `rank.tsv`, maps               | `final/<id>.pgm`, `confidence.txt`      |
//! | eval     | `final/`, `rank.tsv`, GT       | `report.txt`, `report.json`             |

pub mod config;
pub mod files;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{confidence_matrix, fuse};
use crate::io::{
    load_checkpoint, load_manifest, read_map, save_checkpoint, write_map, Dataset, FeatureStore, ImageRecord,
    ObjectProposal, RankerCheckpoint, SaliencyMap, Split, TrainMeta,
};
use crate::localization::{build_coarse_mask, score_all, select_q};
use crate::metrics::{evaluate, localization_prf, EvalItem, LocalizationPrfRow, MetricReport, MetricValues};
use crate::pairgen::{enumerate_pairs, multiscale_feature, LabelBalance, LabeledImage};
use crate::par::{with_jobs, Exec};
use crate::proposals::filter_proposals;
use crate::ranker::{train_indexed, IndexedPair, RankerModel};
use crate::retrieval::{retrieve_hybrid, Grid, RetrievalEntry, SceneDescriber};

/// Filtered proposals of one image with their multiscale features.
type ProposalFeatures = Vec<(ObjectProposal, Vec<f32>)>;

pub use config::PipelineConfig;
pub use files::{PairFile, RankRow, RankedImage, RetrievalTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Retrieve,
    Pairs,
    Train,
    Rank,
    Fuse,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Retrieve,
        Stage::Pairs,
        Stage::Train,
        Stage::Rank,
        Stage::Fuse,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Retrieve => "retrieve",
            Stage::Pairs => "pairs",
            Stage::Train => "train",
            Stage::Rank => "rank",
            Stage::Fuse => "fuse",
            Stage::Eval => "eval",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

pub const RUN_LOG: &str = "run_log.txt";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub artifacts: Vec<ArtifactDigest>,
}

/// Written to `run_summary.json` by [`Runner::run_all`]. Holds no timings,
/// so identical runs give identical files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub images: usize,
    pub stages: Vec<StageSummary>,
    pub metrics: MetricValues,
    pub localization: Option<LocalizationPrfRow>,
}

pub struct Runner {
    cfg: PipelineConfig,
    dataset: Dataset,
    exec: Exec,
    hash: String,
}

fn digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl Runner {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let dataset = load_manifest(&cfg.manifest)?;
        let hash = cfg.hash();
        Ok(Runner {
            exec: Exec::from_jobs(cfg.jobs),
            cfg,
            dataset,
            hash,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn out_path(&self, rel: &str) -> PathBuf {
        self.cfg.out.join(rel)
    }

    /// The record with its proposals filtered.
    fn filtered(&self, rec: &ImageRecord) -> ImageRecord {
        ImageRecord {
            proposals: filter_proposals(&rec.proposals, &self.cfg.filter),
            ..rec.clone()
        }
    }

    fn provenance(&self, stage: Stage, artifacts: &[String]) -> Result<()> {
        let path = self.out_path(RUN_LOG);
        fs::create_dir_all(&self.cfg.out).map_err(|e| Error::io(&self.cfg.out, e))?;
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut text = String::new();
        for a in artifacts {
            let _ = writeln!(
                text,
                "stage={} artifact={a} config={} seed={}",
                stage.name(),
                self.hash,
                self.cfg.seed
            );
        }
        log.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
    }

    /// Runs one stage; returns its artifacts relative to the run directory.
    pub fn run(&self, stage: Stage) -> Result<Vec<String>> {
        let start = Instant::now();
        let artifacts = with_jobs(self.cfg.jobs, || match stage {
            Stage::Ingest => self.ingest(),
            Stage::Retrieve => self.retrieve(),
            Stage::Pairs => self.pairs(),
            Stage::Train => self.train(),
            Stage::Rank => self.rank(),
            Stage::Fuse => self.fuse(),
            Stage::Eval => self.eval().map(|r| r.0),
        })?;
        self.provenance(stage, &artifacts)?;
        log::info!(
            "stage={} artifacts={} config={} seed={} elapsed={:.2?}",
            stage.name(),
            artifacts.len(),
            self.hash,
            self.cfg.seed,
            start.elapsed()
        );
        Ok(artifacts)
    }

    /// Every stage in order, then `run_summary.json`.
    pub fn run_all(&self) -> Result<RunSummary> {
        let log = self.out_path(RUN_LOG);
        if log.exists() {
            fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
        let mut stages = Vec::new();
        for stage in Stage::ALL {
            let artifacts = self.run(stage)?;
            let artifacts = artifacts
                .into_iter()
                .map(|path| {
                    Ok(ArtifactDigest {
                        sha256: digest(&self.out_path(&path))?,
                        path,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(StageSummary { stage, artifacts });
        }
        let report = self.read_report()?;
        let summary = RunSummary {
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            images: self.dataset.len(),
            stages,
            metrics: report.mean,
            localization: report.localization,
        };
        let mut json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Invalid(e.to_string()))?;
        json.push('\n');
        write_text(&self.out_path("run_summary.json"), &json)?;
        self.provenance(Stage::Eval, &["run_summary.json".to_string()])?;
        Ok(summary)
    }

    fn read_report(&self) -> Result<MetricReport> {
        let path = self.out_path("report.json");
        let bytes = files::read_stage_input(&path, "eval")?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn ingest(&self) -> Result<Vec<String>> {
        let rows = self.exec.try_map(&self.dataset.records, |rec| -> Result<String> {
            let maps = self.dataset.load_candidate_maps(rec)?;
            let gt = self.dataset.load_gt(rec)?;
            let kept = filter_proposals(&rec.proposals, &self.cfg.filter).len();
            Ok(format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                rec.id,
                match rec.split {
                    Split::Train => "train",
                    Split::Pool => "pool",
                },
                rec.width,
                rec.height,
                rec.proposals.len(),
                kept,
                maps.len(),
                gt.is_some() as u8
            ))
        })?;
        let mut text = String::from("id\tsplit\twidth\theight\tproposals\tkept\tmaps\tgt\n");
        rows.iter().for_each(|r| text.push_str(r));
        write_text(&self.out_path("ingest.tsv"), &text)?;
        Ok(vec!["ingest.tsv".into()])
    }

    pub fn retrieve(&self) -> Result<Vec<String>> {
        let features = self.dataset.load_features()?;
        let describer = SceneDescriber::default();
        let entries = self.exec.try_map(&self.dataset.records, |rec| -> Result<RetrievalEntry> {
            let r = rec.image_feature_ref.ok_or_else(|| {
                Error::schema(&rec.id, "image_feature_ref", "image-level feature required for retrieval")
            })?;
            let image_feature = features
                .get(r)
                .ok_or_else(|| Error::schema(&rec.id, "image_feature_ref", format!("dangling feature reference {r}")))?
                .to_vec();
            let image = self.dataset.load_image(rec)?;
            Ok(RetrievalEntry {
                id: rec.id.clone(),
                image_feature,
                scene: describer.describe(&Grid::from(&image)),
            })
        })?;
        let rows = self.exec.map(&entries, |q| {
            let found = retrieve_hybrid(q, &entries, &self.cfg.retrieval);
            if found.is_empty() {
                log::warn!("retrieval for {} is empty", q.id);
            }
            (q.id.clone(), found)
        });
        RetrievalTable { rows }.write(&self.out_path("retrieval.tsv"))?;
        Ok(vec!["retrieval.tsv".into()])
    }

    fn neighbors<'a>(&self, table: &'a RetrievalTable, id: &str) -> Result<&'a [String]> {
        table.neighbors(id).ok_or_else(|| {
            Error::format(self.out_path("retrieval.tsv"), format!("no row for image {id}; re-run retrieve"))
        })
    }

    fn index_of(&self, id: &str, source: &str) -> Result<usize> {
        self.dataset
            .index_of(id)
            .ok_or_else(|| Error::Invalid(format!("{source} names image {id}, which the manifest lacks")))
    }

    pub fn pairs(&self) -> Result<Vec<String>> {
        let table = RetrievalTable::read(&self.out_path("retrieval.tsv"))?;
        let labeled = self.exec.try_map(&self.dataset.records, |rec| -> Result<LabeledImage> {
            let rec = self.filtered(rec);
            let gt = match rec.split {
                Split::Train => self.dataset.load_gt(&rec)?,
                Split::Pool => None,
            };
            let maps = self.dataset.load_candidate_maps(&rec)?;
            Ok(LabeledImage::new(&rec, gt.as_ref(), &maps))
        })?;
        let mut order: Vec<usize> = (0..labeled.len()).collect();
        order.sort_by(|&a, &b| labeled[a].id.cmp(&labeled[b].id));
        let mut all = Vec::new();
        for i in order {
            let img = &labeled[i];
            let retrieved = self
                .neighbors(&table, &img.id)?
                .iter()
                .map(|n| self.index_of(n, "retrieval.tsv").map(|k| &labeled[k]))
                .collect::<Result<Vec<_>>>()?;
            all.extend(enumerate_pairs(img, &retrieved, &self.cfg.pairs)?);
        }
        let file = PairFile::from_pairs(&all);
        file.write(&self.out_path("pairs.bin"))?;
        let balance = LabelBalance::tally(&all);
        let summary = format!("{balance}total\t{}\nproposals\t{}\n", balance.total(), file.refs.len());
        write_text(&self.out_path("pairs_summary.txt"), &summary)?;
        Ok(vec!["pairs.bin".into(), "pairs_summary.txt".into()])
    }

    /// Multi-scale features of every filtered proposal, by image index.
    fn proposal_features(&self, raw: &FeatureStore) -> Result<Vec<ProposalFeatures>> {
        self.exec.try_map(&self.dataset.records, |rec| {
            self.filtered(rec)
                .proposals
                .into_iter()
                .map(|p| {
                    let f = multiscale_feature(&p, raw, self.dataset.feature_dim)?;
                    Ok((p, f))
                })
                .collect()
        })
    }

    pub fn train(&self) -> Result<Vec<String>> {
        let file = PairFile::read(&self.out_path("pairs.bin"))?;
        let raw = self.dataset.load_features()?;
        let by_image = self.proposal_features(&raw)?;
        let lookup: HashMap<(&str, &str), &[f32]> = self
            .dataset
            .records
            .iter()
            .zip(&by_image)
            .flat_map(|(rec, props)| props.iter().map(move |(p, f)| ((rec.id.as_str(), p.id.as_str()), f.as_slice())))
            .collect();
        let mut store = FeatureStore::new(2 * self.dataset.feature_dim);
        for k in &file.refs {
            let f = lookup.get(&(k.image.as_str(), k.proposal.as_str())).ok_or_else(|| {
                Error::Invalid(format!(
                    "pairs.bin names {}:{}, not a filtered proposal of the manifest; re-run pairs",
                    k.image, k.proposal
                ))
            })?;
            store.push(f)?;
        }
        let pairs: Vec<IndexedPair> = file.pairs.iter().map(|&(a, b, pgt, _)| IndexedPair { a, b, pgt }).collect();
        let cfg = self.cfg.effective_train();
        let outcome = train_indexed(&store, &pairs, &cfg, self.exec)?;
        save_checkpoint(
            &RankerCheckpoint {
                model: outcome.model,
                meta: TrainMeta {
                    seed: cfg.seed,
                    epoch: outcome.best_epoch,
                    loss: outcome.best_loss as f32,
                },
            },
            &self.out_path("ranker.srm"),
        )?;
        let mut log = String::from("epoch\ttrain_loss\tval_loss\tval_accuracy\n");
        for e in &outcome.log {
            let _ = writeln!(
                log,
                "{}\t{:.6}\t{:.6}\t{:.4}",
                e.epoch, e.train_loss, e.val_loss, e.val_accuracy
            );
        }
        let _ = writeln!(log, "best\t{}\t{:.6}", outcome.best_epoch, outcome.best_loss);
        write_text(&self.out_path("train_log.txt"), &log)?;
        Ok(vec!["ranker.srm".into(), "train_log.txt".into()])
    }

    fn load_ranker(&self) -> Result<RankerModel> {
        let path = self.out_path("ranker.srm");
        files::read_stage_input(&path, "train")?;
        let model = load_checkpoint(&path)?.model;
        let expected = 2 * self.dataset.feature_dim;
        if model.input_dim() != expected {
            return Err(Error::dim("checkpoint input width", expected, model.input_dim()));
        }
        Ok(model)
    }

    /// Scores, q and selection for every image, in manifest order.
    pub fn rank_images(&self) -> Result<Vec<RankedImage>> {
        let model = self.load_ranker()?;
        let table = RetrievalTable::read(&self.out_path("retrieval.tsv"))?;
        let raw = self.dataset.load_features()?;
        let by_image = self.proposal_features(&raw)?;
        let outputs = self.exec.try_map(&by_image, |props| {
            props.iter().map(|(_, f)| model.forward(f)).collect::<Result<Vec<f32>>>()
        })?;
        let mut ranked = Vec::with_capacity(by_image.len());
        for (k, rec) in self.dataset.records.iter().enumerate() {
            let own: Vec<(String, crate::io::BBox, f32)> = by_image[k]
                .iter()
                .zip(&outputs[k])
                .map(|((p, _), &s)| (p.id.clone(), p.bbox, s))
                .collect();
            if own.is_empty() {
                log::warn!("image {} has no proposals; its score table is empty", rec.id);
                ranked.push(RankedImage {
                    id: rec.id.clone(),
                    q: 0,
                    rows: Vec::new(),
                });
                continue;
            }
            let mut partners = Vec::new();
            for n in self.neighbors(&table, &rec.id)? {
                partners.extend_from_slice(&outputs[self.index_of(n, "retrieval.tsv")?]);
            }
            let scores = score_all(&own, &partners);
            let q = select_q(&scores)?;
            let rows = scores
                .ranked()
                .into_iter()
                .enumerate()
                .map(|(i, e)| RankRow {
                    proposal: e.id.clone(),
                    score: e.score,
                    branch: e.branch,
                    selected: i < q,
                    bbox: e.bbox,
                })
                .collect();
            ranked.push(RankedImage {
                id: rec.id.clone(),
                q,
                rows,
            });
        }
        Ok(ranked)
    }

    pub fn rank(&self) -> Result<Vec<String>> {
        let ranked = self.rank_images()?;
        files::write_rank(&ranked, &self.out_path("rank.tsv"))?;
        let mut artifacts = vec!["rank.tsv".to_string()];
        if self.cfg.coarse_masks {
            for (rec, r) in self.dataset.records.iter().zip(&ranked) {
                let rel = format!("coarse/{}.pgm", rec.id);
                write_map(&build_coarse_mask(rec.width, rec.height, &r.selected_boxes()), &self.out_path(&rel))?;
                artifacts.push(rel);
            }
        }
        Ok(artifacts)
    }

    fn ranked_by_id(&self) -> Result<HashMap<String, RankedImage>> {
        Ok(files::read_rank(&self.out_path("rank.tsv"))?
            .into_iter()
            .map(|r| (r.id.clone(), r))
            .collect())
    }

    pub fn fuse(&self) -> Result<Vec<String>> {
        let ranked = self.ranked_by_id()?;
        let fused = self.exec.try_map(&self.dataset.records, |rec| -> Result<(SaliencyMap, String)> {
            let r = ranked.get(&rec.id).ok_or_else(|| {
                Error::format(self.out_path("rank.tsv"), format!("no rows for image {}; re-run rank", rec.id))
            })?;
            let boxes = r.selected_boxes();
            let ic = build_coarse_mask(rec.width, rec.height, &boxes);
            let sals = self.dataset.load_candidate_maps(rec)?;
            let conf = confidence_matrix(&sals, &ic, &boxes, &self.cfg.fusion)?;
            let out = fuse(&sals, &conf, &boxes, &ic)?;
            let mut text = String::new();
            for m in 0..conf.models {
                let _ = write!(text, "{}\t{m}", rec.id);
                for b in 0..conf.boxes {
                    let _ = write!(text, "\t{:.6}", conf.get(m, b));
                }
                text.push('\n');
            }
            Ok((out, text))
        })?;
        let mut artifacts = Vec::with_capacity(fused.len() + 1);
        let mut report = String::from("image\tmodel\tconf_per_box\n");
        for (rec, (map, text)) in self.dataset.records.iter().zip(&fused) {
            let rel = format!("final/{}.pgm", rec.id);
            write_map(map, &self.out_path(&rel))?;
            artifacts.push(rel);
            report.push_str(text);
        }
        write_text(&self.out_path("confidence.txt"), &report)?;
        artifacts.push("confidence.txt".into());
        Ok(artifacts)
    }

    /// Evaluates every image with a GT mask; returns the artifacts and the report.
    pub fn eval(&self) -> Result<(Vec<String>, MetricReport)> {
        let ranked = self.ranked_by_id()?;
        let with_gt: Vec<&ImageRecord> = self.dataset.records.iter().filter(|r| r.gt_mask.is_some()).collect();
        let loaded = self.exec.try_map(&with_gt, |rec| -> Result<(SaliencyMap, SaliencyMap)> {
            let path = self.out_path(&format!("final/{}.pgm", rec.id));
            files::read_stage_input(&path, "fuse")?;
            let pred = read_map(&path)?;
            let gt = self.dataset.load_gt(rec)?.expect("filtered on gt_mask");
            Ok((pred, gt))
        })?;
        let items: Vec<EvalItem> = with_gt
            .iter()
            .zip(&loaded)
            .map(|(rec, (pred, gt))| EvalItem {
                id: &rec.id,
                pred,
                gt,
            })
            .collect();
        let name = self
            .cfg
            .manifest
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
            .unwrap_or("dataset");
        let mut report = evaluate(name, &items, &self.cfg.metrics, self.exec)?;
        let selected = with_gt
            .iter()
            .map(|rec| {
                ranked.get(&rec.id).map(|r| r.selected_boxes()).ok_or_else(|| {
                    Error::format(self.out_path("rank.tsv"), format!("no rows for image {}", rec.id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let gts: Vec<SaliencyMap> = loaded.into_iter().map(|(_, g)| g).collect();
        report.localization = Some(localization_prf(&selected, &gts, &self.cfg.metrics)?.into());
        write_text(&self.out_path("report.txt"), &report.render())?;
        let mut json = serde_json::to_string_pretty(&report).map_err(|e| Error::Invalid(e.to_string()))?;
        json.push('\n');
        write_text(&self.out_path("report.json"), &json)?;
        Ok((vec!["report.txt".into(), "report.json".into()], report))
    }
}
