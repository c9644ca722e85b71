//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semsal::fusion::{confidence, confidence_matrix, fuse, FusionConfig};
use semsal::io::{
    decode_checkpoint, decode_feature_blob, decode_pgm, encode_checkpoint, encode_feature_blob, encode_pgm,
    FeatureStore, ObjectProposal, RankerCheckpoint, TrainMeta,
};
use semsal::localization::{build_coarse_mask, select_q_from};
use semsal::metrics::{e_measure, f_beta, f_measure, mae, s_measure, MetricConfig, Mode, METRIC_NAMES};
use semsal::pairgen::{Label, TrainingPair};
use semsal::par::Exec;
use semsal::pipeline::files::RetrievalTable;
use semsal::pipeline::{PipelineConfig, Runner};
use semsal::proposals::{filter_proposals, iou, FilterConfig};
use semsal::ranker::{branch_dims, pair_gradient, train, Gradient, HingeVariant, Mlp, TrainConfig};
use semsal::synth::{generate, separable_pairs, SeparableConfig, SynthConfig};
use semsal::{BBox, SaliencyMap};

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn within(limit: Duration, t: Instant, what: &str) -> Result<Duration, String> {
    let el = t.elapsed();
    check(el < limit, || format!("{what} took {el:.2?}, limit {limit:?}"))?;
    Ok(el)
}

fn random_model(rng: &mut ChaCha8Rng) -> Mlp<f64> {
    let input = rng.random_range(1..=16);
    let hidden: Vec<usize> = (0..rng.random_range(0..=3)).map(|_| rng.random_range(1..=16)).collect();
    let mut model = Mlp::init(&branch_dims(input, &hidden), rng.random(), 1.0).unwrap();
    // Zero biases would put whole layers exactly on the ReLU kink.
    for i in 0..model.param_count() {
        model.set_param(i, rng.random_range(-1.0..1.0));
    }
    model
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for m in 0..50 {
        let mut model = random_model(&mut rng);
        let d = model.input_dim();
        let f1: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f2: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pgt = Label::from_bool(rng.random());
        let variant = if m % 2 == 0 { HingeVariant::AsWritten } else { HingeVariant::Margin };
        let (s1, s2) = (model.forward(&f1).unwrap(), model.forward(&f2).unwrap());
        let y = pgt.sign::<f64>();
        // rho placed so the hinge sits one unit inside its active side
        let rho = match variant {
            HingeVariant::AsWritten => y * (s2 - s1) - 1.0,
            HingeVariant::Margin => y * (s1 - s2) + 1.0,
        };
        let mut grad = Gradient::zeros_like(&model);
        let loss = pair_gradient(&model, &f1, &f2, pgt, rho, variant, &mut grad);
        check(loss > 0.0, || format!("model {m}: hinge inactive"))?;
        let analytic: Vec<f64> = grad.iter().collect();
        for (i, &a) in analytic.iter().enumerate() {
            let p = model.param(i);
            let mut eval = |v: f64| {
                model.set_param(i, v);
                let mut g = Gradient::zeros_like(&model);
                pair_gradient(&model, &f1, &f2, pgt, rho, variant, &mut g)
            };
            let numeric = (eval(p + h) - eval(p - h)) / (2.0 * h);
            model.set_param(i, p);
            // A dead unit has exact gradient 0 and a quotient of pure
            // cancellation noise (~1e-12); the floor keeps that below 1e-5.
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    check(worst < 1e-4, || format!("max relative error {worst:.3e}"))?;
    let el = within(Duration::from_secs(10), t, "gradient check")?;
    Ok(format!("{checked} parameters over 50 models, max rel err {worst:.2e}, {el:.2?}"))
}

fn holdout_accuracy(model: &Mlp<f32>, pairs: &[TrainingPair]) -> f64 {
    let ok = pairs
        .iter()
        .filter(|p| {
            let (a, b) = (model.forward(&p.f1).unwrap(), model.forward(&p.f2).unwrap());
            match p.pgt {
                Label::Pos => a > b,
                Label::Neg => b > a,
            }
        })
        .count();
    ok as f64 / pairs.len() as f64
}

fn learnability_config(variant: HingeVariant) -> TrainConfig {
    TrainConfig {
        epochs: 50,
        hidden: vec![64, 32],
        variant,
        ..TrainConfig::default()
    }
}

fn criterion_2() -> Outcome {
    let (train_pairs, holdout) = separable_pairs(&SeparableConfig::default());
    let t = Instant::now();
    let out = train(&train_pairs, &learnability_config(HingeVariant::Margin), Exec::default())
        .map_err(|e| e.to_string())?;
    let el = t.elapsed();
    let acc = holdout_accuracy(&out.model, &holdout);
    check(acc >= 0.95, || format!("holdout accuracy {acc:.3}"))?;
    within(Duration::from_secs(60), t, "training")?;
    Ok(format!(
        "margin hinge: holdout accuracy {acc:.3} on {} pairs, {el:.2?}",
        train_pairs.len()
    ))
}

/// Not gated: the hinge exactly as stated, at the default init and with
/// initial outputs spread well beyond the margin.
fn as_written_report() -> String {
    let (train_pairs, holdout) = separable_pairs(&SeparableConfig::default());
    let mut parts = Vec::new();
    for init_scale in [1.0, 10.0] {
        let cfg = TrainConfig {
            init_scale,
            learning_rate: if init_scale > 1.0 { 1e-2 } else { 1e-3 },
            ..learnability_config(HingeVariant::AsWritten)
        };
        let acc = train(&train_pairs, &cfg, Exec::default())
            .map(|o| format!("{:.3}", holdout_accuracy(&o.model, &holdout)))
            .unwrap_or_else(|e| e.to_string());
        parts.push(format!("init x{init_scale}: {acc}"));
    }
    format!("as-written hinge holdout accuracy ({})", parts.join(", "))
}

/// Synthetic run directory shared by criteria 3 and 8.
struct Run {
    runner: Runner,
    elapsed: Duration,
    planted: Vec<semsal::synth::PlantedImage>,
}

fn pipeline_run(dir: &Path, images: usize, proposals: usize) -> Result<Run, String> {
    let synth = SynthConfig {
        images,
        proposals,
        ..SynthConfig::default()
    };
    let data = generate(&synth).map_err(|e| e.to_string())?;
    data.write(&dir.join("data")).map_err(|e| e.to_string())?;
    let mut cfg = PipelineConfig {
        manifest: dir.join("data/manifest.json"),
        out: dir.join("run"),
        ..PipelineConfig::default()
    };
    cfg.train.hidden = vec![64, 32];
    cfg.train.epochs = 10;
    cfg.train.variant = HingeVariant::Margin;
    let t = Instant::now();
    let runner = Runner::new(cfg).map_err(|e| e.to_string())?;
    runner.run_all().map_err(|e| e.to_string())?;
    Ok(Run {
        runner,
        elapsed: t.elapsed(),
        planted: data.planted,
    })
}

fn criterion_3(run: &Run) -> Outcome {
    let ranked = run.runner.rank_images().map_err(|e| e.to_string())?;
    let table = RetrievalTable::read(&run.runner.out_path("retrieval.tsv")).map_err(|e| e.to_string())?;
    let index: std::collections::HashMap<&str, usize> =
        ranked.iter().enumerate().map(|(k, r)| (r.id.as_str(), k)).collect();
    let mut hits = 0;
    for (img, planted) in ranked.iter().zip(&run.planted) {
        let own: Vec<f32> = img.rows.iter().map(|r| r.branch).collect();
        let mut partners = Vec::new();
        for n in table.neighbors(&img.id).ok_or("missing retrieval row")? {
            partners.extend(ranked[index[n.as_str()]].rows.iter().map(|r| r.branch));
        }
        for (i, row) in img.rows.iter().enumerate() {
            let mut wins = 0u32;
            for (j, &o) in own.iter().enumerate() {
                if j != i && o < row.branch {
                    wins += 1;
                }
            }
            for &o in &partners {
                if o < row.branch {
                    wins += 1;
                }
            }
            check(wins == row.score, || {
                format!("{}:{} score {} vs brute force {wins}", img.id, row.proposal, row.score)
            })?;
        }
        let xi: Vec<u32> = img.rows.iter().map(|r| r.score).collect();
        let mut best = (0usize, i64::MIN);
        for q in 1..xi.len() {
            let gap = xi[q - 1] as i64 - xi[q] as i64;
            if gap > best.1 {
                best = (q, gap);
            }
        }
        let exhaustive = if xi.len() < 2 { 1 } else { best.0 };
        check(img.q == exhaustive && select_q_from(&xi) == exhaustive, || {
            format!("{}: q {} vs gap search {exhaustive}", img.id, img.q)
        })?;
        if img.rows[0].proposal == planted.proposals[planted.salient].id {
            hits += 1;
        }
    }
    let rate = hits as f64 / ranked.len() as f64;
    check(ranked.len() == 100, || format!("{} images", ranked.len()))?;
    check(rate >= 0.95, || format!("top-1 planted rate {rate:.2}"))?;
    Ok(format!(
        "win counts and q exact on {} images; top-1 planted in {hits}/{}",
        ranked.len(),
        ranked.len()
    ))
}

fn criterion_4() -> Outcome {
    let cfg = FusionConfig::default();
    let data = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_scale = 0.0f64;
    for (k, planted) in data.planted.iter().enumerate() {
        let (w, h) = data.gts[k].dims();
        let take = rng.random_range(1..=planted.proposals.len());
        let boxes: Vec<BBox> = planted.proposals[..take].iter().map(|p| p.bbox).collect();
        let ic = build_coarse_mask(w, h, &boxes);
        let sals = &data.maps[k];
        let conf = confidence_matrix(sals, &ic, &boxes, &cfg).map_err(|e| e.to_string())?;
        let base = fuse(sals, &conf, &boxes, &ic).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                if !boxes.iter().any(|b| b.contains(x, y)) {
                    check(base.get(x, y) == 0.0, || format!("image {k}: nonzero at ({x}, {y})"))?;
                }
            }
        }
        for c in [0.5, 3.0] {
            let scaled = fuse(sals, &conf.scaled(c), &boxes, &ic).map_err(|e| e.to_string())?;
            for (a, b) in base.data().iter().zip(scaled.data()) {
                worst_scale = worst_scale.max((a - b).abs() as f64);
            }
        }
    }
    check(worst_scale <= 1e-6, || format!("scaling moved a pixel by {worst_scale:.2e}"))?;
    let b = BBox::new(1, 1, 2, 2);
    let ic = build_coarse_mask(4, 4, &[b]);
    let hand = confidence(&ic, &ic, &b, &cfg).map_err(|e| e.to_string())?;
    check((hand - 1.4375).abs() < 1e-4, || format!("4x4 fixture confidence {hand}"))?;
    Ok(format!(
        "{} fixtures zero outside boxes, scale drift {worst_scale:.1e}, 4x4 confidence {hand:.6}",
        data.planted.len()
    ))
}

fn map4(rows: [[f32; 4]; 4]) -> SaliencyMap {
    SaliencyMap::new(4, 4, rows.iter().flatten().copied().collect()).unwrap()
}

fn criterion_5() -> Outcome {
    let cfg = MetricConfig::default();
    let e = |r: semsal::Result<f64>| r.map_err(|e| e.to_string());
    let f = f_beta(0.8, 0.5, 0.3);
    check((f - 0.7027).abs() < 1e-4, || format!("F(0.8, 0.5) = {f}"))?;

    let gt = map4([[0., 0., 0., 0.], [0., 1., 1., 0.], [0., 1., 1., 0.], [0., 0., 0., 0.]]);
    let pred = map4([
        [0.0, 0.1, 0.2, 0.0],
        [0.1, 0.9, 0.8, 0.2],
        [0.0, 0.7, 1.0, 0.1],
        [0.0, 0.0, 0.3, 0.0],
    ]);
    let gt_b = map4([[1., 1., 0., 0.], [1., 1., 0., 0.], [1., 0., 0., 0.], [0., 0., 0., 0.]]);
    let pred_b = map4([
        [0.8, 0.6, 0.2, 0.0],
        [0.4, 1.0, 0.0, 0.0],
        [0.2, 0.2, 0.5, 0.0],
        [0.0, 0.0, 0.0, 0.1],
    ]);
    let fixtures = [
        ("MAE", e(mae(&pred, &gt))?, 0.1),
        ("S a", e(s_measure(&pred, &gt, &cfg))?, 0.7654996327056962),
        ("S b", e(s_measure(&pred_b, &gt_b, &cfg))?, 0.6061088279798812),
        ("meanE a", e(e_measure(&pred, &gt, &cfg, Mode::Mean))?, 0.8279413336256374),
        ("adpE a", e(e_measure(&pred, &gt, &cfg, Mode::Adaptive))?, 1.0),
        ("meanF a", e(f_measure(&pred, &gt, &cfg, Mode::Mean))?, 0.8272094208929593),
        ("S perfect", e(s_measure(&gt, &gt, &cfg))?, 1.0),
        ("E perfect adp", e(e_measure(&gt, &gt, &cfg, Mode::Adaptive))?, 1.0),
        ("E perfect mean", e(e_measure(&gt, &gt, &cfg, Mode::Mean))?, 1.0),
        ("E perfect max", e(e_measure(&gt, &gt, &cfg, Mode::Max))?, 1.0),
    ];
    for (name, got, want) in fixtures {
        check((got - want).abs() < 1e-4, || format!("{name}: {got} vs {want}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..100 {
        let (w, h) = (rng.random_range(2..24), rng.random_range(2..24));
        let p = SaliencyMap::new(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect()).map_err(|e| e.to_string())?;
        let g = SaliencyMap::new(w, h, (0..w * h).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect())
            .map_err(|e| e.to_string())?;
        for (name, max, mean) in [
            ("F", e(f_measure(&p, &g, &cfg, Mode::Max))?, e(f_measure(&p, &g, &cfg, Mode::Mean))?),
            ("E", e(e_measure(&p, &g, &cfg, Mode::Max))?, e(e_measure(&p, &g, &cfg, Mode::Mean))?),
        ] {
            check(max >= mean, || format!("pair {k}: max{name} {max} < mean{name} {mean}"))?;
        }
    }
    Ok(format!("F(0.8, 0.5) = {f:.4}, {} fixtures, 100 random max/mean pairs", fixtures.len()))
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(
        rng.random_range(0..60),
        rng.random_range(0..60),
        rng.random_range(1..40),
        rng.random_range(1..40),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10_000 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        check(iou(&a, &b) == iou(&b, &a), || format!("iou asymmetric on {a:?} {b:?}"))?;
    }
    let cfg = FilterConfig::default();
    for set in 0..500 {
        let n = rng.random_range(0..40);
        let props: Vec<ObjectProposal> = (0..n)
            .map(|k| ObjectProposal {
                id: format!("p{k:02}"),
                bbox: random_box(&mut rng),
                confidence: rng.random(),
                feature_ref: 0,
                enlarged_feature_ref: 0,
            })
            .collect();
        let kept = filter_proposals(&props, &cfg);
        check(kept.len() <= cfg.max_proposals, || format!("set {set}: {} kept", kept.len()))?;
        check(filter_proposals(&kept, &cfg) == kept, || format!("set {set}: not idempotent"))?;
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                let v = iou(&a.bbox, &b.bbox);
                check(v < cfg.iou_threshold, || format!("set {set}: kept pair with IOU {v}"))?;
            }
        }
    }
    Ok("10000 symmetric IOU pairs, 500 filtered sets".into())
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_7(tmp: &Path) -> Outcome {
    let synth = SynthConfig {
        seed: 7,
        ..SynthConfig::default()
    };
    let mut runs = Vec::new();
    for (k, jobs) in [(0, 0), (1, 1)] {
        let root = tmp.join(format!("det{k}"));
        generate(&synth).map_err(|e| e.to_string())?.write(&root.join("data")).map_err(|e| e.to_string())?;
        let mut cfg = PipelineConfig {
            manifest: root.join("data/manifest.json"),
            out: root.join("run"),
            seed: 7,
            jobs,
            ..PipelineConfig::default()
        };
        cfg.train.hidden = vec![32, 16];
        cfg.train.epochs = 4;
        Runner::new(cfg).and_then(|r| r.run_all()).map_err(|e| e.to_string())?;
        runs.push(root);
    }
    check(dir_bytes(&runs[0].join("data")) == dir_bytes(&runs[1].join("data")), || {
        "fixtures differ".into()
    })?;
    let read = |p: &Path| fs::read(p).map_err(|e| e.to_string());
    check(read(&runs[0].join("run/ranker.srm"))? == read(&runs[1].join("run/ranker.srm"))?, || {
        "checkpoints differ".into()
    })?;
    let finals = dir_bytes(&runs[0].join("run/final"));
    check(!finals.is_empty() && finals == dir_bytes(&runs[1].join("run/final")), || {
        "final maps differ".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dim = 13;
    let rows: Vec<Vec<f32>> = (0..50)
        .map(|_| (0..dim).map(|_| f32::from_bits(rng.random::<u32>() & 0xbf7f_ffff)).collect())
        .collect();
    let store = FeatureStore::from_rows(dim, &rows).map_err(|e| e.to_string())?;
    let blob = encode_feature_blob(&store);
    let back = decode_feature_blob(Path::new("mem"), &blob).map_err(|e| e.to_string())?;
    check(encode_feature_blob(&back) == blob, || "feature blob round-trip".into())?;
    for (k, r) in rows.iter().enumerate() {
        let got = back.get(k as u32).unwrap();
        check(got.iter().zip(r).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("feature row {k} changed")
        })?;
    }

    let map = SaliencyMap::new(17, 9, (0..17 * 9).map(|_| rng.random_range(0u8..=255) as f32 / 255.0).collect())
        .map_err(|e| e.to_string())?;
    let pgm = encode_pgm(&map);
    let decoded = decode_pgm(Path::new("mem"), &pgm).map_err(|e| e.to_string())?;
    check(decoded == map && encode_pgm(&decoded) == pgm, || "PGM round-trip".into())?;

    let model = Mlp::<f64>::init(&branch_dims(12, &[7, 5]), 7, 1.0).map_err(|e| e.to_string())?.cast::<f32>();
    let ckpt = RankerCheckpoint {
        model,
        meta: TrainMeta {
            seed: 7,
            epoch: 3,
            loss: 0.25,
        },
    };
    let bytes = encode_checkpoint(&ckpt);
    let back = decode_checkpoint(Path::new("mem"), &bytes).map_err(|e| e.to_string())?;
    check(back == ckpt && encode_checkpoint(&back) == bytes, || "checkpoint round-trip".into())?;
    Ok(format!(
        "parallel and sequential runs byte-identical ({} final maps); blob, PGM, checkpoint round-trips exact",
        finals.len()
    ))
}

fn criterion_8(run: &Run) -> Outcome {
    check(run.elapsed < Duration::from_secs(120), || {
        format!("pipeline took {:.2?}", run.elapsed)
    })?;
    let report = fs::read_to_string(run.runner.out_path("report.txt")).map_err(|e| e.to_string())?;
    for name in METRIC_NAMES.iter().chain(&["locP", "locR", "locF"]) {
        check(report.contains(name), || format!("report lacks {name}"))?;
    }
    check(run.runner.out_path("report.json").exists(), || "no report.json".into())?;
    Ok(format!("100 images x 10 proposals in {:.2?}", run.elapsed))
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes this
    // target's name skips it, as libtest would.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let run = pipeline_run(tmp.path(), 100, 10);

    let mut results: Vec<(u32, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
    ];
    println!("info  as-written loss: {}", as_written_report());
    match &run {
        Ok(r) => results.push((3, criterion_3(r))),
        Err(e) => results.push((3, Err(format!("pipeline failed: {e}")))),
    }
    results.push((4, criterion_4()));
    results.push((5, criterion_5()));
    results.push((6, criterion_6()));
    results.push((7, criterion_7(tmp.path())));
    match &run {
        Ok(r) => results.push((8, criterion_8(r))),
        Err(e) => results.push((8, Err(format!("pipeline failed: {e}")))),
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(detail) => println!("PASS  criterion {n}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {n}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
