use std::fs;
use std::path::{Path, PathBuf};

use clap::ArgMatches;
use fmpx::data::{load_dataset, plan_expansion, run_job, supported_extensions, write_ppm, Preprocessor};
use fmpx::gradcam::{grad_cam, heatmap_csv, heatmap_image, overlay_heatmap};
use fmpx::metrics::{bench_model, practicality_score, ranked_csv, read_practicality_file, PracticalityTable};
use fmpx::model::{build_model, load_checkpoint, ModelConfig};
use fmpx::nn::{set_intra_op_parallel, softmax};
use fmpx::train::{cross_validate, evaluate, CvOptions, ImageSource};
use fmpx::{Model32, Tensor32};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::config::{load_meta, resolve_train, write_sidecar, CheckpointMeta};
use crate::error::{io_err, CliError, CliResult};
use crate::manifest::{beside, RunManifest};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, v: &impl Serialize) -> CliResult<()> {
    write_text(path, &serde_json::to_string_pretty(v).expect("serialisable"))
}

fn load_model(c: &CheckpointArgs) -> CliResult<(Model32, CheckpointMeta)> {
    let meta = load_meta(&c.ckpt, c.model_config.as_deref())?;
    let mut model = load_checkpoint::<f32>(&c.ckpt, &meta.model)?;
    model.discard_aux_heads();
    model.eval();
    Ok((model, meta))
}

/// Eval-mode preprocessing of one image into a `1×3×224×224` batch.
fn image_batch(path: &Path) -> CliResult<Tensor32> {
    let img = fmpx::data::read_image(path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = Preprocessor::default().apply(&img, fmpx::data::PreprocessMode::Eval, &mut rng)?;
    Ok(Tensor32::stack(&[t])?)
}

pub fn train(a: &TrainArgs, m: &ArgMatches) -> CliResult<()> {
    let mut cfg = resolve_train(a, m)?;
    let dataset = load_dataset(&a.data)?;
    if cfg.model.num_classes != dataset.num_classes() {
        log::info!(
            "dataset has {} classes; setting num_classes from {}",
            dataset.num_classes(),
            cfg.model.num_classes
        );
        cfg.model.num_classes = dataset.num_classes();
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    create_dir(&a.out)?;
    let opts = CvOptions {
        k: cfg.data.folds,
        fold_seed: Some(cfg.train.seed),
        augment_targets: cfg.data.augment_targets.clone(),
        augment_seed: cfg.data.augment_seed,
        split_after_augment: cfg.data.split_after_augment,
        eval_each_epoch: cfg.data.eval_each_epoch,
        only_fold: cfg.data.fold,
        out_dir: Some(a.out.clone()),
    };
    let report = cross_validate(&dataset, &cfg.model, &cfg.train, &opts)?;
    let meta = CheckpointMeta {
        model: cfg.model.clone(),
        classes: dataset.classes.clone(),
    };
    let mut outputs = Vec::new();
    for f in &report.folds {
        let ckpt = f.checkpoint.as_ref().expect("out dir set");
        // confirm the file reads back before reporting success
        load_checkpoint::<f32>(ckpt, &cfg.model)?;
        outputs.push(ckpt.clone());
        outputs.push(write_sidecar(ckpt, &meta)?);
        outputs.push(a.out.join(format!("fold{}.jsonl", f.fold)));
        outputs.push(a.out.join(format!("fold{}_metrics.json", f.fold)));
    }
    let summary = json!({
        "folds": report.folds.iter().map(|f| json!({
            "fold": f.fold,
            "train_size": f.train_size,
            "test_size": f.test_size,
            "accuracy": f.eval.metrics.accuracy,
            "macro_recall": f.eval.metrics.macro_recall,
            "macro_auc": f.eval.auc.macro_auc,
        })).collect::<Vec<_>>(),
        "accuracy": report.accuracy.to_string(),
        "precision": report.precision.to_string(),
        "recall": report.recall.to_string(),
        "specificity": report.specificity.to_string(),
        "f1": report.f1.to_string(),
        "values": {
            "accuracy": report.accuracy,
            "precision": report.precision,
            "recall": report.recall,
            "specificity": report.specificity,
            "f1": report.f1,
        },
    });
    let summary_path = a.out.join("cv_summary.json");
    write_json(&summary_path, &summary)?;
    outputs.push(summary_path);
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    let mut man = RunManifest::begin("train")
        .config(&cfg)
        .seed("train", cfg.train.seed)
        .seed("augment", cfg.data.augment_seed)
        .input(&a.data);
    man.outputs = outputs;
    man.write(&a.out.join("manifest.json"))
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let (model, meta) = load_model(&a.checkpoint)?;
    let dataset = load_dataset(&a.data)?;
    if dataset.num_classes() != meta.model.num_classes {
        return Err(CliError::input(
            "dataset",
            format!(
                "{} has {} classes but the model predicts {}",
                a.data.display(),
                dataset.num_classes(),
                meta.model.num_classes
            ),
        ));
    }
    create_dir(&a.out)?;
    let report = evaluate(&model, &ImageSource::eval(&dataset), a.batch_size)?;
    let files = [
        ("metrics.json", serde_json::to_string_pretty(&report).expect("json")),
        ("metrics.csv", report.metrics.to_csv()),
        ("confusion.csv", report.metrics.confusion_csv()),
        ("roc.csv", report.auc.curves_csv()),
    ];
    let mut man = RunManifest::begin("eval")
        .config(&json!({ "model": meta.model, "batch_size": a.batch_size }))
        .input(&a.checkpoint.ckpt)
        .input(&a.data);
    for (name, text) in files {
        let p = a.out.join(name);
        write_text(&p, &text)?;
        man.outputs.push(p);
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "accuracy": report.metrics.accuracy,
            "macro_precision": report.metrics.macro_precision,
            "macro_recall": report.metrics.macro_recall,
            "macro_specificity": report.metrics.macro_specificity,
            "macro_f1": report.metrics.macro_f1,
            "macro_auc": report.auc.macro_auc,
            "micro_auc": report.auc.micro_auc,
        }))
        .expect("json")
    );
    man.write(&a.out.join("manifest.json"))
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    let (model, config) = match &a.ckpt {
        Some(ckpt) => {
            let (m, meta) = load_model(&CheckpointArgs {
                ckpt: ckpt.clone(),
                model_config: a.model_config.clone(),
            })?;
            (m, meta.model)
        }
        None => {
            let cfg = ModelConfig::default();
            let mut m = build_model::<f32>(&cfg, a.seed)?;
            m.discard_aux_heads();
            (m, cfg)
        }
    };
    let input = match &a.image {
        Some(p) => image_batch(p)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            Tensor32::from_fn(&[1, 3, 224, 224], |_| StandardNormal.sample(&mut rng))
        }
    };
    let result = bench_model(&model, &[input], a.n, a.warmup, a.parallel)?;
    let shown = json!({
        "fps": result.fps,
        "n": result.n,
        "warmup": result.warmup,
        "parameters": result.parameters,
        "p50_ms": result.p50_ms,
        "p95_ms": result.p95_ms,
        "mean_ms": result.mean_ms,
        "intra_op_parallel": result.intra_op_parallel,
        "threads": result.threads,
    });
    println!("{}", serde_json::to_string_pretty(&shown).expect("json"));
    write_json(&a.out, &result)?;
    let mut man = RunManifest::begin("bench")
        .config(&json!({
            "model": config, "n": a.n, "warmup": a.warmup, "parallel": a.parallel,
            "image": a.image, "ckpt": a.ckpt,
        }))
        .seed("input", a.seed);
    man.outputs.push(a.out.clone());
    man.write(&beside(&a.out))
}

fn list_images(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| io_err(path, e))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| supported_extensions().contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::input("image", format!("no images found in {}", path.display())));
    }
    Ok(out)
}

pub fn classify(a: &ClassifyArgs) -> CliResult<()> {
    let (model, meta) = load_model(&a.checkpoint)?;
    let names = a.classes.clone().unwrap_or(meta.classes.clone());
    if names.len() != meta.model.num_classes {
        return Err(CliError::input(
            "argument",
            format!("--classes lists {} names for {} classes", names.len(), meta.model.num_classes),
        ));
    }
    let mut results = Vec::new();
    let images = list_images(&a.image)?;
    for path in &images {
        let probs = softmax(&model.predict(&image_batch(path)?)?)?;
        let p: Vec<f64> = probs.data().iter().map(|&v| v as f64).collect();
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&i, &j| p[j].total_cmp(&p[i]).then(i.cmp(&j)));
        let top: Vec<_> = order
            .iter()
            .take(a.top_k.max(1))
            .map(|&c| json!({ "class": c, "name": names[c], "probability": p[c] }))
            .collect();
        results.push(json!({
            "image": path,
            "predicted": order[0],
            "predicted_name": names[order[0]],
            "top": top,
            "probabilities": p,
        }));
    }
    let out = json!({ "results": results });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    write_json(&a.out, &out)?;
    let mut man = RunManifest::begin("classify")
        .config(&json!({ "model": meta.model, "top_k": a.top_k, "classes": names }))
        .input(&a.checkpoint.ckpt)
        .input(&a.image);
    man.outputs.push(a.out.clone());
    man.write(&beside(&a.out))
}

pub fn gradcam(a: &GradcamArgs) -> CliResult<()> {
    let (model, meta) = load_model(&a.checkpoint)?;
    let img = fmpx::data::read_image(&a.image)?;
    let pre = Preprocessor::default();
    let crop = pre.center(&img)?;
    let x = Tensor32::stack(&[pre.normalize(&crop)])?;
    let probs = softmax(&model.predict(&x)?)?;
    let predicted = probs.argmax_rows()[0];
    let class = a.class.unwrap_or(predicted);
    let cam = grad_cam(&model, &x, class, a.layer.as_deref())?;
    create_dir(&a.out)?;
    let mut man = RunManifest::begin("gradcam")
        .config(&json!({ "model": meta.model, "class": class, "layer": cam.target_layer, "alpha": a.alpha }))
        .input(&a.checkpoint.ckpt)
        .input(&a.image);
    let heat_path = a.out.join("heatmap.ppm");
    write_ppm(&heatmap_image(&cam), &heat_path)?;
    let overlay_path = a.out.join("overlay.ppm");
    write_ppm(&overlay_heatmap(&crop, &cam.heatmap, a.alpha)?, &overlay_path)?;
    man.outputs.extend([heat_path, overlay_path]);
    if a.csv {
        let p = a.out.join("heatmap.csv");
        write_text(&p, &heatmap_csv(&cam))?;
        man.outputs.push(p);
    }
    let info = json!({
        "image": a.image,
        "target_class": cam.target_class,
        "target_name": meta.classes.get(class),
        "predicted": predicted,
        "target_layer": cam.target_layer,
        "feature_size": [cam.feature_height, cam.feature_width],
        "zero_map": cam.zero_map,
        "weights": cam.weights,
    });
    let info_path = a.out.join("cam.json");
    write_json(&info_path, &info)?;
    man.outputs.push(info_path);
    println!("{}", a.out.display());
    man.write(&a.out.join("manifest.json"))
}

pub fn augment(a: &AugmentArgs) -> CliResult<()> {
    let dataset = load_dataset(&a.data)?;
    let jobs = plan_expansion(&dataset, &a.targets, a.seed)?;
    create_dir(&a.out)?;
    for class in &dataset.classes {
        create_dir(&a.out.join(class))?;
    }
    let class_dir = |label: usize| a.out.join(&dataset.classes[label]);
    for img in &dataset.images {
        write_ppm(&img.pixels, class_dir(img.label).join(format!("{:06}.ppm", img.id)))?;
    }
    let provenance: Vec<_> = jobs
        .par_iter()
        .map(|job| -> CliResult<_> {
            let (img, prov) = run_job(&dataset, job);
            write_ppm(&img.pixels, class_dir(img.label).join(format!("{:06}.ppm", img.id)))?;
            Ok(prov)
        })
        .collect::<CliResult<_>>()?;
    let prov_path = a.out.join("provenance.jsonl");
    let mut lines = String::new();
    for p in &provenance {
        lines.push_str(&serde_json::to_string(p).expect("json"));
        lines.push('\n');
    }
    write_text(&prov_path, &lines)?;
    let mut counts = dataset.class_counts();
    for p in &provenance {
        counts[p.label] += 1;
    }
    println!(
        "{}",
        json!({ "classes": dataset.classes, "counts": counts, "generated": provenance.len() })
    );
    let mut man = RunManifest::begin("augment")
        .config(&json!({ "targets": a.targets, "classes": dataset.classes }))
        .seed("augment", a.seed)
        .input(&a.data);
    man.outputs.extend([a.out.clone(), prov_path]);
    man.write(&a.out.join("manifest.json"))
}

pub fn score(a: &ScoreArgs) -> CliResult<()> {
    let rows = read_practicality_file(&a.input)?;
    let table = PracticalityTable::new(rows);
    let result = practicality_score(&table)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let csv = ranked_csv(&table, &result);
    print!("{csv}");
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("ranked.csv"));
    write_text(&out, &csv)?;
    let mut man = RunManifest::begin("score")
        .config(&json!({ "weights": table.weights }))
        .input(&a.input);
    man.outputs.push(out.clone());
    man.write(&beside(&out))
}

/// Sizes the global pool and enables intra-op splitting when it has
/// more than one worker.
pub fn set_threads(n: usize) -> CliResult<()> {
    let n = n.max(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::internal("internal", format!("thread pool: {e}")))?;
    set_intra_op_parallel(n > 1);
    Ok(())
}
