use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, EpochRecord, EvalReport, ImageSource, TrainConfig, Trainer};
use crate::data::{expand_dataset, make_folds, Dataset};
use crate::error::{Error, Result};
use crate::model::{build_model, ModelConfig};

/// Mean and population standard deviation, both in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::arg("mean of zero values"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(MeanStd { mean, std: var.sqrt() })
    }

    /// Fractions in [0, 1] summarised as percentages.
    pub fn from_fractions(values: &[f64]) -> Result<Self> {
        Self::from_values(&values.iter().map(|v| v * 100.0).collect::<Vec<_>>())
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}%(±{:.2})", self.mean, self.std)
    }
}

impl FromStr for MeanStd {
    type Err = Error;

    /// Parses `94.26%(±2.32)`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("expected \"<mean>%(±<std>)\", got {s:?}"));
        let (mean, rest) = s.trim().split_once("%(±").ok_or_else(bad)?;
        let std = rest.strip_suffix(')').ok_or_else(bad)?;
        Ok(MeanStd {
            mean: mean.trim().parse().map_err(|_| bad())?,
            std: std.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvOptions {
    pub k: usize,
    /// Seed of the fold shuffle; the training seed when absent.
    pub fold_seed: Option<u64>,
    /// Per-class image counts to augment the whole dataset up to.
    pub augment_targets: Option<Vec<usize>>,
    pub augment_seed: u64,
    /// Augment first and split the expanded set, letting copies of a test
    /// image land in training. Off by default.
    pub split_after_augment: bool,
    /// Evaluate the held-out fold after every epoch, not just at the end.
    pub eval_each_epoch: bool,
    /// Run only this 1-based fold of the plan.
    pub only_fold: Option<usize>,
    /// Receives `fold{i}.fmpx`, `fold{i}.jsonl` and `fold{i}_metrics.json`.
    pub out_dir: Option<PathBuf>,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            k: 5,
            fold_seed: None,
            augment_targets: None,
            augment_seed: 0,
            split_after_augment: false,
            eval_each_epoch: false,
            only_fold: None,
            out_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// 1-based.
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub epochs: Vec<EpochRecord>,
    pub eval: EvalReport,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub specificity: MeanStd,
    pub f1: MeanStd,
}

/// Targets for a training split in proportion to its share of each class,
/// never below what the split already has.
pub fn scaled_targets(targets: &[usize], totals: &[usize], have: &[usize]) -> Vec<usize> {
    targets
        .iter()
        .zip(totals)
        .zip(have)
        .map(|((&t, &n), &h)| {
            if n == 0 {
                h
            } else {
                ((t as f64 * h as f64 / n as f64).round() as usize).max(h)
            }
        })
        .collect()
}

/// Trains one model per fold from the same initial weights and reports the
/// held-out metrics of each plus their mean ± std.
pub fn cross_validate(
    dataset: &Dataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    opts: &CvOptions,
) -> Result<CvReport> {
    let expanded;
    let base = match (&opts.augment_targets, opts.split_after_augment) {
        (Some(t), true) => {
            expanded = expand_dataset(dataset, t, opts.augment_seed)?.dataset;
            &expanded
        }
        _ => dataset,
    };
    let plan = make_folds(base, opts.k, opts.fold_seed.unwrap_or(train_config.seed))?;
    if let Some(f) = opts.only_fold {
        if f == 0 || f > opts.k {
            return Err(Error::arg(format!("fold {f} out of range 1..={}", opts.k)));
        }
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut folds = Vec::with_capacity(opts.k);
    for (f, fold) in plan.folds().into_iter().enumerate() {
        if opts.only_fold.is_some_and(|only| only != f + 1) {
            continue;
        }
        let mut train_ds = base.subset(&fold.train);
        if let (Some(t), false) = (&opts.augment_targets, opts.split_after_augment) {
            let targets = scaled_targets(t, &dataset.class_counts(), &train_ds.class_counts());
            train_ds = expand_dataset(&train_ds, &targets, opts.augment_seed)?.dataset;
        }
        let test_ds = base.subset(&fold.test);
        log::info!(
            "fold {}/{}: {} train, {} test images",
            f + 1,
            opts.k,
            train_ds.len(),
            test_ds.len()
        );
        let model = build_model::<f32>(model_config, train_config.seed)?;
        let train_src = ImageSource::train(&train_ds, train_config.seed);
        let test_src = ImageSource::eval(&test_ds);
        let mut trainer = Trainer::new(&model, train_config.clone())?;
        let mut checkpoint = None;
        if let Some(dir) = &opts.out_dir {
            let log_path = dir.join(format!("fold{}.jsonl", f + 1));
            let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
            let ckpt = dir.join(format!("fold{}.fmpx", f + 1));
            trainer = trainer.with_log(BufWriter::new(file)).with_checkpoint(&ckpt);
            checkpoint = Some(ckpt);
        }
        let report = if opts.eval_each_epoch {
            trainer.fit(&train_src, Some(&test_src))?
        } else {
            trainer.fit::<_, ImageSource>(&train_src, None)?
        };
        let eval = evaluate(&model, &test_src, train_config.batch_size)?;
        if let Some(dir) = &opts.out_dir {
            let path = dir.join(format!("fold{}_metrics.json", f + 1));
            let json = serde_json::to_string_pretty(&eval).expect("report serialises");
            std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        }
        folds.push(FoldReport {
            fold: f + 1,
            train_size: train_ds.len(),
            test_size: test_ds.len(),
            epochs: report.epochs,
            eval,
            checkpoint,
        });
    }
    let col = |f: fn(&FoldReport) -> f64| MeanStd::from_fractions(&folds.iter().map(f).collect::<Vec<_>>());
    Ok(CvReport {
        accuracy: col(|r| r.eval.metrics.accuracy)?,
        precision: col(|r| r.eval.metrics.macro_precision)?,
        recall: col(|r| r.eval.metrics.macro_recall)?,
        specificity: col(|r| r.eval.metrics.macro_specificity)?,
        f1: col(|r| r.eval.metrics.macro_f1)?,
        folds,
    })
}
