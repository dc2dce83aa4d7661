use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use fmpx::model::ModelConfig;
use fmpx::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::args::{ModelArgs, TrainArgs};
use crate::error::{io_err, CliError, CliResult};

/// Fold and augmentation settings of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub folds: usize,
    pub fold: Option<usize>,
    pub augment_targets: Option<Vec<usize>>,
    pub augment_seed: u64,
    pub split_after_augment: bool,
    pub eval_each_epoch: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            folds: 5,
            fold: None,
            augment_targets: None,
            augment_seed: 0,
            split_after_augment: false,
            eval_each_epoch: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

pub fn read_json(path: &Path) -> CliResult<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input("config", format!("{}: {e}", path.display())))
}

/// A config file, or the `config` section of a run manifest.
pub fn load_run_config(path: &Path) -> CliResult<RunConfig> {
    let mut v = read_json(path)?;
    if let Some(inner) = v.get_mut("config") {
        v = inner.take();
    }
    serde_json::from_value(v).map_err(|e| CliError::input("config", format!("{}: {e}", path.display())))
}

/// Whether the user supplied `id` on the command line or through its
/// environment variable, as opposed to clap filling in the default.
pub fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine | ValueSource::EnvVariable))
}

pub fn apply_model_args(cfg: &mut ModelConfig, a: &ModelArgs, m: &ArgMatches) {
    if explicit(m, "no_ablgfm") {
        cfg.use_ablgfm = !a.no_ablgfm;
    }
    if explicit(m, "no_aux") {
        cfg.use_aux_heads = !a.no_aux;
    }
    if explicit(m, "no_dropblock") {
        cfg.use_dropblock = !a.no_dropblock;
    }
    if explicit(m, "activation") {
        cfg.activation = a.activation;
    }
    if explicit(m, "stage5") {
        cfg.stage5_channels = a.stage5;
    }
    if explicit(m, "dropblock_prob") {
        cfg.dropblock.prob = a.dropblock_prob;
    }
}

/// Defaults, then the config file, then explicit flags.
pub fn resolve_train(a: &TrainArgs, m: &ArgMatches) -> CliResult<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => load_run_config(p)?,
        None => RunConfig::default(),
    };
    apply_model_args(&mut cfg.model, &a.model, m);
    let t = &mut cfg.train;
    if explicit(m, "seed") {
        t.seed = a.seed;
    }
    if explicit(m, "epochs") {
        t.epochs = a.epochs;
    }
    if explicit(m, "batch_size") {
        t.batch_size = a.batch_size;
    }
    if explicit(m, "lr") {
        t.lr = a.lr;
    }
    if explicit(m, "aux_weights") {
        t.aux_weights = [a.aux_weights[0], a.aux_weights[1]];
    }
    if explicit(m, "no_shuffle") {
        t.shuffle = !a.no_shuffle;
    }
    let d = &mut cfg.data;
    if explicit(m, "folds") {
        d.folds = a.folds;
    }
    if explicit(m, "fold") {
        d.fold = a.fold;
    }
    if explicit(m, "augment_targets") {
        d.augment_targets = a.augment_targets.clone();
    }
    if explicit(m, "augment_seed") {
        d.augment_seed = a.augment_seed;
    }
    if explicit(m, "split_after_augment") {
        d.split_after_augment = a.split_after_augment;
    }
    if explicit(m, "eval_each_epoch") {
        d.eval_each_epoch = a.eval_each_epoch;
    }
    Ok(cfg)
}

/// Model config and class names stored beside a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    #[serde(default)]
    pub classes: Vec<String>,
}

pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar(ckpt: &Path, meta: &CheckpointMeta) -> CliResult<PathBuf> {
    let path = sidecar_path(ckpt);
    let json = serde_json::to_string_pretty(meta).expect("meta serialises");
    std::fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Reads `{"model": .., "classes": ..}` or a bare model config.
pub fn load_meta(ckpt: &Path, explicit_path: Option<&Path>) -> CliResult<CheckpointMeta> {
    let path = explicit_path.map(Path::to_path_buf).unwrap_or_else(|| sidecar_path(ckpt));
    if !path.exists() {
        return Err(CliError::input(
            "config",
            format!("model config {} not found; pass --model-config", path.display()),
        ));
    }
    let v = read_json(&path)?;
    let parsed = if v.get("model").is_some() {
        serde_json::from_value(v)
    } else {
        serde_json::from_value(v).map(|model| CheckpointMeta { model, classes: Vec::new() })
    };
    let mut meta: CheckpointMeta =
        parsed.map_err(|e| CliError::input("config", format!("{}: {e}", path.display())))?;
    if meta.classes.is_empty() {
        meta.classes = (0..meta.model.num_classes).map(|i| format!("class{i}")).collect();
    }
    Ok(meta)
}
