//! Datasets, five-fold plans, augmentation and preprocessing.

mod augment;
mod image;
mod preprocess;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::image::{decode_ppm, encode_ppm, read_image, supported_extensions, to_u8, write_ppm, RgbImage};
pub use augment::{
    apply_pipeline, augment_image, derive_seed, expand_dataset, hsv_to_rgb, linear_contrast, plan_expansion,
    rgb_to_hsv, run_job, sample_pipeline, AugmentJob, AugmentStep, AugmentStrategy, ExpandedDataset, Provenance,
    STRATEGIES_PER_IMAGE,
};
pub use preprocess::{preprocess, PreprocessMode, Preprocessor, IMAGENET_MEAN, IMAGENET_STD, MIN_SIDE};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: RgbImage,
    pub label: usize,
    pub source_path: String,
    pub id: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    /// Class names; a label indexes this list.
    pub classes: Vec<String>,
    pub images: Vec<LabeledImage>,
    /// Files that could not be used, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for img in &self.images {
            counts[img.label] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|i| i.label).collect()
    }

    /// The images at `indices`, same class list.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            classes: self.classes.clone(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            skipped: Vec::new(),
        }
    }
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| supported_extensions().contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Reads `root/<class>/<image>`; classes sorted by name, ids assigned in
/// sorted path order. Unreadable or undersized files are skipped with a
/// warning and listed in [`Dataset::skipped`].
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let read_dir = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        v.sort();
        Ok(v)
    };
    let class_dirs: Vec<PathBuf> = read_dir(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Dataset(format!("{} has no class subdirectories", root.display())));
    }
    let mut ds = Dataset::default();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let files: Vec<PathBuf> = read_dir(dir)?.into_iter().filter(|p| p.is_file()).collect();
        let mut kept = 0;
        for path in files {
            if !has_image_extension(&path) {
                if path.extension().is_some_and(|e| ["png", "jpg", "jpeg"].contains(&e.to_str().unwrap_or(""))) {
                    log::warn!("skipping {}: format needs the `codecs` feature", path.display());
                    ds.skipped.push((path, "unsupported format".into()));
                }
                continue;
            }
            match read_image(&path) {
                Ok(img) if img.width() < MIN_SIDE || img.height() < MIN_SIDE => {
                    log::warn!("skipping {}: smaller than {MIN_SIDE}×{MIN_SIDE}", path.display());
                    ds.skipped.push((path, "too small".into()));
                }
                Ok(pixels) => {
                    ds.images.push(LabeledImage {
                        pixels,
                        label,
                        source_path: path.display().to_string(),
                        id: ds.images.len() as u64,
                    });
                    kept += 1;
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    ds.skipped.push((path, e.to_string()));
                }
            }
        }
        if kept == 0 {
            return Err(Error::Dataset(format!("class directory {} has no usable images", dir.display())));
        }
        ds.classes.push(name);
    }
    Ok(ds)
}

/// One train/test split, as indices into the dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// `per_class[class][fold]` lists that class's test indices in that fold.
    pub per_class: Vec<Vec<Vec<usize>>>,
}

impl FoldPlan {
    pub fn fold(&self, f: usize) -> Fold {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in &self.per_class {
            for (i, part) in class.iter().enumerate() {
                if i == f {
                    test.extend_from_slice(part);
                } else {
                    train.extend_from_slice(part);
                }
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        Fold { train, test }
    }

    pub fn folds(&self) -> Vec<Fold> {
        (0..self.k).map(|f| self.fold(f)).collect()
    }

    /// Test-set size per class for each fold: `[class][fold]`.
    pub fn test_sizes(&self) -> Vec<Vec<usize>> {
        self.per_class.iter().map(|c| c.iter().map(Vec::len).collect()).collect()
    }
}

/// Splits each class into `k` parts after a seeded shuffle. The first
/// `k − 1` parts get `⌊n/k⌋` items and the last gets the remainder.
pub fn make_folds_from_labels(labels: &[usize], num_classes: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::arg("k must be at least 2"));
    }
    let mut per_class = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Dataset(format!(
                "class {class} has {} samples, fewer than k = {k}",
                members.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        members.shuffle(&mut rng);
        let base = members.len() / k;
        let mut parts: Vec<Vec<usize>> = (0..k - 1).map(|f| members[f * base..(f + 1) * base].to_vec()).collect();
        parts.push(members[(k - 1) * base..].to_vec());
        per_class.push(parts);
    }
    Ok(FoldPlan { k, seed, per_class })
}

pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    make_folds_from_labels(&dataset.labels(), dataset.num_classes(), k, seed)
}

/// Small in-memory dataset of near-solid images, one colour per class,
/// with a slight brightness ramp across the images of each class.
pub fn solid_color_dataset(colors: &[[u8; 3]], per_class: usize, side: usize) -> Dataset {
    let mut images = Vec::with_capacity(colors.len() * per_class);
    for (label, rgb) in colors.iter().enumerate() {
        for j in 0..per_class {
            let shade = |c: u8| c.saturating_add((j % 8) as u8 * 2);
            let px = [shade(rgb[0]), shade(rgb[1]), shade(rgb[2])];
            let id = images.len() as u64;
            images.push(LabeledImage {
                pixels: RgbImage::filled(side, side, px),
                label,
                source_path: format!("synthetic/class{label}/{j}.ppm"),
                id,
            });
        }
    }
    Dataset {
        classes: (0..colors.len()).map(|i| format!("class{i}")).collect(),
        images,
        skipped: Vec::new(),
    }
}

/// Red, green, blue and yellow.
pub const FOUR_COLORS: [[u8; 3]; 4] = [[200, 30, 30], [30, 200, 30], [30, 30, 200], [200, 200, 30]];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_sizes_follow_remainder_in_last_part() {
        let labels: Vec<usize> = (0..23).map(|i| i % 2).collect();
        let plan = make_folds_from_labels(&labels, 2, 5, 1).unwrap();
        assert_eq!(plan.test_sizes(), vec![vec![2, 2, 2, 2, 4], vec![2, 2, 2, 2, 3]]);
        assert!(make_folds_from_labels(&labels, 3, 5, 1).is_err());
        assert!(make_folds_from_labels(&[0, 0, 0], 1, 5, 1).is_err());
    }

    #[test]
    fn folds_are_reproducible_and_disjoint() {
        let labels: Vec<usize> = (0..50).map(|i| i % 3).collect();
        let a = make_folds_from_labels(&labels, 3, 5, 7).unwrap();
        assert_eq!(a, make_folds_from_labels(&labels, 3, 5, 7).unwrap());
        assert_ne!(a, make_folds_from_labels(&labels, 3, 5, 8).unwrap());
        for f in a.folds() {
            assert_eq!(f.train.len() + f.test.len(), 50);
            assert!(f.test.iter().all(|t| !f.train.contains(t)));
        }
    }
}
