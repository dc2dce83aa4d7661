use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{derive_seed, Dataset, PreprocessMode, Preprocessor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Indexed samples for training or evaluation. `sample` must depend only
/// on `(index, epoch)` so batches do not change with the worker count.
pub trait SampleSource<T: Scalar>: Sync {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> usize;
    fn num_classes(&self) -> usize;
    /// One `3×224×224` input.
    fn sample(&self, index: usize, epoch: u64) -> Result<Tensor<T>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn class_names(&self) -> Vec<String> {
        (0..self.num_classes()).map(|i| format!("class{i}")).collect()
    }
}

/// Decoded images preprocessed on the fly. Training mode draws crop and
/// flip from a stream keyed by `(seed, image id, epoch)`.
pub struct ImageSource<'a> {
    pub dataset: &'a Dataset,
    pub mode: PreprocessMode,
    pub seed: u64,
    pub preprocessor: Preprocessor,
}

impl<'a> ImageSource<'a> {
    pub fn train(dataset: &'a Dataset, seed: u64) -> Self {
        ImageSource {
            dataset,
            mode: PreprocessMode::Train,
            seed,
            preprocessor: Preprocessor::default(),
        }
    }

    pub fn eval(dataset: &'a Dataset) -> Self {
        ImageSource {
            dataset,
            mode: PreprocessMode::Eval,
            seed: 0,
            preprocessor: Preprocessor::default(),
        }
    }
}

impl<T: Scalar> SampleSource<T> for ImageSource<'_> {
    fn len(&self) -> usize {
        self.dataset.len()
    }

    fn label(&self, index: usize) -> usize {
        self.dataset.images[index].label
    }

    fn num_classes(&self) -> usize {
        self.dataset.num_classes()
    }

    fn sample(&self, index: usize, epoch: u64) -> Result<Tensor<T>> {
        let img = &self.dataset.images[index];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, img.id, epoch));
        let t = self
            .preprocessor
            .apply(&img.pixels, self.mode, &mut rng)
            .map_err(|e| Error::Image {
                path: img.source_path.clone().into(),
                reason: e.to_string(),
            })?;
        Ok(t.cast())
    }

    fn class_names(&self) -> Vec<String> {
        self.dataset.classes.clone()
    }
}

/// Ready-made input tensors, mainly for tests.
#[derive(Clone, Debug)]
pub struct TensorSource<T: Scalar> {
    pub inputs: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Scalar> SampleSource<T> for TensorSource<T> {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn sample(&self, index: usize, _epoch: u64) -> Result<Tensor<T>> {
        Ok(self.inputs[index].clone())
    }
}

/// Stacks the samples at `indices` into an `N×3×H×W` batch. Samples are
/// prepared in parallel; the result is independent of the pool size.
pub fn load_batch<T: Scalar, S: SampleSource<T> + ?Sized>(
    source: &S,
    indices: &[usize],
    epoch: u64,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let items: Vec<Tensor<T>> = indices
        .par_iter()
        .map(|&i| source.sample(i, epoch))
        .collect::<Result<_>>()?;
    let labels = indices.iter().map(|&i| source.label(i)).collect();
    Ok((Tensor::stack(&items)?, labels))
}

/// Visiting order for one epoch: a permutation seeded by `(seed, epoch)`,
/// or the identity.
pub fn epoch_order(n: usize, seed: u64, epoch: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    order
}

/// Consecutive batch ranges over `n` items. The partial last batch is
/// kept, except that a lone trailing sample joins the batch before it
/// (batch statistics of one image are degenerate).
pub fn batch_ranges(n: usize, batch: usize) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = (0..n).step_by(batch.max(1)).map(|s| s..(s + batch).min(n)).collect();
    if out.len() > 1 && out.last().map(|r| r.len()) == Some(1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_everything_once() {
        assert_eq!(batch_ranges(64, 32), vec![0..32, 32..64]);
        assert_eq!(batch_ranges(70, 32), vec![0..32, 32..64, 64..70]);
        assert_eq!(batch_ranges(65, 32), vec![0..32, 32..65]);
        assert_eq!(batch_ranges(1, 32), vec![0..1]);
        assert_eq!(batch_ranges(5, 100), vec![0..5]);
        for n in 1..80 {
            let r = batch_ranges(n, 7);
            assert_eq!(r.first().unwrap().start, 0);
            assert_eq!(r.last().unwrap().end, n);
            assert!(r.windows(2).all(|w| w[0].end == w[1].start));
        }
    }

    #[test]
    fn epoch_order_is_seeded_permutation() {
        let a = epoch_order(50, 3, 1, true);
        assert_eq!(a, epoch_order(50, 3, 1, true));
        assert_ne!(a, epoch_order(50, 3, 2, true));
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
        assert_eq!(epoch_order(5, 3, 1, false), vec![0, 1, 2, 3, 4]);
    }
}
