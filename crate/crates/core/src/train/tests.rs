use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{solid_color_dataset, FOUR_COLORS};
use crate::model::{build_model, load_checkpoint, ModelConfig};

fn logits(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Var<f64> {
    Var::param(Tensor::from_fn(&[n, k], |_| rng.random_range(-3.0..3.0)))
}

/// Scalar cross-entropy of one row, written out directly.
fn ce_row(row: &[f64], y: usize) -> f64 {
    let z: f64 = row.iter().map(|v| v.exp()).sum();
    -(row[y].exp() / z).ln()
}

fn ce_oracle(l: &Var<f64>, labels: &[usize]) -> f64 {
    let k = l.shape()[1];
    let rows: Vec<&[f64]> = l.value().data().chunks(k).collect();
    rows.iter().zip(labels).map(|(r, &y)| ce_row(r, y)).sum::<f64>() / labels.len() as f64
}

#[test]
fn total_loss_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels = [0, 3, 1, 2, 2];
    let (l3, l1, l2) = (logits(&mut rng, 5, 4), logits(&mut rng, 5, 4), logits(&mut rng, 5, 4));
    let only = total_loss(&l3, Some(&l1), Some(&l2), &labels, 0.0, 0.0).unwrap();
    let ce3 = softmax_cross_entropy(&l3, &labels).unwrap();
    assert_eq!(only.value().data()[0].to_bits(), ce3.value().data()[0].to_bits());

    let u = Var::constant(Tensor::<f64>::zeros(&[3, 4]));
    let t = total_loss(&u, Some(&u), Some(&u), &[0, 1, 2], 1.0, 1.0).unwrap();
    assert!((t.value().data()[0] - 3.0 * 4f64.ln()).abs() < 1e-12);

    let (a, b) = (0.3, 1.7);
    let t = total_loss(&l3, Some(&l1), Some(&l2), &labels, a, b).unwrap();
    let want = ce_oracle(&l3, &labels) + a * ce_oracle(&l1, &labels) + b * ce_oracle(&l2, &labels);
    assert!((t.value().data()[0] - want).abs() < 1e-12);

    assert!(total_loss(&l3, Some(&l1), None, &labels, -0.1, 1.0).is_err());
    let wrong = logits(&mut rng, 5, 3);
    assert!(total_loss(&l3, Some(&wrong), None, &labels, 1.0, 1.0).is_err());
}

#[test]
fn config_defaults_and_validation() {
    let c = TrainConfig::default();
    assert_eq!((c.lr, c.batch_size, c.epochs), (1e-4, 32, 100));
    assert_eq!(c.aux_weights, [1.0, 1.0]);
    assert_eq!((c.adam.beta1, c.adam.beta2, c.adam.eps), (0.9, 0.999, 1e-8));
    let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
    assert_eq!(parsed.epochs, 3);
    assert_eq!(parsed.lr, 1e-4);
    for bad in [
        TrainConfig { lr: -1.0, ..c.clone() },
        TrainConfig { batch_size: 0, ..c.clone() },
        TrainConfig { aux_weights: [1.0, -2.0], ..c.clone() },
    ] {
        assert!(bad.validate().is_err());
    }
}

fn random_batch(seed: u64, n: usize) -> (Tensor<f32>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[n, 3, 224, 224], |_| rng.random_range(-1.5f32..1.5));
    let labels = (0..n).map(|i| i % 4).collect();
    (x, labels)
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        epochs: 1,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_engines_match_bitwise_after_three_steps() {
    let run = || {
        let m = build_model::<f32>(&ModelConfig::default(), 4).unwrap();
        let mut t = Trainer::new(&m, small_cfg()).unwrap();
        let mut losses = Vec::new();
        for s in 0..3 {
            let (x, y) = random_batch(s, 2);
            losses.push(t.step(&x, &y).unwrap().loss.to_bits());
        }
        (m.state(), losses)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    for ((na, ta), (nb, tb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert!(ta.bitwise_eq(tb), "{na}");
    }
}

#[test]
fn zero_lr_leaves_parameters_bitwise() {
    let m = build_model::<f32>(&ModelConfig::default(), 2).unwrap();
    let before: Vec<_> = parameters(&m).iter().map(|(n, p)| (n.clone(), p.value())).collect();
    let mut t = Trainer::new(&m, TrainConfig { lr: 0.0, ..small_cfg() }).unwrap();
    let (x, y) = random_batch(1, 2);
    t.step(&x, &y).unwrap();
    for ((n, p), (_, b)) in parameters(&m).iter().zip(&before) {
        assert!(p.value().bitwise_eq(b), "{n}");
    }
}

#[test]
fn zero_aux_weight_matches_single_head_gradients() {
    let (x, y) = random_batch(3, 2);
    let grads = |aux: bool| {
        let cfg = ModelConfig {
            use_aux_heads: aux,
            ..ModelConfig::default()
        };
        let m = build_model::<f32>(&cfg, 11).unwrap();
        m.reseed_dropblock(1);
        let out = m.forward(&Var::constant(x.clone())).unwrap();
        let loss = total_loss(&out.logits3, out.logits1.as_ref(), out.logits2.as_ref(), &y, 0.0, 0.0).unwrap();
        loss.backward().unwrap();
        parameters(&m)
            .into_iter()
            .filter(|(n, _)| !n.starts_with("head1") && !n.starts_with("head2"))
            .map(|(n, p)| (n, p.grad().unwrap()))
            .collect::<Vec<_>>()
    };
    let with = grads(true);
    let without = grads(false);
    assert_eq!(with.len(), without.len());
    for ((na, ga), (nb, gb)) in with.iter().zip(&without) {
        assert_eq!(na, nb);
        assert!(ga.bitwise_eq(gb), "{na}");
    }
}

/// Returns NaN inputs from `bad_epoch` on.
struct Poisoned {
    inner: TensorSource<f32>,
    bad_epoch: u64,
}

impl SampleSource<f32> for Poisoned {
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn label(&self, i: usize) -> usize {
        self.inner.label(i)
    }
    fn num_classes(&self) -> usize {
        4
    }
    fn sample(&self, i: usize, epoch: u64) -> Result<Tensor<f32>> {
        let t = self.inner.sample(i, epoch)?;
        Ok(if epoch >= self.bad_epoch { t.map(|_| f32::NAN) } else { t })
    }
}

fn tensor_source(n: usize, seed: u64) -> TensorSource<f32> {
    let (x, labels) = random_batch(seed, n);
    TensorSource {
        inputs: (0..n).map(|i| x.slice_batch(i, 1).unwrap().reshape(&[3, 224, 224]).unwrap()).collect(),
        labels,
        num_classes: 4,
    }
}

#[test]
fn non_finite_loss_rolls_back_to_last_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.fmpx");
    let m = build_model::<f32>(&ModelConfig::default(), 1).unwrap();
    let src = Poisoned {
        inner: tensor_source(2, 4),
        bad_epoch: 1,
    };
    let mut log = Vec::new();
    let err = {
        let mut t = Trainer::new(&m, TrainConfig { epochs: 3, ..small_cfg() })
            .unwrap()
            .with_log(&mut log)
            .with_checkpoint(&ckpt);
        t.fit::<_, Poisoned>(&src, None).unwrap_err()
    };
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert_eq!(String::from_utf8(log).unwrap().lines().count(), 1);
    let saved = load_checkpoint::<f32>(&ckpt, m.config()).unwrap();
    for ((n, a), (_, b)) in m.state().iter().zip(saved.state().iter()) {
        assert!(a.bitwise_eq(b), "{n}");
        assert!(a.all_finite(), "{n}");
    }
    assert_eq!(m.mode(), crate::model::Mode::Inference);
}

#[test]
fn fit_logs_every_epoch_and_ends_in_inference() {
    let m = build_model::<f32>(&ModelConfig::default(), 1).unwrap();
    let src = tensor_source(3, 8);
    let mut log = Vec::new();
    let report = {
        let mut t = Trainer::new(&m, TrainConfig { epochs: 2, ..small_cfg() }).unwrap().with_log(&mut log);
        t.fit(&src, Some(&src)).unwrap()
    };
    // 3 samples at batch 2 is one batch of 3
    assert_eq!(report.steps, 2);
    let lines: Vec<EpochRecord> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines, report.epochs);
    assert!(lines.iter().all(|r| r.train_loss.is_finite() && r.eval_accuracy.is_some()));
    assert_eq!(m.mode(), crate::model::Mode::Inference);

    let empty = TensorSource::<f32> {
        inputs: vec![],
        labels: vec![],
        num_classes: 4,
    };
    let mut t = Trainer::new(&m, small_cfg()).unwrap();
    assert!(matches!(t.fit::<_, TensorSource<f32>>(&empty, None), Err(Error::Dataset(_))));
}

#[test]
fn evaluate_reports_normalised_probabilities() {
    let m = build_model::<f32>(&ModelConfig::default(), 6).unwrap();
    let ds = solid_color_dataset(&FOUR_COLORS, 2, 40);
    let r = evaluate(&m, &ImageSource::eval(&ds), 4).unwrap();
    assert_eq!(r.probabilities.len(), 8);
    for p in &r.probabilities {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert_eq!(r.metrics.confusion.total(), 8);
    assert_eq!(r.metrics.confusion.classes, ds.classes);
}

#[test]
fn mean_std_against_hand_values() {
    let v = [94.0, 96.0, 92.5, 95.5, 93.0];
    let ms = MeanStd::from_values(&v).unwrap();
    // mean 94.2; squared deviations 0.04, 3.24, 2.89, 1.69, 1.44 sum to 9.3
    assert!((ms.mean - 94.2).abs() < 1e-12);
    assert!((ms.std - (9.3f64 / 5.0).sqrt()).abs() < 1e-12);
    let f = MeanStd::from_fractions(&[0.5, 0.7]).unwrap();
    assert!((f.mean - 60.0).abs() < 1e-12 && (f.std - 10.0).abs() < 1e-12);
    assert!(MeanStd::from_values(&[]).is_err());
}

#[test]
fn mean_std_format_round_trips() {
    let ms = MeanStd { mean: 94.26, std: 2.32 };
    assert_eq!(ms.to_string(), "94.26%(±2.32)");
    assert_eq!("94.26%(±2.32)".parse::<MeanStd>().unwrap(), ms);
    let odd = MeanStd { mean: 98.4049, std: 0.0 };
    let back: MeanStd = odd.to_string().parse().unwrap();
    assert!((back.mean - odd.mean).abs() <= 0.005 && back.std == 0.0);
    assert!("94.26 ± 2".parse::<MeanStd>().is_err());
}

#[test]
fn split_targets_scale_with_share() {
    assert_eq!(scaled_targets(&[2354, 500], &[107, 100], &[86, 100]), vec![1892, 500]);
    assert_eq!(scaled_targets(&[10], &[10], &[8]), vec![8]);
}

#[test]
fn five_fold_run_writes_five_checkpoints_and_reports() {
    let ds = solid_color_dataset(&FOUR_COLORS, 5, 36);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 16,
        seed: 2,
        ..TrainConfig::default()
    };
    let opts = CvOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..CvOptions::default()
    };
    let r = cross_validate(&ds, &ModelConfig::default(), &cfg, &opts).unwrap();
    assert_eq!(r.folds.len(), 5);
    for f in 1..=5 {
        for name in [format!("fold{f}.fmpx"), format!("fold{f}_metrics.json"), format!("fold{f}.jsonl")] {
            assert!(dir.path().join(&name).is_file(), "{name}");
        }
    }
    assert!(r.folds.iter().all(|f| f.test_size == 4 && f.train_size == 16));
    let accs: Vec<f64> = r.folds.iter().map(|f| f.eval.metrics.accuracy).collect();
    let want = MeanStd::from_fractions(&accs).unwrap();
    assert_eq!(r.accuracy, want);
}
