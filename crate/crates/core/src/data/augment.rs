//! The twelve augmentation strategies and the 6-of-12 random composition.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::{to_u8, RgbImage};
use super::{Dataset, LabeledImage};
use crate::error::{Error, Result};

/// How many strategies each augmented image receives.
pub const STRATEGIES_PER_IMAGE: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugmentStrategy {
    Fliplr,
    Flipud,
    Crop,
    GaussianBlur,
    LinearContrast,
    AdditiveGaussianNoise,
    AddToSaturation,
    MultiplyBrightness,
    AffineScale,
    AffineTranslate,
    AffineShear,
    AffineRotate,
}

impl AugmentStrategy {
    pub const ALL: [AugmentStrategy; 12] = [
        AugmentStrategy::Fliplr,
        AugmentStrategy::Flipud,
        AugmentStrategy::Crop,
        AugmentStrategy::GaussianBlur,
        AugmentStrategy::LinearContrast,
        AugmentStrategy::AdditiveGaussianNoise,
        AugmentStrategy::AddToSaturation,
        AugmentStrategy::MultiplyBrightness,
        AugmentStrategy::AffineScale,
        AugmentStrategy::AffineTranslate,
        AugmentStrategy::AffineShear,
        AugmentStrategy::AffineRotate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentStrategy::Fliplr => "Fliplr",
            AugmentStrategy::Flipud => "Flipud",
            AugmentStrategy::Crop => "Crop",
            AugmentStrategy::GaussianBlur => "GaussianBlur",
            AugmentStrategy::LinearContrast => "LinearContrast",
            AugmentStrategy::AdditiveGaussianNoise => "AdditiveGaussianNoise",
            AugmentStrategy::AddToSaturation => "AddToSaturation",
            AugmentStrategy::MultiplyBrightness => "MultiplyBrightness",
            AugmentStrategy::AffineScale => "AffineScale",
            AugmentStrategy::AffineTranslate => "AffineTranslate",
            AugmentStrategy::AffineShear => "AffineShear",
            AugmentStrategy::AffineRotate => "AffineRotate",
        }
    }

    /// Draws this strategy's parameters from its range.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> AugmentStep {
        match self {
            AugmentStrategy::Fliplr => AugmentStep::Fliplr { flip: rng.random_bool(0.5) },
            AugmentStrategy::Flipud => AugmentStep::Flipud { flip: rng.random_bool(0.5) },
            AugmentStrategy::Crop => AugmentStep::Crop {
                top: rng.random_range(0.0..=0.2),
                right: rng.random_range(0.0..=0.2),
                bottom: rng.random_range(0.0..=0.2),
                left: rng.random_range(0.0..=0.2),
            },
            AugmentStrategy::GaussianBlur => AugmentStep::GaussianBlur {
                sigma: rng.random_range(0.0..=0.5),
            },
            AugmentStrategy::LinearContrast => AugmentStep::LinearContrast {
                alpha: rng.random_range(0.5..=1.5),
            },
            AugmentStrategy::AdditiveGaussianNoise => AugmentStep::AdditiveGaussianNoise {
                scale: rng.random_range(0.0..=0.05 * 255.0),
                seed: rng.random(),
            },
            AugmentStrategy::AddToSaturation => AugmentStep::AddToSaturation {
                value: rng.random_range(-50..=50),
            },
            AugmentStrategy::MultiplyBrightness => AugmentStep::MultiplyBrightness {
                factor: rng.random_range(0.5..=1.5),
            },
            AugmentStrategy::AffineScale => AugmentStep::AffineScale {
                x: rng.random_range(0.5..=1.5),
                y: rng.random_range(0.5..=1.5),
            },
            AugmentStrategy::AffineTranslate => AugmentStep::AffineTranslate {
                x: rng.random_range(-0.2..=0.2),
                y: rng.random_range(-0.2..=0.2),
            },
            AugmentStrategy::AffineShear => AugmentStep::AffineShear {
                degrees: rng.random_range(-16.0..=16.0),
            },
            AugmentStrategy::AffineRotate => AugmentStep::AffineRotate {
                degrees: rng.random_range(-45.0..=45.0),
            },
        }
    }
}

/// One strategy with its sampled parameters; applying it is deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy")]
pub enum AugmentStep {
    Fliplr { flip: bool },
    Flipud { flip: bool },
    /// Fraction removed from each side before resizing back.
    Crop { top: f64, right: f64, bottom: f64, left: f64 },
    GaussianBlur { sigma: f64 },
    LinearContrast { alpha: f64 },
    /// Noise std in pixel units; `seed` drives the per-pixel draws.
    AdditiveGaussianNoise { scale: f64, seed: u64 },
    AddToSaturation { value: i32 },
    MultiplyBrightness { factor: f64 },
    AffineScale { x: f64, y: f64 },
    /// Shift as a fraction of width / height.
    AffineTranslate { x: f64, y: f64 },
    AffineShear { degrees: f64 },
    AffineRotate { degrees: f64 },
}

impl AugmentStep {
    pub fn strategy(&self) -> AugmentStrategy {
        match self {
            AugmentStep::Fliplr { .. } => AugmentStrategy::Fliplr,
            AugmentStep::Flipud { .. } => AugmentStrategy::Flipud,
            AugmentStep::Crop { .. } => AugmentStrategy::Crop,
            AugmentStep::GaussianBlur { .. } => AugmentStrategy::GaussianBlur,
            AugmentStep::LinearContrast { .. } => AugmentStrategy::LinearContrast,
            AugmentStep::AdditiveGaussianNoise { .. } => AugmentStrategy::AdditiveGaussianNoise,
            AugmentStep::AddToSaturation { .. } => AugmentStrategy::AddToSaturation,
            AugmentStep::MultiplyBrightness { .. } => AugmentStrategy::MultiplyBrightness,
            AugmentStep::AffineScale { .. } => AugmentStrategy::AffineScale,
            AugmentStep::AffineTranslate { .. } => AugmentStrategy::AffineTranslate,
            AugmentStep::AffineShear { .. } => AugmentStrategy::AffineShear,
            AugmentStep::AffineRotate { .. } => AugmentStrategy::AffineRotate,
        }
    }

    pub fn apply(&self, img: &RgbImage) -> RgbImage {
        match *self {
            AugmentStep::Fliplr { flip } => {
                if flip {
                    img.flip_horizontal()
                } else {
                    img.clone()
                }
            }
            AugmentStep::Flipud { flip } => {
                if flip {
                    img.flip_vertical()
                } else {
                    img.clone()
                }
            }
            AugmentStep::Crop { top, right, bottom, left } => crop_sides(img, top, right, bottom, left),
            AugmentStep::GaussianBlur { sigma } => gaussian_blur(img, sigma),
            AugmentStep::LinearContrast { alpha } => map_values(img, |v| linear_contrast(v, alpha)),
            AugmentStep::AdditiveGaussianNoise { scale, seed } => additive_noise(img, scale, seed),
            AugmentStep::AddToSaturation { value } => map_hsv(img, |h, s, v| {
                (h, (s + value as f64 / 255.0).clamp(0.0, 1.0), v)
            }),
            AugmentStep::MultiplyBrightness { factor } => {
                map_hsv(img, |h, s, v| (h, s, (v * factor).clamp(0.0, 1.0)))
            }
            AugmentStep::AffineScale { x, y } => affine(img, [[x, 0.0], [0.0, y]], [0.0, 0.0]),
            AugmentStep::AffineTranslate { x, y } => affine(
                img,
                [[1.0, 0.0], [0.0, 1.0]],
                [x * img.width() as f64, y * img.height() as f64],
            ),
            AugmentStep::AffineShear { degrees } => {
                affine(img, [[1.0, -degrees.to_radians().tan()], [0.0, 1.0]], [0.0, 0.0])
            }
            AugmentStep::AffineRotate { degrees } => {
                let (s, c) = degrees.to_radians().sin_cos();
                affine(img, [[c, -s], [s, c]], [0.0, 0.0])
            }
        }
    }
}

/// `127 + α(v − 127)`, rounded and clipped.
pub fn linear_contrast(v: u8, alpha: f64) -> u8 {
    to_u8(127.0 + alpha * (v as f64 - 127.0))
}

fn map_values(img: &RgbImage, f: impl Fn(u8) -> u8) -> RgbImage {
    let mut out = img.clone();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v));
    out
}

fn crop_sides(img: &RgbImage, top: f64, right: f64, bottom: f64, left: f64) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let px = |frac: f64, dim: usize| (frac * dim as f64).round() as usize;
    let (l, r) = (px(left, w), px(right, w));
    let (t, b) = (px(top, h), px(bottom, h));
    let cw = w.saturating_sub(l + r).max(1);
    let ch = h.saturating_sub(t + b).max(1);
    img.crop(l.min(w - cw), t.min(h - ch), cw, ch)
        .and_then(|c| c.resize(w, h))
        .expect("crop stays inside the image")
}

fn gaussian_blur(img: &RgbImage, sigma: f64) -> RgbImage {
    if sigma < 1e-3 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let (w, h) = (img.width() as i64, img.height() as i64);
    let src = img.data();
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let xx = (x + k as i64 - radius).clamp(0, w - 1);
                    acc += kv * src[((y * w + xx) * 3 + c) as usize] as f64;
                }
                tmp[((y * w + x) * 3 + c) as usize] = acc;
            }
        }
    }
    let mut out = img.clone();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let yy = (y + k as i64 - radius).clamp(0, h - 1);
                    acc += kv * tmp[((yy * w + x) * 3 + c) as usize];
                }
                dst[((y * w + x) * 3 + c) as usize] = to_u8(acc);
            }
        }
    }
    out
}

/// One noise draw per pixel, shared by its three channels.
fn additive_noise(img: &RgbImage, scale: f64, seed: u64) -> RgbImage {
    if scale <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, scale).expect("positive finite scale");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for px in out.data_mut().chunks_mut(3) {
        let n = normal.sample(&mut rng);
        for v in px {
            *v = to_u8(*v as f64 + n);
        }
    }
    out
}

/// RGB in `[0,1]` to HSV with hue in `[0,6)`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

fn map_hsv(img: &RgbImage, f: impl Fn(f64, f64, f64) -> (f64, f64, f64)) -> RgbImage {
    let mut out = img.clone();
    for px in out.data_mut().chunks_mut(3) {
        let (h, s, v) = rgb_to_hsv(px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0);
        let (h, s, v) = f(h, s, v);
        let (r, g, b) = hsv_to_rgb(h, s, v);
        px[0] = to_u8(r * 255.0);
        px[1] = to_u8(g * 255.0);
        px[2] = to_u8(b * 255.0);
    }
    out
}

/// Maps output pixel `p` to source `A⁻¹(p − c − t) + c` about the image
/// centre `c`; uncovered pixels are black.
fn affine(img: &RgbImage, a: [[f64; 2]; 2], t: [f64; 2]) -> RgbImage {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let (cx, cy) = (img.width() as f64 / 2.0, img.height() as f64 / 2.0);
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let dx = x as f64 + 0.5 - cx - t[0];
        let dy = y as f64 + 0.5 - cy - t[1];
        let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
        let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
        img.sample_black(sx, sy).map(to_u8)
    })
}

/// Picks six distinct strategies in random order and samples their
/// parameters.
pub fn sample_pipeline<R: Rng + ?Sized>(rng: &mut R) -> Vec<AugmentStep> {
    let mut kinds = AugmentStrategy::ALL;
    kinds.shuffle(rng);
    kinds[..STRATEGIES_PER_IMAGE].iter().map(|k| k.sample(rng)).collect()
}

pub fn apply_pipeline(img: &RgbImage, steps: &[AugmentStep]) -> RgbImage {
    steps.iter().fold(img.clone(), |acc, s| s.apply(&acc))
}

/// Applies a random 6-of-12 composition; returns the new image and the
/// ordered steps that produced it.
pub fn augment_image<R: Rng + ?Sized>(img: &LabeledImage, rng: &mut R) -> (LabeledImage, Vec<AugmentStep>) {
    let steps = sample_pipeline(rng);
    let pixels = apply_pipeline(&img.pixels, &steps);
    (
        LabeledImage {
            pixels,
            ..img.clone()
        },
        steps,
    )
}

/// How one generated image came to be; replayable via
/// `apply_pipeline(source, &params)` or by re-running
/// [`augment_image`] with `ChaCha8Rng::seed_from_u64(seed)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub id: u64,
    pub source_id: u64,
    pub label: usize,
    pub seed: u64,
    pub strategies: Vec<String>,
    pub params: Vec<AugmentStep>,
}

/// Per-image seed from the run seed and the (source, copy) pair, so the
/// result does not depend on generation order or worker count.
pub fn derive_seed(seed: u64, source_id: u64, copy: u64) -> u64 {
    // splitmix64 finaliser over a simple combination
    let mut z = seed ^ source_id.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ copy.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One planned synthetic image: which original it copies and its seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentJob {
    pub id: u64,
    pub source_index: usize,
    pub copy: u64,
    pub seed: u64,
}

/// Plans the generated images needed to bring each class to its target,
/// cycling round-robin over the class's originals in id order.
pub fn plan_expansion(dataset: &Dataset, targets: &[usize], seed: u64) -> Result<Vec<AugmentJob>> {
    let counts = dataset.class_counts();
    if targets.len() != counts.len() {
        return Err(Error::arg(format!(
            "{} targets for {} classes",
            targets.len(),
            counts.len()
        )));
    }
    let mut next_id = dataset.images.iter().map(|i| i.id + 1).max().unwrap_or(0);
    let mut jobs = Vec::new();
    for (class, (&have, &want)) in counts.iter().zip(targets).enumerate() {
        if want < have {
            return Err(Error::arg(format!(
                "target {want} for class {:?} is below its {have} originals",
                dataset.classes[class]
            )));
        }
        let mut members: Vec<usize> = (0..dataset.images.len())
            .filter(|&i| dataset.images[i].label == class)
            .collect();
        members.sort_by_key(|&i| dataset.images[i].id);
        for j in 0..want - have {
            let source_index = members[j % have];
            let copy = (j / have) as u64;
            jobs.push(AugmentJob {
                id: next_id,
                source_index,
                copy,
                seed: derive_seed(seed, dataset.images[source_index].id, copy),
            });
            next_id += 1;
        }
    }
    Ok(jobs)
}

/// Runs one planned job.
pub fn run_job(dataset: &Dataset, job: &AugmentJob) -> (LabeledImage, Provenance) {
    let src = &dataset.images[job.source_index];
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let (mut img, steps) = augment_image(src, &mut rng);
    img.id = job.id;
    img.source_path = format!("{}#aug{}", src.source_path, job.copy);
    let prov = Provenance {
        id: job.id,
        source_id: src.id,
        label: src.label,
        seed: job.seed,
        strategies: steps.iter().map(|s| s.strategy().name().to_string()).collect(),
        params: steps,
    };
    (img, prov)
}

#[derive(Clone, Debug)]
pub struct ExpandedDataset {
    pub dataset: Dataset,
    pub provenance: Vec<Provenance>,
}

/// Originals plus generated copies until every class reaches its target.
pub fn expand_dataset(dataset: &Dataset, targets: &[usize], seed: u64) -> Result<ExpandedDataset> {
    let jobs = plan_expansion(dataset, targets, seed)?;
    let mut out = dataset.clone();
    let mut provenance = Vec::with_capacity(jobs.len());
    for job in &jobs {
        let (img, prov) = run_job(dataset, job);
        out.images.push(img);
        provenance.push(prov);
    }
    Ok(ExpandedDataset {
        dataset: out,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_image() -> RgbImage {
        RgbImage::from_fn(40, 36, |x, y| [(x * 6) as u8, (y * 7) as u8, ((x + y) * 3) as u8])
    }

    #[test]
    fn contrast_fixed_points() {
        for a in [0.5, 0.77, 1.0, 1.5] {
            assert_eq!(linear_contrast(127, a), 127);
        }
        for v in 0..=255u8 {
            assert_eq!(linear_contrast(v, 1.0), v);
        }
        assert_eq!(linear_contrast(255, 1.5), 255);
        assert_eq!(linear_contrast(0, 0.5), 64);
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.0, 0.0, 0.0), (1.0, 0.5, 0.25), (0.2, 0.9, 0.4), (0.3, 0.3, 0.8), (1.0, 0.0, 1.0)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn neutral_parameters_are_identity() {
        let img = sample_image();
        let neutral = [
            AugmentStep::Fliplr { flip: false },
            AugmentStep::Crop { top: 0.0, right: 0.0, bottom: 0.0, left: 0.0 },
            AugmentStep::GaussianBlur { sigma: 0.0 },
            AugmentStep::LinearContrast { alpha: 1.0 },
            AugmentStep::AdditiveGaussianNoise { scale: 0.0, seed: 3 },
            AugmentStep::AddToSaturation { value: 0 },
            AugmentStep::MultiplyBrightness { factor: 1.0 },
            AugmentStep::AffineScale { x: 1.0, y: 1.0 },
            AugmentStep::AffineTranslate { x: 0.0, y: 0.0 },
            AugmentStep::AffineShear { degrees: 0.0 },
            AugmentStep::AffineRotate { degrees: 0.0 },
        ];
        for step in &neutral {
            assert_eq!(step.apply(&img), img, "{step:?}");
        }
    }

    #[test]
    fn translate_exposes_black() {
        let img = RgbImage::filled(40, 40, [200, 200, 200]);
        let out = AugmentStep::AffineTranslate { x: 0.2, y: 0.0 }.apply(&img);
        assert_eq!(out.pixel(0, 20), [0, 0, 0]);
        assert_eq!(out.pixel(39, 20), [200, 200, 200]);
    }

    #[test]
    fn pipeline_has_six_distinct_strategies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let steps = sample_pipeline(&mut rng);
            let mut kinds: Vec<_> = steps.iter().map(|s| s.strategy().name()).collect();
            kinds.sort();
            kinds.dedup();
            assert_eq!(kinds.len(), STRATEGIES_PER_IMAGE);
        }
    }

    #[test]
    fn sampled_parameters_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            for k in AugmentStrategy::ALL {
                let ok = match k.sample(&mut rng) {
                    AugmentStep::Crop { top, right, bottom, left } => {
                        [top, right, bottom, left].iter().all(|f| (0.0..=0.2).contains(f))
                    }
                    AugmentStep::GaussianBlur { sigma } => (0.0..=0.5).contains(&sigma),
                    AugmentStep::LinearContrast { alpha } => (0.5..=1.5).contains(&alpha),
                    AugmentStep::AdditiveGaussianNoise { scale, .. } => (0.0..=12.75).contains(&scale),
                    AugmentStep::AddToSaturation { value } => (-50..=50).contains(&value),
                    AugmentStep::MultiplyBrightness { factor } => (0.5..=1.5).contains(&factor),
                    AugmentStep::AffineScale { x, y } => (0.5..=1.5).contains(&x) && (0.5..=1.5).contains(&y),
                    AugmentStep::AffineTranslate { x, y } => {
                        (-0.2..=0.2).contains(&x) && (-0.2..=0.2).contains(&y)
                    }
                    AugmentStep::AffineShear { degrees } => (-16.0..=16.0).contains(&degrees),
                    AugmentStep::AffineRotate { degrees } => (-45.0..=45.0).contains(&degrees),
                    AugmentStep::Fliplr { .. } | AugmentStep::Flipud { .. } => true,
                };
                assert!(ok);
            }
        }
    }

    #[test]
    fn steps_serialize_with_strategy_tag() {
        let s = serde_json::to_string(&AugmentStep::LinearContrast { alpha: 1.25 }).unwrap();
        assert_eq!(s, r#"{"strategy":"LinearContrast","alpha":1.25}"#);
        let back: AugmentStep = serde_json::from_str(&s).unwrap();
        assert_eq!(back, AugmentStep::LinearContrast { alpha: 1.25 });
    }
}
