use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{to_u8, RgbImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
/// Smallest side accepted anywhere in the pipeline.
pub const MIN_SIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocessMode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub size: usize,
    pub resize: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub scale: (f64, f64),
    pub ratio: (f64, f64),
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor {
            size: 224,
            resize: 256,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
            scale: (0.08, 1.0),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
        }
    }
}

impl Preprocessor {
    /// Random-resized crop plus horizontal flip, or the deterministic
    /// resize / centre crop, followed by normalisation. Returns `3×S×S`.
    pub fn apply<R: Rng + ?Sized>(&self, img: &RgbImage, mode: PreprocessMode, rng: &mut R) -> Result<Tensor<f32>> {
        if img.width() < MIN_SIDE || img.height() < MIN_SIDE {
            return Err(Error::arg(format!(
                "image {}×{} is smaller than {MIN_SIDE}×{MIN_SIDE}",
                img.width(),
                img.height()
            )));
        }
        let resized = match mode {
            PreprocessMode::Train => {
                let (x, y, w, h) = self.random_crop_box(img.width(), img.height(), rng);
                let mut out = img.crop(x, y, w, h)?.resize(self.size, self.size)?;
                if rng.random_bool(0.5) {
                    out = out.flip_horizontal();
                }
                out
            }
            PreprocessMode::Eval => self.center(img)?,
        };
        Ok(self.normalize(&resized))
    }

    /// Shorter side to `resize`, then the central `size×size` window.
    pub fn center(&self, img: &RgbImage) -> Result<RgbImage> {
        let (w, h) = (img.width(), img.height());
        let (nw, nh) = if w <= h {
            (self.resize, ((h as f64 * self.resize as f64 / w as f64).round() as usize).max(self.resize))
        } else {
            (((w as f64 * self.resize as f64 / h as f64).round() as usize).max(self.resize), self.resize)
        };
        let r = img.resize(nw, nh)?;
        r.crop((nw - self.size) / 2, (nh - self.size) / 2, self.size, self.size)
    }

    /// Crop window with area fraction in `scale` and log-uniform aspect in
    /// `ratio`; after ten misses falls back to the largest centred window
    /// with a clamped aspect.
    pub fn random_crop_box<R: Rng + ?Sized>(&self, w: usize, h: usize, rng: &mut R) -> (usize, usize, usize, usize) {
        let area = (w * h) as f64;
        let (lr0, lr1) = (self.ratio.0.ln(), self.ratio.1.ln());
        for _ in 0..10 {
            let target = area * rng.random_range(self.scale.0..=self.scale.1);
            let ar = rng.random_range(lr0..=lr1).exp();
            let cw = (target * ar).sqrt().round() as usize;
            let ch = (target / ar).sqrt().round() as usize;
            if cw > 0 && ch > 0 && cw <= w && ch <= h {
                let x = rng.random_range(0..=w - cw);
                let y = rng.random_range(0..=h - ch);
                return (x, y, cw, ch);
            }
        }
        let in_ratio = w as f64 / h as f64;
        let (cw, ch) = if in_ratio < self.ratio.0 {
            (w, ((w as f64 / self.ratio.0).round() as usize).min(h))
        } else if in_ratio > self.ratio.1 {
            (((h as f64 * self.ratio.1).round() as usize).min(w), h)
        } else {
            (w, h)
        };
        ((w - cw) / 2, (h - ch) / 2, cw, ch)
    }

    /// `(v/255 − mean)/std` per channel into CHW layout.
    pub fn normalize(&self, img: &RgbImage) -> Tensor<f32> {
        let (w, h) = (img.width(), img.height());
        let mut data = vec![0f32; 3 * w * h];
        for (i, px) in img.data().chunks(3).enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = ((px[c] as f64 / 255.0 - self.mean[c]) / self.std[c]) as f32;
            }
        }
        Tensor::new(&[3, h, w], data).expect("shape matches data")
    }

    /// Inverse of [`normalize`](Self::normalize), rounded to 8 bits.
    pub fn denormalize(&self, t: &Tensor<f32>) -> Result<RgbImage> {
        let &[3, h, w] = t.shape() else {
            return Err(Error::InvalidShape {
                shape: t.shape().to_vec(),
                reason: "expected 3×H×W".into(),
            });
        };
        let d = t.data();
        Ok(RgbImage::from_fn(w, h, |x, y| {
            let i = y * w + x;
            [0, 1, 2].map(|c| to_u8((d[c * w * h + i] as f64 * self.std[c] + self.mean[c]) * 255.0))
        }))
    }
}

/// [`Preprocessor::apply`] with the default settings.
pub fn preprocess<R: Rng + ?Sized>(img: &RgbImage, mode: PreprocessMode, rng: &mut R) -> Result<Tensor<f32>> {
    Preprocessor::default().apply(img, mode, rng)
}
