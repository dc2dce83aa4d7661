//! Gradient-weighted class activation maps.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::data::{to_u8, RgbImage};
use crate::error::{Error, Result};
use crate::model::{FastMpoxModel, Taps};
use crate::nn::zero_grads;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Layer names accepted by [`grad_cam`].
pub const CAM_LAYERS: [&str; 6] = ["stem", "stage2", "stage3", "stage4", "stage5", "ablgfm"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamResult {
    /// Row-major `height×width`, values in [0, 1].
    pub heatmap: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub target_class: usize,
    pub target_layer: String,
    /// Channel weights: spatial means of the score gradient.
    pub weights: Vec<f64>,
    /// Rectified map at feature resolution, before upsampling.
    pub raw: Vec<f64>,
    pub feature_height: usize,
    pub feature_width: usize,
    /// The rectified map was identically zero; the heatmap is all zero.
    pub zero_map: bool,
}

/// `ReLU(Σ_k α_k A_k)` with `α_k` the mean of `∂score/∂A_k`, for one
/// `C×h×w` activation block and its gradient. Returns the map and `α`.
pub fn cam_map(acts: &[f64], grads: &[f64], c: usize, h: usize, w: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let hw = h * w;
    if acts.len() != c * hw || grads.len() != c * hw || hw == 0 {
        return Err(Error::arg(format!(
            "activation/gradient sizes {}/{} do not match {c}×{h}×{w}",
            acts.len(),
            grads.len()
        )));
    }
    let alpha: Vec<f64> = grads.chunks(hw).map(|g| g.iter().sum::<f64>() / hw as f64).collect();
    let mut map = vec![0.0; hw];
    for (a, plane) in alpha.iter().zip(acts.chunks(hw)) {
        for (m, v) in map.iter_mut().zip(plane) {
            *m += a * v;
        }
    }
    for m in map.iter_mut() {
        *m = m.max(0.0);
    }
    Ok((map, alpha))
}

/// Half-pixel-centre bilinear resize of a single-channel map.
pub fn upsample_bilinear(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_h * out_w);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = map[y0 * w + x0] * (1.0 - tx) + map[y0 * w + x1] * tx;
            let bot = map[y1 * w + x0] * (1.0 - tx) + map[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Min-max scaling to [0, 1]. Returns `true` when the map is all zero.
/// A constant positive map becomes all ones.
pub fn normalize_map(map: &mut [f64]) -> bool {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > 0.0) {
        map.fill(0.0);
        return true;
    }
    if hi == lo {
        map.fill(1.0);
    } else {
        for v in map.iter_mut() {
            *v = (*v - lo) / (hi - lo);
        }
    }
    false
}

fn pick_layer<'a, T: Scalar>(taps: &'a Taps<T>, layer: &str) -> Result<&'a Var<T>> {
    Ok(match layer {
        "stem" => &taps.stem,
        "stage2" => &taps.stage2,
        "stage3" => &taps.stage3,
        "stage4" => &taps.stage4,
        "stage5" => &taps.stage5,
        "ablgfm" => taps
            .fusion
            .as_ref()
            .ok_or_else(|| Error::arg("layer \"ablgfm\" requested but the model has no fusion block"))?,
        other => {
            return Err(Error::arg(format!(
                "unknown Grad-CAM layer {other:?} (expected one of {})",
                CAM_LAYERS.join(", ")
            )))
        }
    })
}

/// The map the final head reads: the fusion output, or stage 5 without it.
pub fn default_layer<T: Scalar>(model: &FastMpoxModel<T>) -> &'static str {
    if model.ablgfm.is_some() {
        "ablgfm"
    } else {
        "stage5"
    }
}

/// Grad-CAM of `class` for one `1×3×224×224` input, in inference mode.
pub fn grad_cam<T: Scalar>(
    model: &FastMpoxModel<T>,
    input: &Tensor<T>,
    class: usize,
    layer: Option<&str>,
) -> Result<CamResult> {
    grad_cam_scaled(model, input, class, layer, 1.0)
}

/// As [`grad_cam`], differentiating `scale · score` instead of the score.
pub fn grad_cam_scaled<T: Scalar>(
    model: &FastMpoxModel<T>,
    input: &Tensor<T>,
    class: usize,
    layer: Option<&str>,
    scale: f64,
) -> Result<CamResult> {
    let s = input.shape();
    if s.len() != 4 || s[0] != 1 {
        return Err(Error::shape("grad_cam input", s, &[1, 3, 224, 224]));
    }
    let k = model.config().num_classes;
    if class >= k {
        return Err(Error::arg(format!("target class {class} out of range for {k} classes")));
    }
    let layer = layer.unwrap_or(default_layer(model));
    let prev = model.mode();
    model.eval();
    let run = || -> Result<CamResult> {
        let out = model.forward(&Var::constant(input.clone()))?;
        let target = pick_layer(&out.taps, layer)?.clone();
        target.retain_grad();
        let onehot = Tensor::from_fn(&[1, k], |i| if i == class { T::of(scale) } else { T::zero() });
        out.logits3.dot_const(&onehot)?.backward()?;
        let grad = target.grad().unwrap_or_else(|| Tensor::zeros(target.shape()));
        let (_, c, h, w) = target.value().dims4()?;
        let acts: Vec<f64> = target.value().data().iter().map(|v| v.as_f64()).collect();
        let grads: Vec<f64> = grad.data().iter().map(|v| v.as_f64()).collect();
        let (raw, weights) = cam_map(&acts, &grads, c, h, w)?;
        let (oh, ow) = (s[2], s[3]);
        let mut heatmap = upsample_bilinear(&raw, h, w, oh, ow);
        let zero_map = normalize_map(&mut heatmap);
        Ok(CamResult {
            heatmap,
            height: oh,
            width: ow,
            target_class: class,
            target_layer: layer.to_string(),
            weights,
            raw,
            feature_height: h,
            feature_width: w,
            zero_map,
        })
    };
    let r = run();
    zero_grads(model);
    model.set_mode(prev);
    r
}

/// Blue, cyan, green, yellow, red at heat 0, 0.25, 0.5, 0.75, 1.
pub const COLORMAP: [[u8; 3]; 5] = [[0, 0, 255], [0, 255, 255], [0, 255, 0], [255, 255, 0], [255, 0, 0]];

/// Linear interpolation between the [`COLORMAP`] stops.
pub fn colormap(heat: f64) -> [f64; 3] {
    let t = heat.clamp(0.0, 1.0) * 4.0;
    let i = (t.floor() as usize).min(3);
    let f = t - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    [0, 1, 2].map(|c| a[c] as f64 * (1.0 - f) + b[c] as f64 * f)
}

/// The heatmap rendered through the colormap.
pub fn heatmap_image(cam: &CamResult) -> RgbImage {
    RgbImage::from_fn(cam.width, cam.height, |x, y| {
        colormap(cam.heatmap[y * cam.width + x]).map(to_u8)
    })
}

/// `alpha·colormap(heat) + (1 − alpha)·image`, rounded and clipped.
pub fn overlay_heatmap(image: &RgbImage, heatmap: &[f64], alpha: f64) -> Result<RgbImage> {
    if heatmap.len() != image.width() * image.height() {
        return Err(Error::arg(format!(
            "heatmap has {} values for a {}×{} image",
            heatmap.len(),
            image.width(),
            image.height()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::arg(format!("overlay alpha {alpha} outside [0, 1]")));
    }
    Ok(RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let px = image.pixel(x, y);
        let col = colormap(heatmap[y * image.width() + x]);
        [0, 1, 2].map(|c| to_u8(alpha * col[c] + (1.0 - alpha) * px[c] as f64))
    }))
}

/// One row per image row, comma separated.
pub fn heatmap_csv(cam: &CamResult) -> String {
    let mut s = String::with_capacity(cam.heatmap.len() * 10);
    for row in cam.heatmap.chunks(cam.width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}
