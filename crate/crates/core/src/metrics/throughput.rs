use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{no_grad, Var};
use crate::error::{Error, Result};
use crate::model::{FastMpoxModel, Mode};
use crate::nn::{intra_op_parallel, set_intra_op_parallel};
use crate::tensor::Tensor;

/// Wall-clock entry and exit of one inference, in seconds on a monotonic clock.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSample {
    pub t_in: f64,
    pub t_out: f64,
}

impl TimingSample {
    pub fn duration(&self) -> f64 {
        self.t_out - self.t_in
    }
}

/// `⌈(1/N) Σ 1/(t_out − t_in)⌉`.
pub fn average_fps(samples: &[TimingSample]) -> Result<u64> {
    if samples.is_empty() {
        return Err(Error::arg("average FPS needs at least one sample"));
    }
    let mut sum = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let d = s.duration();
        if !(d > 0.0) {
            return Err(Error::arg(format!("sample {i} has non-positive duration {d}")));
        }
        sum += 1.0 / d;
    }
    let mean = sum / samples.len() as f64;
    // Absorb rounding noise so an exact integer mean is not bumped up by one.
    Ok((mean * (1.0 - 4.0 * f64::EPSILON)).ceil() as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub fps: u64,
    pub n: usize,
    pub warmup: usize,
    pub parameters: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    /// Whether kernels were allowed to split work across threads.
    pub intra_op_parallel: bool,
    pub threads: usize,
    pub samples: Vec<TimingSample>,
}

/// Nearest-rank percentile of already sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times `n` single-image inference passes after `warmup` untimed ones,
/// cycling through `inputs` (each `1×3×224×224`).
pub fn bench_model(
    model: &FastMpoxModel<f32>,
    inputs: &[Tensor<f32>],
    n: usize,
    warmup: usize,
    parallel: bool,
) -> Result<BenchResult> {
    if n == 0 || inputs.is_empty() {
        return Err(Error::arg("bench needs N ≥ 1 and at least one input"));
    }
    if let Some(bad) = inputs.iter().find(|t| t.shape().first() != Some(&1)) {
        return Err(Error::shape("bench input batch", bad.shape(), &[1, 3, 224, 224]));
    }
    let prev_mode = model.mode();
    let prev_par = intra_op_parallel();
    model.set_mode(Mode::Inference);
    set_intra_op_parallel(parallel);
    let run = || -> Result<BenchResult> {
        let vars: Vec<Var<f32>> = inputs.iter().map(|t| Var::constant(t.clone())).collect();
        for i in 0..warmup {
            no_grad(|| model.forward(&vars[i % vars.len()]))?;
        }
        let origin = Instant::now();
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let t_in = origin.elapsed().as_secs_f64();
            let out = no_grad(|| model.forward(&vars[i % vars.len()]))?;
            std::hint::black_box(out.logits3.value().data());
            let t_out = origin.elapsed().as_secs_f64();
            samples.push(TimingSample { t_in, t_out });
        }
        let mut ms: Vec<f64> = samples.iter().map(|s| s.duration() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        Ok(BenchResult {
            fps: average_fps(&samples)?,
            n,
            warmup,
            parameters: model.count_parameters(),
            p50_ms: percentile(&ms, 50.0),
            p95_ms: percentile(&ms, 95.0),
            mean_ms: ms.iter().sum::<f64>() / n as f64,
            intra_op_parallel: parallel,
            threads: if parallel { rayon::current_num_threads() } else { 1 },
            samples,
        })
    };
    let result = run();
    set_intra_op_parallel(prev_par);
    model.set_mode(prev_mode);
    result
}
