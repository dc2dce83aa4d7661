//! The Fast-MpoxNet network and its ShuffleNetV2 baseline.

mod ablgfm;
mod blocks;
mod checkpoint;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablgfm::{ablgfm_forward, AblgfmBlock, AblgfmTrace};
pub use blocks::{ClsHead, ConvBn, InvertedResidual, Stage, Stem};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION, MAGIC};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{join, Activation, DropBlockLayer, Module, Slot};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Input resolution the network is defined for.
pub const INPUT_SIZE: usize = 224;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropBlockConfig {
    pub prob: f64,
    pub stage2_size: usize,
    pub stage5_size: usize,
}

impl Default for DropBlockConfig {
    fn default() -> Self {
        DropBlockConfig {
            prob: 0.1,
            stage2_size: 4,
            stage5_size: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub stem_channels: usize,
    pub stage_channels: [usize; 3],
    pub stage_depths: [usize; 3],
    pub stage5_channels: usize,
    pub use_ablgfm: bool,
    pub use_aux_heads: bool,
    pub use_dropblock: bool,
    pub activation: Activation,
    pub dropblock: DropBlockConfig,
    pub ablgfm_reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 4,
            stem_channels: 24,
            stage_channels: [48, 96, 192],
            stage_depths: [4, 8, 4],
            stage5_channels: 256,
            use_ablgfm: true,
            use_aux_heads: true,
            use_dropblock: true,
            activation: Activation::Gelu,
            dropblock: DropBlockConfig::default(),
            ablgfm_reduction: 4,
        }
    }
}

impl ModelConfig {
    /// Plain ShuffleNetV2 ×0.5: ReLU, 1024-wide last conv, no fusion,
    /// no auxiliary heads, no DropBlock.
    pub fn baseline() -> Self {
        ModelConfig {
            stage5_channels: 1024,
            use_ablgfm: false,
            use_aux_heads: false,
            use_dropblock: false,
            activation: Activation::Relu,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if self.stem_channels == 0 || self.stage5_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        for &c in &self.stage_channels {
            if c == 0 || c % 2 != 0 {
                return bad(format!("stage width {c} must be positive and even"));
            }
        }
        if self.stage_depths.iter().any(|&d| d == 0) {
            return bad("stage depths must be positive".into());
        }
        if self.use_ablgfm {
            let r = self.ablgfm_reduction;
            if r == 0 || self.stage5_channels % r != 0 {
                return bad(format!(
                    "ablgfm_reduction {r} must divide stage5_channels {}",
                    self.stage5_channels
                ));
            }
        }
        if self.use_dropblock {
            let d = &self.dropblock;
            if !(0.0..1.0).contains(&d.prob) {
                return bad(format!("dropblock prob {} outside [0, 1)", d.prob));
            }
            if d.stage2_size == 0 || d.stage5_size == 0 {
                return bad("dropblock sizes must be positive".into());
            }
        }
        Ok(())
    }

    /// Everything that determines the tensor set and the function computed
    /// at inference. DropBlock settings are training-only and left out.
    pub fn canonical_string(&self) -> String {
        let s = self.stage_channels;
        let d = self.stage_depths;
        format!(
            "fmpx;classes={};stem={};stages={},{},{};depths={},{},{};stage5={};ablgfm={};r={};aux={};act={}",
            self.num_classes,
            self.stem_channels,
            s[0], s[1], s[2],
            d[0], d[1], d[2],
            self.stage5_channels,
            u8::from(self.use_ablgfm),
            if self.use_ablgfm { self.ablgfm_reduction } else { 0 },
            u8::from(self.use_aux_heads),
            self.activation.name(),
        )
    }

    /// 64-bit FNV-1a of [`canonical_string`](Self::canonical_string).
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.canonical_string().as_bytes())
    }

    /// What the stage-5 (or fusion) feature map feeds the final head with.
    pub fn head_channels(&self) -> usize {
        self.stage5_channels
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent RNG stream per component, so adding or removing one part
/// never shifts the initial weights of another.
fn component_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Training,
    Inference,
}

/// Intermediate feature maps of one forward pass.
#[derive(Clone, Debug)]
pub struct Taps<T: Scalar> {
    pub stem: Var<T>,
    pub stage2: Var<T>,
    pub stage3: Var<T>,
    pub stage4: Var<T>,
    pub stage5: Var<T>,
    pub fusion: Option<Var<T>>,
}

impl<T: Scalar> Taps<T> {
    /// The map the final head reads.
    pub fn last(&self) -> &Var<T> {
        self.fusion.as_ref().unwrap_or(&self.stage5)
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T: Scalar> {
    pub logits3: Var<T>,
    pub logits1: Option<Var<T>>,
    pub logits2: Option<Var<T>>,
    pub taps: Taps<T>,
}

#[derive(Debug)]
pub struct FastMpoxModel<T: Scalar> {
    config: ModelConfig,
    seed: u64,
    training: AtomicBool,
    pub stem: Stem<T>,
    pub stages: [Stage<T>; 3],
    pub stage5: ConvBn<T>,
    pub ablgfm: Option<AblgfmBlock<T>>,
    pub head1: Option<ClsHead<T>>,
    pub head2: Option<ClsHead<T>>,
    pub head3: ClsHead<T>,
    pub dropblock_stage2: Option<DropBlockLayer>,
    /// Stage-5 DropBlock used when there is no fusion block to own it.
    pub dropblock_stage5: Option<DropBlockLayer>,
    rng: Mutex<ChaCha8Rng>,
}

/// Builds a training-mode model with weights drawn deterministically from `seed`.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<FastMpoxModel<T>> {
    config.validate()?;
    let act = config.activation;
    let stem = Stem::new(config.stem_channels, act, &mut component_rng(seed, "stem"))?;
    let mut in_ch = config.stem_channels;
    let mut stages = Vec::with_capacity(3);
    for (i, (&w, &d)) in config.stage_channels.iter().zip(&config.stage_depths).enumerate() {
        let mut rng = component_rng(seed, &format!("stage{}", i + 2));
        stages.push(Stage::new(in_ch, w, d, act, &mut rng)?);
        in_ch = w;
    }
    let stages: [Stage<T>; 3] = stages.try_into().map_err(|_| Error::InvalidConfig("stage count".into()))?;
    let c5 = config.stage5_channels;
    let stage5 = ConvBn::new(
        crate::nn::Conv2dLayer::pointwise(in_ch, c5, &mut component_rng(seed, "stage5"))?,
        c5,
        Some(act),
    );
    let db = |size: usize| -> Result<Option<DropBlockLayer>> {
        if config.use_dropblock {
            Ok(Some(DropBlockLayer::new(size, config.dropblock.prob)?))
        } else {
            Ok(None)
        }
    };
    let ablgfm = if config.use_ablgfm {
        Some(AblgfmBlock::new(
            config.stage_channels[0],
            c5,
            config.ablgfm_reduction,
            4,
            act,
            db(config.dropblock.stage5_size)?,
            &mut component_rng(seed, "ablgfm"),
        )?)
    } else {
        None
    };
    let k = config.num_classes;
    let (head1, head2) = if config.use_aux_heads {
        (
            Some(ClsHead::new(config.stage_channels[0], k, &mut component_rng(seed, "head1"))),
            Some(ClsHead::new(config.stage_channels[1], k, &mut component_rng(seed, "head2"))),
        )
    } else {
        (None, None)
    };
    let head3 = ClsHead::new(c5, k, &mut component_rng(seed, "head3"));
    Ok(FastMpoxModel {
        config: config.clone(),
        seed,
        training: AtomicBool::new(true),
        stem,
        stages,
        stage5,
        dropblock_stage2: db(config.dropblock.stage2_size)?,
        dropblock_stage5: if config.use_ablgfm { None } else { db(config.dropblock.stage5_size)? },
        ablgfm,
        head1,
        head2,
        head3,
        rng: Mutex::new(component_rng(seed, "dropblock")),
    })
}

impl<T: Scalar> FastMpoxModel<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> Mode {
        if self.training.load(Ordering::Relaxed) {
            Mode::Training
        } else {
            Mode::Inference
        }
    }

    pub fn set_mode(&self, mode: Mode) {
        self.training.store(mode == Mode::Training, Ordering::Relaxed);
    }

    pub fn train(&self) {
        self.set_mode(Mode::Training);
    }

    pub fn eval(&self) {
        self.set_mode(Mode::Inference);
    }

    /// Reseeds the DropBlock mask stream.
    pub fn reseed_dropblock(&self, seed: u64) {
        *self.rng.lock().expect("rng lock") = component_rng(seed, "dropblock");
    }

    /// Drops the auxiliary heads for deployment.
    pub fn discard_aux_heads(&mut self) {
        self.head1 = None;
        self.head2 = None;
        self.config.use_aux_heads = false;
    }

    pub fn count_parameters(&self) -> usize {
        crate::nn::count_parameters(self)
    }

    /// Forward pass in the current mode. Training returns every head's
    /// logits; inference evaluates only the final head.
    pub fn forward(&self, x: &Var<T>) -> Result<ForwardOutput<T>> {
        let training = self.mode() == Mode::Training;
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 || s[2] != INPUT_SIZE || s[3] != INPUT_SIZE {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("expected N×3×{INPUT_SIZE}×{INPUT_SIZE} input"),
            });
        }
        let mut rng = self.rng.lock().expect("rng lock");
        let stem = self.stem.forward(x, training)?;
        let mut stage2 = self.stages[0].forward(&stem, training)?;
        if let Some(db) = &self.dropblock_stage2 {
            stage2 = db.forward(&stage2, training, &mut *rng)?;
        }
        let stage3 = self.stages[1].forward(&stage2, training)?;
        let stage4 = self.stages[2].forward(&stage3, training)?;
        let stage5 = self.stage5.forward(&stage4, training)?;
        let fusion = match &self.ablgfm {
            Some(block) => Some(block.forward(&stage2, &stage5, training, &mut *rng)?),
            None => None,
        };
        let head_in = match (&fusion, &self.dropblock_stage5) {
            (Some(f), _) => f.clone(),
            (None, Some(db)) => db.forward(&stage5, training, &mut *rng)?,
            (None, None) => stage5.clone(),
        };
        let logits3 = self.head3.forward(&head_in)?;
        let (logits1, logits2) = if training {
            (
                self.head1.as_ref().map(|h| h.forward(&stage2)).transpose()?,
                self.head2.as_ref().map(|h| h.forward(&stage3)).transpose()?,
            )
        } else {
            (None, None)
        };
        Ok(ForwardOutput {
            logits3,
            logits1,
            logits2,
            taps: Taps {
                stem,
                stage2,
                stage3,
                stage4,
                stage5,
                fusion,
            },
        })
    }

    /// Inference-mode logits for a constant input, without recording a graph.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let prev = self.mode();
        self.eval();
        let out = crate::autodiff::no_grad(|| self.forward(&Var::constant(x.clone())));
        self.set_mode(prev);
        Ok(out?.logits3.value().clone())
    }

    /// Every parameter and buffer by dotted name, in visit order.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, slot| {
            let t = match slot {
                Slot::Param(p) => p.value(),
                Slot::Buffer(b) => b.get(),
            };
            out.push((name.to_string(), t));
        });
        out
    }

    /// Overwrites tensors by name. Names or shapes the model does not have
    /// are rejected; tensors absent from `state` keep their values.
    pub fn load_state<U: Scalar>(&self, state: &[(String, Tensor<U>)]) -> Result<()> {
        let map: std::collections::HashMap<&str, &Tensor<U>> =
            state.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut known = std::collections::HashSet::new();
        let mut err = None;
        self.visit("", &mut |name, slot| {
            known.insert(name.to_string());
            let Some(t) = map.get(name) else { return };
            let shape = match &slot {
                Slot::Param(p) => p.shape(),
                Slot::Buffer(b) => b.shape(),
            };
            if t.shape() != shape.as_slice() {
                err.get_or_insert(Error::shape("load_state", t.shape(), &shape));
                return;
            }
            match slot {
                Slot::Param(p) => p.set(t.cast()),
                Slot::Buffer(b) => b.set(t.cast()),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some((n, _)) = state.iter().find(|(n, _)| !known.contains(n)) {
            return Err(Error::arg(format!("unknown tensor {n:?}")));
        }
        Ok(())
    }

    /// Same network with every tensor converted to `U`.
    pub fn cast<U: Scalar>(&self) -> FastMpoxModel<U> {
        let m = build_model::<U>(&self.config, self.seed).expect("config already validated");
        m.load_state(&self.state()).expect("identical topology");
        m.set_mode(self.mode());
        m
    }
}

impl<T: Scalar> Module<T> for FastMpoxModel<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'a, T>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&join(prefix, &format!("stage{}", i + 2)), f);
        }
        self.stage5.visit_as(&join(prefix, "stage5"), "conv", "bn", f);
        if let Some(a) = &self.ablgfm {
            a.visit(&join(prefix, "ablgfm"), f);
        }
        if let Some(h) = &self.head1 {
            h.visit(&join(prefix, "head1"), f);
        }
        if let Some(h) = &self.head2 {
            h.visit(&join(prefix, "head2"), f);
        }
        self.head3.visit(&join(prefix, "head3"), f);
    }
}
