use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{
    adaptive_avgpool_1x1, channel_shuffle, concat_channels, maxpool2d, split_half, Activation,
    BatchNormLayer, ChannelShuffleSpec, Conv2dLayer, ConvSpec, LinearLayer, Module, Slot,
};
use crate::nn::join;
use crate::scalar::Scalar;

/// Convolution, batch norm and an optional activation.
#[derive(Debug)]
pub struct ConvBn<T: Scalar> {
    pub conv: Conv2dLayer<T>,
    pub bn: BatchNormLayer<T>,
    pub act: Option<Activation>,
}

impl<T: Scalar> ConvBn<T> {
    pub fn new(conv: Conv2dLayer<T>, out_ch: usize, act: Option<Activation>) -> Self {
        ConvBn {
            conv,
            bn: BatchNormLayer::new(out_ch),
            act,
        }
    }

    pub fn forward(&self, x: &Var<T>, training: bool) -> Result<Var<T>> {
        let y = self.bn.forward(&self.conv.forward(x)?, training)?;
        match self.act {
            Some(a) => a.apply(&y),
            None => Ok(y),
        }
    }

    /// Visits as `<conv_name>.*` and `<bn_name>.*`.
    pub(crate) fn visit_as<'a>(
        &'a self,
        prefix: &str,
        conv_name: &str,
        bn_name: &str,
        f: &mut dyn FnMut(&str, Slot<'a, T>),
    ) {
        self.conv.visit(&join(prefix, conv_name), f);
        self.bn.visit(&join(prefix, bn_name), f);
    }
}

/// `conv 3×3 s2 → BN → act → maxpool 3×3 s2 p1`.
#[derive(Debug)]
pub struct Stem<T: Scalar> {
    pub conv: ConvBn<T>,
}

impl<T: Scalar> Stem<T> {
    pub fn new<R: Rng + ?Sized>(out_ch: usize, act: Activation, rng: &mut R) -> Result<Self> {
        let conv = Conv2dLayer::new(3, out_ch, 3, ConvSpec::new(2, 1, 1), false, rng)?;
        Ok(Stem {
            conv: ConvBn::new(conv, out_ch, Some(act)),
        })
    }

    pub fn forward(&self, x: &Var<T>, training: bool) -> Result<Var<T>> {
        maxpool2d(&self.conv.forward(x, training)?, 3, 2, 1)
    }
}

impl<T: Scalar> Module<T> for Stem<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'a, T>)) {
        self.conv.visit_as(prefix, "conv", "bn", f);
    }
}

/// ShuffleNetV2 unit. Stride 2 runs both branches on the full input;
/// stride 1 passes the first channel half through untouched.
#[derive(Debug)]
pub struct InvertedResidual<T: Scalar> {
    pub stride: usize,
    /// `dw 3×3 → BN → pw → BN → act`, stride-2 units only.
    pub branch1: Option<(ConvBn<T>, ConvBn<T>)>,
    /// `pw → BN → act → dw 3×3 → BN → pw → BN → act`.
    pub branch2: [ConvBn<T>; 3],
}

impl<T: Scalar> InvertedResidual<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if out_ch % 2 != 0 {
            return Err(Error::InvalidConfig(format!("block width {out_ch} must be even")));
        }
        let half = out_ch / 2;
        if stride == 1 && in_ch != out_ch {
            return Err(Error::InvalidConfig(format!(
                "stride-1 block needs equal widths, got {in_ch}->{out_ch}"
            )));
        }
        let branch1 = if stride == 2 {
            Some((
                ConvBn::new(Conv2dLayer::depthwise(in_ch, 2, rng)?, in_ch, None),
                ConvBn::new(Conv2dLayer::pointwise(in_ch, half, rng)?, half, Some(act)),
            ))
        } else {
            None
        };
        let b2_in = if stride == 2 { in_ch } else { half };
        let branch2 = [
            ConvBn::new(Conv2dLayer::pointwise(b2_in, half, rng)?, half, Some(act)),
            ConvBn::new(Conv2dLayer::depthwise(half, stride, rng)?, half, None),
            ConvBn::new(Conv2dLayer::pointwise(half, half, rng)?, half, Some(act)),
        ];
        Ok(InvertedResidual {
            stride,
            branch1,
            branch2,
        })
    }

    fn run_branch2(&self, x: &Var<T>, training: bool) -> Result<Var<T>> {
        let mut y = x.clone();
        for unit in &self.branch2 {
            y = unit.forward(&y, training)?;
        }
        Ok(y)
    }

    pub fn forward(&self, x: &Var<T>, training: bool) -> Result<Var<T>> {
        let out = match &self.branch1 {
            Some((dw, pw)) => {
                let a = pw.forward(&dw.forward(x, training)?, training)?;
                concat_channels(&a, &self.run_branch2(x, training)?)?
            }
            None => {
                let (keep, work) = split_half(x)?;
                concat_channels(&keep, &self.run_branch2(&work, training)?)?
            }
        };
        channel_shuffle(&out, ChannelShuffleSpec { groups: 2 })
    }
}

impl<T: Scalar> Module<T> for InvertedResidual<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'a, T>)) {
        if let Some((dw, pw)) = &self.branch1 {
            let p = join(prefix, "branch1");
            dw.visit_as(&p, "conv1", "bn1", f);
            pw.visit_as(&p, "conv2", "bn2", f);
        }
        let p = join(prefix, "branch2");
        for (i, unit) in self.branch2.iter().enumerate() {
            unit.visit_as(&p, &format!("conv{}", i + 1), &format!("bn{}", i + 1), f);
        }
    }
}

/// A sequence of units; the first one downsamples.
#[derive(Debug)]
pub struct Stage<T: Scalar> {
    pub blocks: Vec<InvertedResidual<T>>,
}

impl<T: Scalar> Stage<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        depth: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidConfig("stage depth must be positive".into()));
        }
        let mut blocks = vec![InvertedResidual::new(in_ch, out_ch, 2, act, rng)?];
        for _ in 1..depth {
            blocks.push(InvertedResidual::new(out_ch, out_ch, 1, act, rng)?);
        }
        Ok(Stage { blocks })
    }

    pub fn forward(&self, x: &Var<T>, training: bool) -> Result<Var<T>> {
        let mut y = x.clone();
        for b in &self.blocks {
            y = b.forward(&y, training)?;
        }
        Ok(y)
    }
}

impl<T: Scalar> Module<T> for Stage<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'a, T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
    }
}

/// Global average pool followed by a single linear layer.
#[derive(Debug)]
pub struct ClsHead<T: Scalar> {
    pub fc: LinearLayer<T>,
}

impl<T: Scalar> ClsHead<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, classes: usize, rng: &mut R) -> Self {
        ClsHead {
            fc: LinearLayer::new(in_ch, classes, rng),
        }
    }

    /// Pooled `N×C` features, the input to the linear layer.
    pub fn pooled(&self, x: &Var<T>) -> Result<Var<T>> {
        adaptive_avgpool_1x1(x)?.flatten()
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        self.fc.forward(&self.pooled(x)?)
    }
}

impl<T: Scalar> Module<T> for ClsHead<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'a, T>)) {
        self.fc.visit(&join(prefix, "fc"), f);
    }
}
