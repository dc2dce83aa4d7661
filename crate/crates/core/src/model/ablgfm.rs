use rand::Rng;

use super::blocks::ConvBn;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{adaptive_avgpool_1x1, avgpool2d, join, Activation, Conv2dLayer, DropBlockLayer, Module, Slot};
use crate::scalar::Scalar;

/// Gated fusion of a shallow map (`flow`) into a deep one (`fhigh`).
#[derive(Debug)]
pub struct AblgfmBlock<T: Scalar> {
    pub flow_proj: ConvBn<T>,
    pub pool: usize,
    pub global: [ConvBn<T>; 2],
    pub local: [ConvBn<T>; 2],
    pub dropblock_high: Option<DropBlockLayer>,
}

/// Every named intermediate of one fusion pass.
#[derive(Clone, Debug)]
pub struct AblgfmTrace<T: Scalar> {
    pub low: Var<T>,
    pub merge: Var<T>,
    pub g: Var<T>,
    pub l: Var<T>,
    pub weight: Var<T>,
    pub flow_out: Var<T>,
    pub fhigh_out: Var<T>,
    pub out: Var<T>,
}

impl<T: Scalar> AblgfmBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        c_low: usize,
        c_high: usize,
        reduction: usize,
        pool: usize,
        act: Activation,
        dropblock_high: Option<DropBlockLayer>,
        rng: &mut R,
    ) -> Result<Self> {
        if reduction == 0 || c_high % reduction != 0 {
            return Err(Error::InvalidConfig(format!(
                "fusion reduction {reduction} must divide {c_high}"
            )));
        }
        let mid = c_high / reduction;
        let pw = |i, o, act, rng: &mut R| -> Result<ConvBn<T>> {
            Ok(ConvBn::new(Conv2dLayer::pointwise(i, o, rng)?, o, act))
        };
        Ok(AblgfmBlock {
            flow_proj: pw(c_low, c_high, Some(act), rng)?,
            pool,
            global: [pw(c_high, mid, Some(act), rng)?, pw(mid, c_high, None, rng)?],
            local: [pw(c_high, mid, Some(act), rng)?, pw(mid, c_high, None, rng)?],
            dropblock_high,
        })
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        flow: &Var<T>,
        fhigh: &Var<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Var<T>> {
        Ok(self.trace(flow, fhigh, training, rng)?.out)
    }

    /// Runs the fusion and keeps every intermediate.
    pub fn trace<R: Rng + ?Sized>(
        &self,
        flow: &Var<T>,
        fhigh: &Var<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<AblgfmTrace<T>> {
        let low = avgpool2d(&self.flow_proj.forward(flow, training)?, self.pool)?;
        if low.shape() != fhigh.shape() {
            return Err(Error::shape("fusion inputs", low.shape(), fhigh.shape()));
        }
        let merge = fhigh.add(&low)?;
        let g = self.global[1].forward(
            &self.global[0].forward(&adaptive_avgpool_1x1(&merge)?, training)?,
            training,
        )?;
        let l = self.local[1].forward(&self.local[0].forward(&merge, training)?, training)?;
        let weight = l.add(&g)?.sigmoid()?;
        let flow_out = low.mul(&weight.one_minus()?)?;
        let dropped = match &self.dropblock_high {
            Some(db) => db.forward(fhigh, training, rng)?,
            None => fhigh.clone(),
        };
        let fhigh_out = dropped.mul(&weight)?;
        let out = flow_out.add(&fhigh_out)?;
        Ok(AblgfmTrace {
            low,
            merge,
            g,
            l,
            weight,
            flow_out,
            fhigh_out,
            out,
        })
    }
}

/// Free-function form of [`AblgfmBlock::forward`].
pub fn ablgfm_forward<T: Scalar, R: Rng + ?Sized>(
    block: &AblgfmBlock<T>,
    flow: &Var<T>,
    fhigh: &Var<T>,
    training: bool,
    rng: &mut R,
) -> Result<Var<T>> {
    block.forward(flow, fhigh, training, rng)
}

impl<T: Scalar> Module<T> for AblgfmBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'a, T>)) {
        self.flow_proj.visit_as(&join(prefix, "flow_proj"), "conv", "bn", f);
        for (name, pair) in [("global", &self.global), ("local", &self.local)] {
            let p = join(prefix, name);
            pair[0].visit_as(&p, "conv1", "bn1", f);
            pair[1].visit_as(&p, "conv2", "bn2", f);
        }
    }
}
