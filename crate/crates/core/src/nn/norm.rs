use super::param::{join, Buffer, Module, Param, Slot};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation over `N×C×H×W`.
#[derive(Debug)]
pub struct BatchNormLayer<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    pub eps: f64,
    pub momentum: f64,
}

fn dims<T: Scalar>(x: &Var<T>, c: usize) -> Result<(usize, usize, usize)> {
    let (n, xc, h, w) = x.value().dims4()?;
    if xc != c {
        return Err(Error::ShapeMismatch {
            op: "batchnorm channels",
            lhs: x.shape().to_vec(),
            rhs: vec![c],
        });
    }
    Ok((n, xc, h * w))
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormLayer {
            gamma: Param::new(Tensor::ones(&[channels])),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Buffer::new(Tensor::zeros(&[channels])),
            running_var: Buffer::new(Tensor::ones(&[channels])),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }

    pub fn forward(&self, x: &Var<T>, training: bool) -> Result<Var<T>> {
        if training {
            self.forward_train(x)
        } else {
            self.forward_eval(x)
        }
    }

    /// Normalises with batch statistics and updates the running averages.
    pub fn forward_train(&self, x: &Var<T>) -> Result<Var<T>> {
        let (n, c, hw) = dims(x, self.channels())?;
        let m = n * hw;
        if m < 2 {
            return Err(Error::arg(
                "batchnorm in training mode needs more than one value per channel",
            ));
        }
        let xd = x.value().data();
        let mf = T::of(m as f64);
        let eps = T::of(self.eps);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for (plane, chunk) in xd.chunks(hw).enumerate() {
            let mut s = T::zero();
            for &v in chunk {
                s += v;
            }
            mean[plane % c] += s;
        }
        mean.iter_mut().for_each(|v| *v /= mf);
        for (plane, chunk) in xd.chunks(hw).enumerate() {
            let mu = mean[plane % c];
            let mut s = T::zero();
            for &v in chunk {
                let d = v - mu;
                s += d * d;
            }
            var[plane % c] += s;
        }
        var.iter_mut().for_each(|v| *v /= mf);
        let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let gamma = self.gamma.var();
        let beta = self.beta.var();
        let (gd, bd) = (gamma.value().data(), beta.value().data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut y = vec![T::zero(); xd.len()];
        for (plane, (xc, (hc, yc))) in xd
            .chunks(hw)
            .zip(xhat.chunks_mut(hw).zip(y.chunks_mut(hw)))
            .enumerate()
        {
            let ch = plane % c;
            let (mu, is, g, b) = (mean[ch], invstd[ch], gd[ch], bd[ch]);
            for ((&xv, hv), yv) in xc.iter().zip(hc.iter_mut()).zip(yc.iter_mut()) {
                *hv = (xv - mu) * is;
                *yv = g * *hv + b;
            }
        }

        let mom = T::of(self.momentum);
        let unbias = mf / T::of((m - 1) as f64);
        let rm = self.running_mean.get();
        let rv = self.running_var.get();
        self.running_mean.set(Tensor::from_fn(&[c], |i| {
            (T::one() - mom) * rm.data()[i] + mom * mean[i]
        }));
        self.running_var.set(Tensor::from_fn(&[c], |i| {
            (T::one() - mom) * rv.data()[i] + mom * var[i] * unbias
        }));

        let value = Tensor::from_parts(x.shape().to_vec(), y);
        Var::from_op(
            "batchnorm_train",
            value,
            vec![x.clone(), gamma, beta],
            Box::new(move |g, ps| {
                let gdata = g.data();
                let gam = ps[1].value().data();
                let mut dbeta = vec![T::zero(); c];
                let mut dgamma = vec![T::zero(); c];
                for (plane, (gc, hc)) in gdata.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
                    let (mut sb, mut sg) = (T::zero(), T::zero());
                    for (&gv, &hv) in gc.iter().zip(hc) {
                        sb += gv;
                        sg += gv * hv;
                    }
                    dbeta[plane % c] += sb;
                    dgamma[plane % c] += sg;
                }
                let dx = ps[0].requires_grad().then(|| {
                    let mut dx = vec![T::zero(); gdata.len()];
                    for (plane, ((gc, hc), dc)) in gdata
                        .chunks(hw)
                        .zip(xhat.chunks(hw))
                        .zip(dx.chunks_mut(hw))
                        .enumerate()
                    {
                        let ch = plane % c;
                        let k = gam[ch] * invstd[ch] / mf;
                        for ((&gv, &hv), dv) in gc.iter().zip(hc).zip(dc.iter_mut()) {
                            *dv = k * (mf * gv - dbeta[ch] - hv * dgamma[ch]);
                        }
                    }
                    Tensor::from_parts(ps[0].shape().to_vec(), dx)
                });
                Ok(vec![
                    dx,
                    Some(Tensor::from_parts(vec![c], dgamma)),
                    Some(Tensor::from_parts(vec![c], dbeta)),
                ])
            }),
        )
    }

    /// `gamma·(x − running_mean)/sqrt(running_var + eps) + beta`.
    pub fn forward_eval(&self, x: &Var<T>) -> Result<Var<T>> {
        let (_, c, hw) = dims(x, self.channels())?;
        let rm = self.running_mean.get();
        let rv = self.running_var.get();
        let eps = T::of(self.eps);
        let inv: Vec<T> = rv.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = self.gamma.var();
        let beta = self.beta.var();
        let (gd, bd) = (gamma.value().data(), beta.value().data());
        let xd = x.value().data();
        let mut y = vec![T::zero(); xd.len()];
        for (plane, (xc, yc)) in xd.chunks(hw).zip(y.chunks_mut(hw)).enumerate() {
            let ch = plane % c;
            let (mu, s, b) = (rm.data()[ch], inv[ch] * gd[ch], bd[ch]);
            for (&xv, yv) in xc.iter().zip(yc.iter_mut()) {
                *yv = (xv - mu) * s + b;
            }
        }
        let value = Tensor::from_parts(x.shape().to_vec(), y);
        let mean = rm.into_data();
        Var::from_op(
            "batchnorm_eval",
            value,
            vec![x.clone(), gamma, beta],
            Box::new(move |g, ps| {
                let gdata = g.data();
                let xd = ps[0].value().data();
                let gam = ps[1].value().data();
                let mut dbeta = vec![T::zero(); c];
                let mut dgamma = vec![T::zero(); c];
                let mut dx = ps[0].requires_grad().then(|| vec![T::zero(); gdata.len()]);
                for (plane, (gc, xc)) in gdata.chunks(hw).zip(xd.chunks(hw)).enumerate() {
                    let ch = plane % c;
                    let (mut sb, mut sg) = (T::zero(), T::zero());
                    for (&gv, &xv) in gc.iter().zip(xc) {
                        sb += gv;
                        sg += gv * (xv - mean[ch]) * inv[ch];
                    }
                    dbeta[ch] += sb;
                    dgamma[ch] += sg;
                    if let Some(dx) = dx.as_mut() {
                        let s = gam[ch] * inv[ch];
                        for (dv, &gv) in dx[plane * hw..(plane + 1) * hw].iter_mut().zip(gc) {
                            *dv = gv * s;
                        }
                    }
                }
                Ok(vec![
                    dx.map(|d| Tensor::from_parts(ps[0].shape().to_vec(), d)),
                    Some(Tensor::from_parts(vec![c], dgamma)),
                    Some(Tensor::from_parts(vec![c], dbeta)),
                ])
            }),
        )
    }
}

impl<T: Scalar> Module<T> for BatchNormLayer<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'a, T>)) {
        f(&join(prefix, "weight"), Slot::Param(&self.gamma));
        f(&join(prefix, "bias"), Slot::Param(&self.beta));
        f(&join(prefix, "running_mean"), Slot::Buffer(&self.running_mean));
        f(&join(prefix, "running_var"), Slot::Buffer(&self.running_var));
    }
}
