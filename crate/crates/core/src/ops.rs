//! Elementwise arithmetic, reductions and reshapes on [`Var`].

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the smaller operand of a binary op maps onto the larger one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    /// `C×1×1` (or `1×C×1×1`) over `N×C×H×W`.
    Channel { c: usize, hw: usize },
    /// `N×C×1×1` over `N×C×H×W`.
    SampleChannel { hw: usize },
}

fn bcast_kind(big: &[usize], small: &[usize]) -> Option<Bcast> {
    if big == small {
        return Some(Bcast::Same);
    }
    if small.iter().product::<usize>() == 1 {
        return Some(Bcast::Scalar);
    }
    if let [n, c, h, w] = *big {
        match *small {
            [sc, 1, 1] | [1, sc, 1, 1] if sc == c => {
                return Some(Bcast::Channel { c, hw: h * w });
            }
            [sn, sc, 1, 1] if sn == n && sc == c => {
                return Some(Bcast::SampleChannel { hw: h * w });
            }
            _ => {}
        }
    }
    None
}

impl Bcast {
    /// Calls `f(big_range_start, len, small_index)` over contiguous runs that
    /// share one element of the small operand.
    fn runs(self, numel: usize, mut f: impl FnMut(usize, usize, usize)) {
        match self {
            Bcast::Same => {
                for i in 0..numel {
                    f(i, 1, i);
                }
            }
            Bcast::Scalar => f(0, numel, 0),
            Bcast::Channel { c, hw } => {
                for (plane, start) in (0..numel).step_by(hw).enumerate() {
                    f(start, hw, plane % c);
                }
            }
            Bcast::SampleChannel { hw } => {
                for (plane, start) in (0..numel).step_by(hw).enumerate() {
                    f(start, hw, plane);
                }
            }
        }
    }
}

/// Orders operands so the first is the larger; errors outside the rule.
fn resolve<'a, T: Scalar>(
    op: &'static str,
    a: &'a Var<T>,
    b: &'a Var<T>,
) -> Result<(&'a Var<T>, &'a Var<T>, Bcast, bool)> {
    if let Some(k) = bcast_kind(a.shape(), b.shape()) {
        return Ok((a, b, k, false));
    }
    if let Some(k) = bcast_kind(b.shape(), a.shape()) {
        return Ok((b, a, k, true));
    }
    Err(Error::shape(op, a.shape(), b.shape()))
}

fn reduce_to_small<T: Scalar>(kind: Bcast, g: &[T], small_shape: &[usize]) -> Tensor<T> {
    if kind == Bcast::Same {
        return Tensor::from_parts(small_shape.to_vec(), g.to_vec());
    }
    let mut out = vec![T::zero(); small_shape.iter().product()];
    kind.runs(g.len(), |start, len, si| {
        let mut acc = T::zero();
        for &v in &g[start..start + len] {
            acc += v;
        }
        out[si] += acc;
    });
    Tensor::from_parts(small_shape.to_vec(), out)
}

impl<T: Scalar> Var<T> {
    /// Elementwise sum with `C×1×1`, `N×C×1×1` or scalar broadcasting.
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        let (big, small, kind, swapped) = resolve("add", self, other)?;
        let bd = big.value().data();
        let sd = small.value().data();
        let mut out = bd.to_vec();
        kind.runs(bd.len(), |start, len, si| {
            let s = sd[si];
            for v in &mut out[start..start + len] {
                *v += s;
            }
        });
        let value = Tensor::from_parts(big.shape().to_vec(), out);
        let parents = if swapped {
            vec![small.clone(), big.clone()]
        } else {
            vec![big.clone(), small.clone()]
        };
        Var::from_op(
            "add",
            value,
            parents,
            Box::new(move |g, ps| {
                let (bi, si) = if swapped { (1, 0) } else { (0, 1) };
                let mut grads = vec![None, None];
                if ps[bi].requires_grad() {
                    grads[bi] = Some(g.clone());
                }
                if ps[si].requires_grad() {
                    grads[si] = Some(reduce_to_small(kind, g.data(), ps[si].shape()));
                }
                Ok(grads)
            }),
        )
    }

    /// Elementwise product with the same broadcasting rule as [`Var::add`].
    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (big, small, kind, swapped) = resolve("mul", self, other)?;
        let bd = big.value().data();
        let sd = small.value().data();
        let mut out = bd.to_vec();
        kind.runs(bd.len(), |start, len, si| {
            let s = sd[si];
            for v in &mut out[start..start + len] {
                *v *= s;
            }
        });
        let value = Tensor::from_parts(big.shape().to_vec(), out);
        let parents = if swapped {
            vec![small.clone(), big.clone()]
        } else {
            vec![big.clone(), small.clone()]
        };
        Var::from_op(
            "mul",
            value,
            parents,
            Box::new(move |g, ps| {
                let (bi, si) = if swapped { (1, 0) } else { (0, 1) };
                let bd = ps[bi].value().data();
                let sd = ps[si].value().data();
                let gd = g.data();
                let mut grads = vec![None, None];
                if ps[bi].requires_grad() {
                    let mut db = gd.to_vec();
                    kind.runs(gd.len(), |start, len, s| {
                        let sv = sd[s];
                        for v in &mut db[start..start + len] {
                            *v *= sv;
                        }
                    });
                    grads[bi] = Some(Tensor::from_parts(ps[bi].shape().to_vec(), db));
                }
                if ps[si].requires_grad() {
                    let prod: Vec<T> = gd.iter().zip(bd).map(|(&a, &b)| a * b).collect();
                    grads[si] = Some(reduce_to_small(kind, &prod, ps[si].shape()));
                }
                Ok(grads)
            }),
        )
    }

    /// `alpha·x + beta`.
    pub fn affine(&self, alpha: T, beta: T) -> Result<Var<T>> {
        let value = self.value().map(|v| alpha * v + beta);
        Var::from_op(
            "affine",
            value,
            vec![self.clone()],
            Box::new(move |g, _| Ok(vec![Some(g.map(|v| v * alpha))])),
        )
    }

    /// `1 − x`.
    pub fn one_minus(&self) -> Result<Var<T>> {
        self.affine(-T::one(), T::one())
    }

    pub fn sum(&self) -> Result<Var<T>> {
        let value = Tensor::scalar(self.value().sum());
        Var::from_op(
            "sum",
            value,
            vec![self.clone()],
            Box::new(|g, ps| Ok(vec![Some(Tensor::full(ps[0].shape(), g.data()[0]))])),
        )
    }

    pub fn mean(&self) -> Result<Var<T>> {
        let n = T::of(self.value().numel() as f64);
        self.sum()?.affine(T::one() / n, T::zero())
    }

    /// `Σ x ⊙ w` for a constant weight tensor of the same shape.
    pub fn dot_const(&self, w: &Tensor<T>) -> Result<Var<T>> {
        if w.shape() != self.shape() {
            return Err(Error::shape("dot_const", self.shape(), w.shape()));
        }
        let s = self
            .value()
            .data()
            .iter()
            .zip(w.data())
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        let w = w.clone();
        Var::from_op(
            "dot_const",
            Tensor::scalar(s),
            vec![self.clone()],
            Box::new(move |g, _| Ok(vec![Some(w.map(|v| v * g.data()[0]))])),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let value = self.value().reshape(shape)?;
        Var::from_op(
            "reshape",
            value,
            vec![self.clone()],
            Box::new(|g, ps| Ok(vec![Some(g.reshape(ps[0].shape())?)])),
        )
    }

    /// `N×C×1×1` → `N×C`.
    pub fn flatten(&self) -> Result<Var<T>> {
        let n = self.shape()[0];
        let rest: usize = self.shape()[1..].iter().product();
        self.reshape(&[n, rest])
    }
}
