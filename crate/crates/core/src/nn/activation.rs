use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Nonlinearity used throughout the backbone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &Var<T>) -> Result<Var<T>> {
        match self {
            Activation::Gelu => x.gelu(),
            Activation::Relu => x.relu(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation {other:?} (expected gelu or relu)")),
        }
    }
}

#[inline]
fn std_normal_cdf<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
fn std_normal_pdf<T: Scalar>(x: T) -> T {
    T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt()) * (-(x * x) * T::of(0.5)).exp()
}

#[inline]
fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn unary<T: Scalar>(
    op: &'static str,
    x: &Var<T>,
    f: impl Fn(T) -> T,
    df: fn(T, T) -> T,
) -> Result<Var<T>> {
    let value = x.value().map(f);
    Var::from_op(
        op,
        value,
        vec![x.clone()],
        Box::new(move |g, ps| {
            let xd = ps[0].value().data();
            let d: Vec<T> = g
                .data()
                .iter()
                .zip(xd)
                .map(|(&gv, &xv)| gv * df(xv, gv))
                .collect();
            Ok(vec![Some(Tensor::from_parts(g.shape().to_vec(), d))])
        }),
    )
}

impl<T: Scalar> Var<T> {
    /// `x·Φ(x)` with the exact normal CDF.
    pub fn gelu(&self) -> Result<Var<T>> {
        let xd = self.value().data();
        let mut y = Vec::with_capacity(xd.len());
        let mut dy = Vec::with_capacity(xd.len());
        for &x in xd {
            let cdf = std_normal_cdf(x);
            y.push(x * cdf);
            dy.push(cdf + x * std_normal_pdf(x));
        }
        let shape = self.shape().to_vec();
        let value = Tensor::from_parts(shape.clone(), y);
        let dy = Tensor::from_parts(shape, dy);
        Var::from_op(
            "gelu",
            value,
            vec![self.clone()],
            Box::new(move |g, _| g.zip_map(&dy, |a, b| a * b).map(Some).map(|t| vec![t])),
        )
    }

    pub fn relu(&self) -> Result<Var<T>> {
        unary(
            "relu",
            self,
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Result<Var<T>> {
        unary("sigmoid", self, sigmoid_scalar, |x, _| {
            let s = sigmoid_scalar(x);
            s * (T::one() - s)
        })
    }
}
