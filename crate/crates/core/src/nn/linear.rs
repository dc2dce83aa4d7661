use rand::Rng;

use super::gemm::{gemm_acc, transpose};
use super::kaiming_uniform;
use super::param::{join, Module, Param, Slot};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `x·Wᵀ + b` for `x: N×In`, `W: Out×In`.
pub fn linear<T: Scalar>(x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
    let (&[n, din], &[dout, win]) = (x.shape(), weight.shape()) else {
        return Err(Error::shape("linear", x.shape(), weight.shape()));
    };
    if din != win {
        return Err(Error::shape("linear", x.shape(), weight.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [dout] {
            return Err(Error::shape("linear bias", b.shape(), &[dout]));
        }
    }
    let wt = transpose(dout, din, weight.value().data());
    let mut y = vec![T::zero(); n * dout];
    gemm_acc(n, din, dout, x.value().data(), &wt, &mut y);
    if let Some(b) = bias {
        for row in y.chunks_mut(dout) {
            for (v, &bv) in row.iter_mut().zip(b.value().data()) {
                *v += bv;
            }
        }
    }
    let value = Tensor::from_parts(vec![n, dout], y);
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Var::from_op(
        "linear",
        value,
        parents,
        Box::new(move |g, ps| {
            let gd = g.data();
            let dx = ps[0].requires_grad().then(|| {
                let mut dx = vec![T::zero(); n * din];
                gemm_acc(n, dout, din, gd, ps[1].value().data(), &mut dx);
                Tensor::from_parts(vec![n, din], dx)
            });
            let dw = ps[1].requires_grad().then(|| {
                let gt = transpose(n, dout, gd);
                let mut dw = vec![T::zero(); dout * din];
                gemm_acc(dout, n, din, &gt, ps[0].value().data(), &mut dw);
                Tensor::from_parts(vec![dout, din], dw)
            });
            let mut grads = vec![dx, dw];
            if ps.len() == 3 {
                let mut db = vec![T::zero(); dout];
                for row in gd.chunks(dout) {
                    for (a, &v) in db.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                grads.push(Some(Tensor::from_parts(vec![dout], db)));
            }
            Ok(grads)
        }),
    )
}

#[derive(Debug)]
pub struct LinearLayer<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> LinearLayer<T> {
    /// Kaiming-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(din: usize, dout: usize, rng: &mut R) -> Self {
        LinearLayer {
            weight: Param::new(kaiming_uniform(&[dout, din], din, rng)),
            bias: Param::new(Tensor::zeros(&[dout])),
        }
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        linear(x, &self.weight.var(), Some(&self.bias.var()))
    }
}

impl<T: Scalar> Module<T> for LinearLayer<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'a, T>)) {
        f(&join(prefix, "weight"), Slot::Param(&self.weight));
        f(&join(prefix, "bias"), Slot::Param(&self.bias));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, ScalarFn};

    #[test]
    fn small_cases() {
        let x = Var::constant(Tensor::<f32>::new(&[1, 2], vec![2.0, 3.0]).unwrap());
        let w = Var::constant(Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap());
        let b = Var::constant(Tensor::zeros(&[1]));
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().value().data(), &[5.0]);

        let x = Var::constant(Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 - 2.0));
        let eye = Var::constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        assert!(linear(&x, &eye, None).unwrap().value().bitwise_eq(x.value()));
        assert!(linear(&x, &Var::constant(Tensor::ones(&[2, 2])), None).is_err());
    }

    #[test]
    fn matches_naive_matmul() {
        let x = Tensor::<f64>::from_fn(&[3, 4], |i| ((i * 7 % 11) as f64) - 5.0);
        let w = Tensor::<f64>::from_fn(&[2, 4], |i| ((i * 3 % 5) as f64) * 0.5);
        let b = Tensor::<f64>::new(&[2], vec![0.25, -1.0]).unwrap();
        let y = linear(&Var::constant(x.clone()), &Var::constant(w.clone()), Some(&Var::constant(b.clone()))).unwrap();
        for i in 0..3 {
            for o in 0..2 {
                let mut s = b.data()[o];
                for k in 0..4 {
                    s += x.data()[i * 4 + k] * w.data()[o * 4 + k];
                }
                assert_eq!(y.value().data()[i * 2 + o], s);
            }
        }
    }

    #[test]
    fn parameter_count() {
        let mut rng = rand::rng();
        assert_eq!(crate::nn::count_parameters(&LinearLayer::<f32>::new(4, 2, &mut rng)), 10);
    }

    struct Lin(bool);
    impl ScalarFn for Lin {
        fn eval<T: Scalar>(&self, v: &Var<T>) -> Result<Var<T>> {
            let other = Var::constant(Tensor::from_fn(&[3, 4], |i| T::of((i as f64 * 0.7).cos())));
            let b = Var::constant(Tensor::from_fn(&[3], |i| T::of(i as f64)));
            let y = if self.0 { linear(v, &other, Some(&b))? } else { linear(&other.reshape(&[4, 3])?.reshape(&[3, 4])?, v, Some(&b))? };
            let w = Tensor::from_fn(y.shape(), |i| T::of(1.0 - i as f64 * 0.2));
            y.dot_const(&w)
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = Tensor::<f32>::from_fn(&[2, 4], |i| (i as f32 * 0.9).sin());
        let r = finite_difference_check(&Lin(true), &x, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
        let w = Tensor::<f32>::from_fn(&[3, 4], |i| (i as f32 * 0.4).cos());
        let r = finite_difference_check(&Lin(false), &w, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }
}
