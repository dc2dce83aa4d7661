use super::conv::conv_out_size;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Windowed maximum with implicit −∞ padding. The gradient goes to the
/// first maximal element in row-major window order.
pub fn maxpool2d<T: Scalar>(x: &Var<T>, kernel: usize, stride: usize, pad: usize) -> Result<Var<T>> {
    let (n, c, h, w) = x.value().dims4()?;
    if pad * 2 > kernel {
        return Err(Error::arg("maxpool padding must be at most half the kernel"));
    }
    let (Some(ho), Some(wo)) = (
        conv_out_size(h, kernel, stride, pad),
        conv_out_size(w, kernel, stride, pad),
    ) else {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "maxpool output would be empty".into(),
        });
    };
    let xd = x.value().data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_i = usize::MAX;
                for ki in 0..kernel {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih as usize >= h {
                        continue;
                    }
                    for kj in 0..kernel {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw < 0 || iw as usize >= w {
                            continue;
                        }
                        let idx = base + ih as usize * w + iw as usize;
                        if best_i == usize::MAX || xd[idx] > best {
                            best = xd[idx];
                            best_i = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    let value = Tensor::from_parts(vec![n, c, ho, wo], out);
    Var::from_op(
        "maxpool2d",
        value,
        vec![x.clone()],
        Box::new(move |g, ps| {
            let mut dx = vec![T::zero(); ps[0].value().numel()];
            for (&i, &gv) in arg.iter().zip(g.data()) {
                dx[i] += gv;
            }
            Ok(vec![Some(Tensor::from_parts(ps[0].shape().to_vec(), dx))])
        }),
    )
}

/// Mean over non-overlapping `k×k` tiles; H and W must be multiples of `k`.
pub fn avgpool2d<T: Scalar>(x: &Var<T>, k: usize) -> Result<Var<T>> {
    let (n, c, h, w) = x.value().dims4()?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("spatial dims not divisible by pool size {k}"),
        });
    }
    let (ho, wo) = (h / k, w / k);
    let inv = T::one() / T::of((k * k) as f64);
    let xd = x.value().data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    for plane in 0..n * c {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for oh in 0..ho {
            for ow in 0..wo {
                let mut s = T::zero();
                for i in 0..k {
                    for j in 0..k {
                        s += src[(oh * k + i) * w + ow * k + j];
                    }
                }
                dst[oh * wo + ow] = s * inv;
            }
        }
    }
    let value = Tensor::from_parts(vec![n, c, ho, wo], out);
    Var::from_op(
        "avgpool2d",
        value,
        vec![x.clone()],
        Box::new(move |g, ps| {
            let gd = g.data();
            let mut dx = vec![T::zero(); n * c * h * w];
            for plane in 0..n * c {
                for ih in 0..h {
                    for iw in 0..w {
                        dx[(plane * h + ih) * w + iw] =
                            gd[(plane * ho + ih / k) * wo + iw / k] * inv;
                    }
                }
            }
            Ok(vec![Some(Tensor::from_parts(ps[0].shape().to_vec(), dx))])
        }),
    )
}

/// Global per-channel mean, `N×C×H×W → N×C×1×1`.
pub fn adaptive_avgpool_1x1<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let (n, c, h, w) = x.value().dims4()?;
    let hw = h * w;
    let inv = T::one() / T::of(hw as f64);
    let out: Vec<T> = x
        .value()
        .data()
        .chunks(hw)
        .map(|p| {
            let mut s = T::zero();
            for &v in p {
                s += v;
            }
            s * inv
        })
        .collect();
    let value = Tensor::from_parts(vec![n, c, 1, 1], out);
    Var::from_op(
        "adaptive_avgpool",
        value,
        vec![x.clone()],
        Box::new(move |g, ps| {
            let mut dx = Vec::with_capacity(n * c * hw);
            for &gv in g.data() {
                dx.extend(std::iter::repeat_n(gv * inv, hw));
            }
            Ok(vec![Some(Tensor::from_parts(ps[0].shape().to_vec(), dx))])
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, ScalarFn};

    fn ramp() -> Var<f32> {
        Var::param(Tensor::from_fn(&[1, 1, 4, 4], |i| (i + 1) as f32))
    }

    #[test]
    fn maxpool_values_and_routing() {
        let x = ramp();
        let y = maxpool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.value().data(), &[6.0, 8.0, 14.0, 16.0]);
        y.sum().unwrap().backward().unwrap();
        let g = x.grad().unwrap();
        let hot: Vec<usize> = g.data().iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
        assert_eq!(hot, vec![5, 7, 13, 15]);
    }

    #[test]
    fn maxpool_constant_and_ties() {
        let x = Var::param(Tensor::<f32>::full(&[1, 1, 4, 4], 2.5));
        let y = maxpool2d(&x, 3, 2, 1).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 2.5));
        y.sum().unwrap().backward().unwrap();
        // first element of each window (row-major) wins
        let g = x.grad().unwrap();
        assert_eq!(g.data()[0], 1.0);
        assert_eq!(g.data()[1], 1.0);
        assert_eq!(g.data()[4], 1.0);
        assert_eq!(g.data()[5], 1.0);
        assert_eq!(g.sum(), 4.0);
    }

    #[test]
    fn avgpool_values() {
        let x = ramp();
        let y = avgpool2d(&x, 2).unwrap();
        assert_eq!(y.value().data(), &[3.5, 5.5, 11.5, 13.5]);
        let id = avgpool2d(&x, 1).unwrap();
        assert!(id.value().bitwise_eq(x.value()));
        let tile = Var::constant(Tensor::<f32>::new(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap());
        assert_eq!(avgpool2d(&tile, 2).unwrap().value().data(), &[2.5]);
        assert!(avgpool2d(&ramp(), 3).is_err());
    }

    #[test]
    fn adaptive_pool_values() {
        let x = Var::constant(Tensor::<f64>::full(&[2, 3, 5, 5], 1.75));
        assert!(adaptive_avgpool_1x1(&x).unwrap().value().data().iter().all(|&v| v == 1.75));
        let mut d = vec![0.0f64; 49];
        d[48] = 1.0;
        let x = Var::constant(Tensor::new(&[1, 1, 7, 7], d).unwrap());
        assert!((adaptive_avgpool_1x1(&x).unwrap().value().data()[0] - 1.0 / 49.0).abs() < 1e-15);
        let x = Var::constant(Tensor::<f64>::from_fn(&[1, 2, 4, 4], |i| (i as f64).sqrt()));
        let a = adaptive_avgpool_1x1(&x).unwrap();
        let b = avgpool2d(&x, 4).unwrap();
        assert!(a.value().max_abs_diff(b.value()).unwrap() < 1e-12);
    }

    struct Pools;
    impl ScalarFn for Pools {
        fn eval<T: Scalar>(&self, x: &Var<T>) -> Result<Var<T>> {
            let a = maxpool2d(x, 3, 2, 1)?;
            let b = avgpool2d(x, 2)?;
            let c = adaptive_avgpool_1x1(x)?;
            let wa = Tensor::from_fn(a.shape(), |i| T::of(1.0 + i as f64 * 0.1));
            let wb = Tensor::from_fn(b.shape(), |i| T::of(0.5 - i as f64 * 0.05));
            let wc = Tensor::from_fn(c.shape(), |i| T::of(2.0 + i as f64));
            a.dot_const(&wa)?.add(&b.dot_const(&wb)?)?.add(&c.dot_const(&wc)?)
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // distinct values spaced well beyond h so no window max flips
        let x = Tensor::<f32>::from_fn(&[2, 2, 4, 4], |i| ((i * 23 % 64) as f32) * 0.05 - 1.6);
        let r = finite_difference_check(&Pools, &x, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }
}
