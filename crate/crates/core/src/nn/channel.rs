//! Channel split, concatenation and shuffle.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelShuffleSpec {
    pub groups: usize,
}

/// Destination of input channel `i` under the reshape(g, C/g)-transpose.
pub fn shuffle_index(i: usize, channels: usize, groups: usize) -> usize {
    let per = channels / groups;
    (i % per) * groups + i / per
}

/// Copies channel range `[start, start+len)`.
fn narrow<T: Scalar>(x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
    let (n, c, h, w) = x.value().dims4()?;
    let hw = h * w;
    let xd = x.value().data();
    let mut out = Vec::with_capacity(n * len * hw);
    for b in 0..n {
        let s = (b * c + start) * hw;
        out.extend_from_slice(&xd[s..s + len * hw]);
    }
    let value = Tensor::from_parts(vec![n, len, h, w], out);
    Var::from_op(
        "narrow",
        value,
        vec![x.clone()],
        Box::new(move |g, ps| {
            let mut dx = vec![T::zero(); n * c * hw];
            for (b, chunk) in g.data().chunks(len * hw).enumerate() {
                let s = (b * c + start) * hw;
                dx[s..s + len * hw].copy_from_slice(chunk);
            }
            Ok(vec![Some(Tensor::from_parts(ps[0].shape().to_vec(), dx))])
        }),
    )
}

/// First and second half of the channels, order preserved.
pub fn split_half<T: Scalar>(x: &Var<T>) -> Result<(Var<T>, Var<T>)> {
    let (_, c, _, _) = x.value().dims4()?;
    if c % 2 != 0 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "channel split needs an even channel count".into(),
        });
    }
    Ok((narrow(x, 0, c / 2)?, narrow(x, c / 2, c / 2)?))
}

pub fn concat_channels<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (n, ca, h, w) = a.value().dims4()?;
    let (nb, cb, hb, wb) = b.value().dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape("concat_channels", a.shape(), b.shape()));
    }
    let hw = h * w;
    let (ad, bd) = (a.value().data(), b.value().data());
    let mut out = Vec::with_capacity(n * (ca + cb) * hw);
    for s in 0..n {
        out.extend_from_slice(&ad[s * ca * hw..(s + 1) * ca * hw]);
        out.extend_from_slice(&bd[s * cb * hw..(s + 1) * cb * hw]);
    }
    let value = Tensor::from_parts(vec![n, ca + cb, h, w], out);
    Var::from_op(
        "concat",
        value,
        vec![a.clone(), b.clone()],
        Box::new(move |g, ps| {
            let gd = g.data();
            let mut da = Vec::with_capacity(n * ca * hw);
            let mut db = Vec::with_capacity(n * cb * hw);
            for s in 0..n {
                let o = s * (ca + cb) * hw;
                da.extend_from_slice(&gd[o..o + ca * hw]);
                db.extend_from_slice(&gd[o + ca * hw..o + (ca + cb) * hw]);
            }
            Ok(vec![
                Some(Tensor::from_parts(ps[0].shape().to_vec(), da)),
                Some(Tensor::from_parts(ps[1].shape().to_vec(), db)),
            ])
        }),
    )
}

/// Interleaves channel groups (pure permutation).
pub fn channel_shuffle<T: Scalar>(x: &Var<T>, spec: ChannelShuffleSpec) -> Result<Var<T>> {
    let (n, c, h, w) = x.value().dims4()?;
    let g = spec.groups;
    if g == 0 || c % g != 0 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("channels not divisible by shuffle groups {g}"),
        });
    }
    let hw = h * w;
    let dest: Vec<usize> = (0..c).map(|i| shuffle_index(i, c, g)).collect();
    let xd = x.value().data();
    let mut out = vec![T::zero(); xd.len()];
    for s in 0..n {
        for (i, &d) in dest.iter().enumerate() {
            let src = (s * c + i) * hw;
            let dst = (s * c + d) * hw;
            out[dst..dst + hw].copy_from_slice(&xd[src..src + hw]);
        }
    }
    let value = Tensor::from_parts(x.shape().to_vec(), out);
    Var::from_op(
        "channel_shuffle",
        value,
        vec![x.clone()],
        Box::new(move |gr, ps| {
            let gd = gr.data();
            let mut dx = vec![T::zero(); gd.len()];
            for s in 0..n {
                for (i, &d) in dest.iter().enumerate() {
                    let src = (s * c + i) * hw;
                    let dst = (s * c + d) * hw;
                    dx[src..src + hw].copy_from_slice(&gd[dst..dst + hw]);
                }
            }
            Ok(vec![Some(Tensor::from_parts(ps[0].shape().to_vec(), dx))])
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, ScalarFn};
    use proptest::prelude::*;

    fn channels(c: usize) -> Var<f32> {
        Var::param(Tensor::from_fn(&[1, c, 1, 1], |i| i as f32))
    }

    #[test]
    fn shuffle_examples() {
        let y = channel_shuffle(&channels(4), ChannelShuffleSpec { groups: 2 }).unwrap();
        assert_eq!(y.value().data(), &[0., 2., 1., 3.]);
        let yy = channel_shuffle(&y, ChannelShuffleSpec { groups: 2 }).unwrap();
        assert_eq!(yy.value().data(), &[0., 1., 2., 3.]);
        let y = channel_shuffle(&channels(6), ChannelShuffleSpec { groups: 3 }).unwrap();
        assert_eq!(y.value().data(), &[0., 2., 4., 1., 3., 5.]);
        let x = channels(5);
        let y = channel_shuffle(&x, ChannelShuffleSpec { groups: 1 }).unwrap();
        assert!(y.value().bitwise_eq(x.value()));
        assert!(channel_shuffle(&x, ChannelShuffleSpec { groups: 2 }).is_err());
    }

    #[test]
    fn split_and_concat() {
        let x = channels(4);
        let (a, b) = split_half(&x).unwrap();
        assert_eq!(a.value().data(), &[0., 1.]);
        assert_eq!(b.value().data(), &[2., 3.]);
        let back = concat_channels(&a, &b).unwrap();
        assert!(back.value().bitwise_eq(x.value()));
        assert!(split_half(&channels(3)).is_err());
    }

    #[test]
    fn split_grads_reach_only_their_half() {
        let x = Var::param(Tensor::<f32>::from_fn(&[2, 4, 2, 2], |i| i as f32));
        let (a, _) = split_half(&x).unwrap();
        a.sum().unwrap().backward().unwrap();
        let g = x.grad().unwrap();
        for s in 0..2 {
            for c in 0..4 {
                let want = if c < 2 { 1.0 } else { 0.0 };
                assert!((0..4).all(|k| g.data()[(s * 4 + c) * 4 + k] == want));
            }
        }
    }

    struct SplitSecond;
    impl ScalarFn for SplitSecond {
        fn eval<T: Scalar>(&self, x: &Var<T>) -> Result<Var<T>> {
            let (a, b) = split_half(x)?;
            let y = concat_channels(&b.mul(&b)?, &a)?;
            let y = channel_shuffle(&y, ChannelShuffleSpec { groups: 2 })?;
            let w = Tensor::from_fn(y.shape(), |i| T::of(i as f64 * 0.1 - 0.7));
            y.dot_const(&w)
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = Tensor::<f32>::from_fn(&[2, 4, 2, 3], |i| ((i * 11 % 17) as f32) / 8.0 - 1.0);
        let r = finite_difference_check(&SplitSecond, &x, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    proptest! {
        #[test]
        fn shuffle_is_a_permutation(g in 1usize..6, per in 1usize..6) {
            let c = g * per;
            let mut seen = vec![false; c];
            for i in 0..c {
                let d = shuffle_index(i, c, g);
                prop_assert!(d < c && !seen[d]);
                seen[d] = true;
            }
            // the inverse permutation is the shuffle with C/g groups
            for i in 0..c {
                prop_assert_eq!(shuffle_index(shuffle_index(i, c, g), c, per), i);
            }
            let x = Var::constant(Tensor::<f32>::from_fn(&[1, c, 2, 1], |i| (i as f32 * 1.3).sin()));
            let y = channel_shuffle(&x, ChannelShuffleSpec { groups: g }).unwrap();
            let z = channel_shuffle(&y, ChannelShuffleSpec { groups: per }).unwrap();
            prop_assert!(z.value().bitwise_eq(x.value()));
            let mut a: Vec<f32> = x.value().data().to_vec();
            let mut b: Vec<f32> = y.value().data().to_vec();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
        }
    }
}
