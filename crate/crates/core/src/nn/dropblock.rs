//! Structured dropout that zeroes square spatial blocks.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Block-seed rate that makes the expected dropped fraction ≈ `drop_prob`.
pub fn dropblock_gamma(drop_prob: f64, h: usize, w: usize, block: usize) -> f64 {
    let valid = ((h - block + 1) * (w - block + 1)) as f64;
    drop_prob * (h * w) as f64 / ((block * block) as f64 * valid)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropBlockLayer {
    pub block_size: usize,
    pub drop_prob: f64,
}

impl DropBlockLayer {
    pub fn new(block_size: usize, drop_prob: f64) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidConfig("dropblock size must be positive".into()));
        }
        if !(0.0..1.0).contains(&drop_prob) {
            return Err(Error::InvalidConfig(format!(
                "dropblock probability {drop_prob} outside [0, 1)"
            )));
        }
        Ok(DropBlockLayer {
            block_size,
            drop_prob,
        })
    }

    /// Per-sample, per-channel block mask in training; identity otherwise.
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        x: &Var<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Var<T>> {
        let (n, c, h, w) = x.value().dims4()?;
        let bs = self.block_size;
        if bs > h || bs > w {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: format!("dropblock size {bs} exceeds spatial dims"),
            });
        }
        if !training || self.drop_prob == 0.0 {
            return Ok(x.clone());
        }
        let gamma = dropblock_gamma(self.drop_prob, h, w, bs);
        let hw = h * w;
        let mut mask = vec![true; n * c * hw];
        for plane in mask.chunks_mut(hw) {
            for i in 0..=h - bs {
                for j in 0..=w - bs {
                    if rng.random::<f64>() < gamma {
                        for r in i..i + bs {
                            plane[r * w + j..r * w + j + bs].fill(false);
                        }
                    }
                }
            }
        }
        let kept = mask.iter().filter(|&&m| m).count();
        let scale = if kept == 0 {
            T::zero()
        } else {
            T::of(mask.len() as f64 / kept as f64)
        };
        let out: Vec<T> = x
            .value()
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { v * scale } else { T::zero() })
            .collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        Var::from_op(
            "dropblock",
            value,
            vec![x.clone()],
            Box::new(move |g, ps| {
                let d: Vec<T> = g
                    .data()
                    .iter()
                    .zip(&mask)
                    .map(|(&v, &m)| if m { v * scale } else { T::zero() })
                    .collect();
                Ok(vec![Some(Tensor::from_parts(ps[0].shape().to_vec(), d))])
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input() -> Var<f32> {
        Var::param(Tensor::from_fn(&[2, 3, 8, 8], |i| (i as f32 * 0.31).sin() + 2.0))
    }

    #[test]
    fn identity_cases_are_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = input();
        let eval = DropBlockLayer::new(4, 0.3).unwrap().forward(&x, false, &mut rng).unwrap();
        assert!(eval.value().bitwise_eq(x.value()));
        let zero = DropBlockLayer::new(4, 0.0).unwrap().forward(&x, true, &mut rng).unwrap();
        assert!(zero.value().bitwise_eq(x.value()));
    }

    #[test]
    fn rejects_oversized_block_and_bad_prob() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(DropBlockLayer::new(9, 0.1).unwrap().forward(&input(), true, &mut rng).is_err());
        assert!(DropBlockLayer::new(2, 1.0).is_err());
        assert!(DropBlockLayer::new(0, 0.1).is_err());
    }

    #[test]
    fn unit_blocks_drop_at_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Var::constant(Tensor::<f32>::ones(&[10, 10, 25, 40]));
        let y = DropBlockLayer::new(1, 0.1).unwrap().forward(&x, true, &mut rng).unwrap();
        let zeros = y.value().data().iter().filter(|&&v| v == 0.0).count();
        let frac = zeros as f64 / y.value().numel() as f64;
        assert!((0.08..=0.12).contains(&frac), "{frac}");
        // survivors rescaled by total/kept
        let kept = y.value().numel() - zeros;
        let want = y.value().numel() as f32 / kept as f32;
        assert!(y.value().data().iter().all(|&v| v == 0.0 || v == want));
    }

    #[test]
    fn blocks_are_square_and_gradient_follows_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Var::param(Tensor::<f32>::ones(&[1, 1, 12, 12]));
        let y = DropBlockLayer::new(4, 0.2).unwrap().forward(&x, true, &mut rng).unwrap();
        y.sum().unwrap().backward().unwrap();
        let g = x.grad().unwrap();
        assert!(g.bitwise_eq(y.value()));
        // every zero lies inside some fully-zero 4×4 block
        let d = y.value().data();
        for r in 0..12 {
            for c in 0..12 {
                if d[r * 12 + c] != 0.0 {
                    continue;
                }
                let covered = (r.saturating_sub(3)..=r.min(8)).any(|i| {
                    (c.saturating_sub(3)..=c.min(8)).any(|j| {
                        (i..i + 4).all(|rr| (j..j + 4).all(|cc| d[rr * 12 + cc] == 0.0))
                    })
                });
                assert!(covered, "stray zero at {r},{c}");
            }
        }
    }

    #[test]
    fn expected_value_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = DropBlockLayer::new(1, 0.1).unwrap();
        let x = Var::constant(Tensor::<f64>::full(&[1, 1, 4, 4], 3.0));
        let trials = 20_000;
        let mut acc = vec![0.0; 16];
        for _ in 0..trials {
            let y = layer.forward(&x, true, &mut rng).unwrap();
            for (a, v) in acc.iter_mut().zip(y.value().data()) {
                *a += v;
            }
        }
        for a in acc {
            let mean = a / trials as f64;
            assert!((mean - 3.0).abs() < 0.1, "{mean}");
        }
    }
}
