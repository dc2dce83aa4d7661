//! Reverse-mode differentiation over a dynamic tape.
//!
//! Every differentiable op produces a [`Var`] that remembers its parents and
//! a vector-Jacobian closure. Node ids grow monotonically, so sorting the
//! reachable set by descending id is a valid reverse topological order.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{finite_checks_enabled, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Vector-Jacobian rule: given the upstream gradient and the op's parents,
/// returns one optional gradient per parent.
pub type BackwardFn<T> =
    Box<dyn Fn(&Tensor<T>, &[Var<T>]) -> Result<Vec<Option<Tensor<T>>>> + Send + Sync>;

struct Node<T: Scalar> {
    id: u64,
    op: &'static str,
    value: Tensor<T>,
    requires_grad: bool,
    retain: AtomicBool,
    grad: Mutex<Option<Tensor<T>>>,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A tensor value participating in the tape.
pub struct Var<T: Scalar>(Arc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("op", &self.0.op)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    fn make(
        op: &'static str,
        value: Tensor<T>,
        requires_grad: bool,
        parents: Vec<Var<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        Var(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            op,
            value,
            requires_grad,
            retain: AtomicBool::new(false),
            grad: Mutex::new(None),
            parents,
            backward,
        }))
    }

    /// Trainable leaf.
    pub fn param(value: Tensor<T>) -> Self {
        Self::make("param", value, true, Vec::new(), None)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make("const", value, false, Vec::new(), None)
    }

    /// Records the result of an op. The graph edge is dropped when no parent
    /// needs a gradient or recording is disabled on this thread.
    pub fn from_op(
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<Var<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        if finite_checks_enabled() && !value.all_finite() {
            return Err(Error::NonFinite(op.to_string()));
        }
        let requires = grad_enabled() && parents.iter().any(Var::requires_grad);
        if requires {
            Ok(Self::make(op, value, true, parents, Some(backward)))
        } else {
            Ok(Self::make(op, value, false, Vec::new(), None))
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Keeps this interior node's gradient after `backward`.
    pub fn retain_grad(&self) {
        self.0.retain.store(true, Ordering::Relaxed);
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    fn accumulate(&self, g: Tensor<T>) -> Result<()> {
        let mut slot = self.0.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(existing) => existing.add_assign(&g)?,
            None => *slot = Some(g),
        }
        Ok(())
    }

    /// Back-propagates from a single-element tensor. Leaf and retained
    /// gradients accumulate across calls.
    pub fn backward(&self) -> Result<()> {
        if self.0.value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut seen = HashSet::new();
        let mut order = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !seen.insert(v.id()) {
                continue;
            }
            for p in &v.0.parents {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push(p.clone());
                }
            }
            order.push(v);
        }
        order.sort_by(|a, b| b.id().cmp(&a.id()));

        let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
        pending.insert(self.id(), Tensor::full(self.shape(), T::one()));
        for node in &order {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            let Some(rule) = node.0.backward.as_ref() else {
                node.accumulate(g)?;
                continue;
            };
            if node.0.retain.load(Ordering::Relaxed) {
                node.accumulate(g.clone())?;
            }
            let grads = rule(&g, &node.0.parents)?;
            debug_assert_eq!(grads.len(), node.0.parents.len());
            for (parent, pg) in node.0.parents.iter().zip(grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                if pg.shape() != parent.shape() {
                    return Err(Error::shape(node.0.op, pg.shape(), parent.shape()));
                }
                match pending.get_mut(&parent.id()) {
                    Some(acc) => acc.add_assign(&pg)?,
                    None => {
                        pending.insert(parent.id(), pg);
                    }
                }
            }
        }
        Ok(())
    }
}

/// A scalar-valued function that can be evaluated at any precision; used by
/// the finite-difference checker to run a 64-bit shadow of the same code.
pub trait ScalarFn {
    fn eval<T: Scalar>(&self, x: &Var<T>) -> Result<Var<T>>;
}

/// `|analytic − numeric| / (|analytic| + 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn eval_scalar<F: ScalarFn>(f: &F, x: &Tensor<f64>) -> Result<f64> {
    let y = no_grad(|| f.eval(&Var::constant(x.clone())))?;
    if y.value().numel() != 1 {
        return Err(Error::arg("finite-difference target must be scalar"));
    }
    Ok(y.value().data()[0])
}

/// Compares the analytic gradient of `f` at `x` (computed in `T`) with
/// central differences computed on a 64-bit copy of `x`.
pub fn finite_difference_check<T: Scalar, F: ScalarFn>(
    f: &F,
    x: &Tensor<T>,
    h: f64,
) -> Result<FdReport> {
    if !(h > 0.0) {
        return Err(Error::arg("finite-difference step must be positive"));
    }
    let xv = Var::param(x.clone());
    let y = f.eval(&xv)?;
    y.backward()?;
    let analytic: Vec<f64> = match xv.grad() {
        Some(g) => g.data().iter().map(|v| v.as_f64()).collect(),
        None => vec![0.0; x.numel()],
    };

    let base = x.cast::<f64>();
    let a = eval_scalar(f, &base)?;
    let b = eval_scalar(f, &base)?;
    if a.to_bits() != b.to_bits() {
        return Err(Error::NonDeterministic);
    }

    let mut numeric = Vec::with_capacity(x.numel());
    let mut probe = base.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval_scalar(f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval_scalar(f, &probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * h));
    }

    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(FdReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Var::param(Tensor::<f32>::ones(&[2]));
        assert!(x.backward().is_err());
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Var::param(Tensor::<f32>::ones(&[2]));
        let y = no_grad(|| x.add(&x)).unwrap();
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Var::param(Tensor::<f32>::scalar(3.0));
        let loss = w.mul(&w).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap().data(), &[6.0]);
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap().data(), &[12.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn shared_subexpression_gets_both_contributions() {
        // y = (x + x) * x  => dy/dx = 4x
        let x = Var::param(Tensor::<f64>::scalar(1.5));
        let y = x.add(&x).unwrap().mul(&x).unwrap().sum().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[6.0]);
    }

    struct Identity;
    impl ScalarFn for Identity {
        fn eval<T: Scalar>(&self, x: &Var<T>) -> Result<Var<T>> {
            x.sum()
        }
    }

    #[test]
    fn identity_has_zero_fd_error() {
        let x = Tensor::<f32>::from_fn(&[5], |i| i as f32 * 0.25 - 0.5);
        let r = finite_difference_check(&Identity, &x, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-9, "{}", r.max_rel_error);
    }

    struct Flaky(std::sync::atomic::AtomicU32);
    impl ScalarFn for Flaky {
        fn eval<T: Scalar>(&self, x: &Var<T>) -> Result<Var<T>> {
            let k = self.0.fetch_add(1, Ordering::Relaxed);
            x.affine(T::one(), T::of(k as f64))?.sum()
        }
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let x = Tensor::<f64>::ones(&[2]);
        let err = finite_difference_check(&Flaky(Default::default()), &x, 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonDeterministic));
    }
}
