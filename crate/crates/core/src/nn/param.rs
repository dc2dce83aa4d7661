use std::sync::{Mutex, RwLock};

use crate::autodiff::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A trainable tensor owned by a layer. The optimizer swaps in a fresh leaf
/// after each step; forward passes take a cheap handle to the current one.
#[derive(Debug)]
pub struct Param<T: Scalar>(RwLock<Var<T>>);

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Param(RwLock::new(Var::param(value)))
    }

    pub fn var(&self) -> Var<T> {
        self.0.read().expect("param lock").clone()
    }

    pub fn value(&self) -> Tensor<T> {
        self.var().value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.var().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.var().value().numel()
    }

    pub fn set(&self, value: Tensor<T>) {
        *self.0.write().expect("param lock") = Var::param(value);
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.var().grad()
    }

    pub fn zero_grad(&self) {
        self.var().zero_grad();
    }
}

/// Non-trainable state such as batch-norm running statistics.
#[derive(Debug)]
pub struct Buffer<T: Scalar>(Mutex<Tensor<T>>);

impl<T: Scalar> Buffer<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Buffer(Mutex::new(value))
    }

    pub fn get(&self) -> Tensor<T> {
        self.0.lock().expect("buffer lock").clone()
    }

    pub fn set(&self, value: Tensor<T>) {
        *self.0.lock().expect("buffer lock") = value;
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.lock().expect("buffer lock").shape().to_vec()
    }
}

/// A named tensor reached while walking a module tree.
pub enum Slot<'a, T: Scalar> {
    Param(&'a Param<T>),
    Buffer(&'a Buffer<T>),
}

/// Anything that owns parameters or buffers.
pub trait Module<T: Scalar> {
    /// Visits every tensor in a fixed order, naming each `prefix.local`.
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'a, T>));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Sum of trainable element counts (buffers excluded).
pub fn count_parameters<T: Scalar, M: Module<T> + ?Sized>(m: &M) -> usize {
    let mut total = 0;
    m.visit("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            total += p.numel();
        }
    });
    total
}

/// All trainable parameters in visit order.
pub fn parameters<T: Scalar, M: Module<T> + ?Sized>(m: &M) -> Vec<(String, &Param<T>)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, slot| {
        if let Slot::Param(p) = slot {
            out.push((name.to_string(), p));
        }
    });
    out
}

pub fn zero_grads<T: Scalar, M: Module<T> + ?Sized>(m: &M) {
    m.visit("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            p.zero_grad();
        }
    });
}
