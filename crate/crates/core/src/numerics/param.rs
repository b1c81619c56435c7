use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use super::{Rng, Scalar, Tensor};

#[derive(Debug)]
pub struct ParamData<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub velocity: Tensor<T>,
    /// Running statistics are stored as non-trainable parameters.
    pub trainable: bool,
}

/// Shared handle to one named parameter tensor with its gradient and momentum buffer.
///
/// `Clone` copies the handle, not the data: two layers holding clones of one `Param`
/// share weights. This is how the shared convolutional trunk is wired.
#[derive(Debug, Clone)]
pub struct Param<T>(Arc<RwLock<ParamData<T>>>);

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.dims());
        let velocity = Tensor::zeros(value.dims());
        Param(Arc::new(RwLock::new(ParamData {
            name: name.into(),
            value,
            grad,
            velocity,
            trainable,
        })))
    }

    /// Zero-mean normal initialization with the given standard deviation.
    pub fn normal(name: impl Into<String>, dims: &[usize], stdev: f64, rng: &mut Rng) -> Self {
        let value = Tensor::from_fn(dims, |_| T::of(rng.normal() * stdev));
        Self::new(name, value, true)
    }

    pub fn constant(name: impl Into<String>, dims: &[usize], v: f64, trainable: bool) -> Self {
        Self::new(name, Tensor::full(dims, T::of(v)), trainable)
    }

    pub fn read(&self) -> RwLockReadGuard<'_, ParamData<T>> {
        self.0.read().expect("parameter lock poisoned")
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, ParamData<T>> {
        self.0.write().expect("parameter lock poisoned")
    }

    pub fn name(&self) -> String {
        self.read().name.clone()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.read().value.dims().to_vec()
    }

    pub fn value(&self) -> Tensor<T> {
        self.read().value.clone()
    }

    pub fn checksum(&self) -> u64 {
        self.read().value.checksum()
    }

    pub fn same_storage(&self, other: &Param<T>) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub fn zero_grad(&self) {
        self.write().grad.fill(T::zero());
    }
}

/// Drop duplicate handles (shared weights) while keeping first-seen order.
pub fn dedup_params<T: Scalar>(params: Vec<Param<T>>) -> Vec<Param<T>> {
    let mut out: Vec<Param<T>> = Vec::with_capacity(params.len());
    for p in params {
        if !out.iter().any(|q| q.same_storage(&p)) {
            out.push(p);
        }
    }
    out
}
