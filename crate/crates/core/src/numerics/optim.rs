use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{dedup_params, Param, Scalar};

/// Training hyperparameters shared by every loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub leaky_slope: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    /// Weight of the generator's L1 reconstruction term; 0 trains purely adversarially.
    pub l1_weight: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            dropout_p: 0.5,
            leaky_slope: 0.2,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
            l1_weight: 10.0,
            epochs: 25,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail("dropout_p must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be positive");
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail("bn_epsilon must be positive and bn_momentum in [0, 1]");
        }
        if !(self.l1_weight >= 0.0) || !self.leaky_slope.is_finite() {
            return fail("l1_weight must be nonnegative");
        }
        Ok(())
    }

    pub fn sgd(&self) -> Sgd {
        Sgd {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
        }
    }
}

/// Stochastic gradient descent with a velocity buffer:
/// `v ← μ·v − η·g`, `p ← p + v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Sgd {
    /// Apply one update to every trainable parameter, then clear gradients.
    ///
    /// All gradients are screened before anything is written, so a non-finite
    /// gradient leaves every parameter untouched.
    pub fn step<T: Scalar>(&self, params: &[Param<T>]) -> Result<()> {
        let params = dedup_params(params.to_vec());
        for p in &params {
            let data = p.read();
            if data.trainable && !data.grad.all_finite() {
                return Err(Error::PoisonedGradient { name: data.name.clone() });
            }
        }
        let mu = T::of(self.momentum);
        let lr = T::of(self.learning_rate);
        for p in &params {
            let mut guard = p.write();
            if !guard.trainable {
                continue;
            }
            let data = &mut *guard;
            for ((w, v), &g) in data.value.data_mut().iter_mut().zip(data.velocity.data_mut()).zip(data.grad.data()) {
                *v = mu * *v - lr * g;
                *w = *w + *v;
            }
            data.grad.fill(T::zero());
        }
        Ok(())
    }
}

pub fn zero_grads<T: Scalar>(params: &[Param<T>]) {
    for p in params {
        p.zero_grad();
    }
}
