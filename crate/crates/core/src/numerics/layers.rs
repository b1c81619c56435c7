//! Parameterized layers, a sequential container, and the forward tape used for backprop.

use crate::error::{Error, Result};

use super::batchnorm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BnCache};
use super::conv::{conv2d, conv2d_backward, conv2d_transpose, conv2d_transpose_backward};
use super::pool::{maxpool, maxpool_backward};
use super::{Param, Rng, Scalar, Tensor};

/// Standard deviation of the zero-mean normal used for conv and dense weights.
pub const INIT_STDEV: f64 = 0.02;

/// Whether a forward pass is training (batch statistics, dropout) or inference.
pub enum Phase<'a> {
    Train(&'a mut Rng),
    Eval,
}

impl Phase<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Phase::Train(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu(s) => {
                if v > 0.0 {
                    v
                } else {
                    s * v
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    /// Local derivative given the pre-activation `x` and the output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            // slope at exactly zero, by convention
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn activate<T: Scalar>(x: &Tensor<T>, act: Activation) -> Tensor<T> {
    x.map(|v| T::of(act.apply(v.as_f64())))
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        Conv2d {
            weight: Param::normal(format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel], INIT_STDEV, rng),
            bias: Param::constant(format!("{name}.bias"), &[out_ch], 0.0, true),
            stride,
            pad,
        }
    }
}

/// Weight layout `[in_channels, out_channels, kh, kw]`, the transpose of [`Conv2d`].
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        ConvTranspose2d {
            weight: Param::normal(format!("{name}.weight"), &[in_ch, out_ch, kernel, kernel], INIT_STDEV, rng),
            bias: Param::constant(format!("{name}.bias"), &[out_ch], 0.0, true),
            stride,
            pad,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNorm {
            gamma: Param::constant(format!("{name}.gamma"), &[channels], 1.0, true),
            beta: Param::constant(format!("{name}.beta"), &[channels], 0.0, true),
            running_mean: Param::constant(format!("{name}.running_mean"), &[channels], 0.0, false),
            running_var: Param::constant(format!("{name}.running_var"), &[channels], 1.0, false),
            eps,
            momentum,
        }
    }
}

/// Affine map `x [N,F] · W [F,G] + b [G]`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Dense {
            weight: Param::normal(format!("{name}.weight"), &[inputs, outputs], INIT_STDEV, rng),
            bias: Param::constant(format!("{name}.bias"), &[outputs], 0.0, true),
        }
    }
}

pub fn dense_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, f) = match x.dims() {
        &[n, f] => (n, f),
        d => return Err(Error::dim("dense input rank", 2, d.len())),
    };
    let &[wf, g] = weight.dims() else {
        return Err(Error::dim("dense weight rank", 2, weight.rank()));
    };
    if wf != f {
        return Err(Error::dim("dense input features", wf, f));
    }
    let mut out = Tensor::zeros(&[n, g]);
    if let Some(b) = bias {
        for row in out.data_mut().chunks_mut(g) {
            row.copy_from_slice(b.data());
        }
    }
    T::gemm(
        n,
        f,
        g,
        x.data(),
        (f as isize, 1),
        weight.data(),
        (g as isize, 1),
        T::one(),
        out.data_mut(),
        (g as isize, 1),
    );
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn dense_backward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, f) = (x.dims()[0], x.dims()[1]);
    let g = weight.dims()[1];
    if grad_out.dims() != [n, g] {
        return Err(Error::dim("dense grad_out length", n * g, grad_out.len()));
    }
    let mut gx = Tensor::zeros(&[n, f]);
    let mut gw = Tensor::zeros(&[f, g]);
    // dX = dY · Wᵀ ; dW = Xᵀ · dY
    T::gemm(
        n,
        g,
        f,
        grad_out.data(),
        (g as isize, 1),
        weight.data(),
        (1, g as isize),
        T::zero(),
        gx.data_mut(),
        (f as isize, 1),
    );
    T::gemm(
        f,
        n,
        g,
        x.data(),
        (1, f as isize),
        grad_out.data(),
        (g as isize, 1),
        T::zero(),
        gw.data_mut(),
        (g as isize, 1),
    );
    let mut gb = Tensor::zeros(&[g]);
    for row in grad_out.data().chunks(g) {
        for (b, &v) in gb.data_mut().iter_mut().zip(row) {
            *b = *b + v;
        }
    }
    Ok((gx, gw, gb))
}

/// Inverted dropout: survivors are scaled by `1/(1−p)` so inference is the identity.
/// Returns the output and the per-element multiplier (the mask).
pub fn dropout<T: Scalar>(x: &Tensor<T>, p: f64, phase: &mut Phase<'_>) -> (Tensor<T>, Option<Vec<T>>) {
    let rng = match phase {
        Phase::Train(rng) if p > 0.0 => rng,
        _ => return (x.clone(), None),
    };
    let keep = T::of(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len()).map(|_| if rng.next_f64() < p { T::zero() } else { keep }).collect();
    let mut out = x.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
        *v = *v * m;
    }
    (out, Some(mask))
}

/// Structural description of one layer, used for architecture assertions and reports.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Activation(Activation),
    Dropout {
        p: f64,
    },
    Flatten,
}

impl LayerKind {
    pub fn is_conv(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. })
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, LayerKind::Dense { .. })
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    ConvTranspose2d(ConvTranspose2d<T>),
    BatchNorm(BatchNorm<T>),
    Dense(Dense<T>),
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Activation(Activation),
    Dropout {
        p: f64,
    },
    /// `[N, ...] → [N, F]`
    Flatten,
}

/// Per-layer state saved by the forward pass.
#[derive(Debug)]
pub enum Cache<T> {
    Input(Tensor<T>),
    Norm(BnCache<T>),
    Pool { dims: Vec<usize>, argmax: Vec<usize> },
    Act { input: Tensor<T>, output: Tensor<T> },
    Mask(Option<Vec<T>>),
    Shape(Vec<usize>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(c) => {
                let d = c.weight.dims();
                LayerKind::Conv2d {
                    in_channels: d[1],
                    out_channels: d[0],
                    kernel: d[2],
                    stride: c.stride,
                    pad: c.pad,
                }
            }
            Layer::ConvTranspose2d(c) => {
                let d = c.weight.dims();
                LayerKind::ConvTranspose2d {
                    in_channels: d[0],
                    out_channels: d[1],
                    kernel: d[2],
                    stride: c.stride,
                    pad: c.pad,
                }
            }
            Layer::BatchNorm(b) => LayerKind::BatchNorm { channels: b.gamma.dims()[0] },
            Layer::Dense(d) => {
                let dims = d.weight.dims();
                LayerKind::Dense {
                    inputs: dims[0],
                    outputs: dims[1],
                }
            }
            &Layer::MaxPool { kernel, stride } => LayerKind::MaxPool { kernel, stride },
            &Layer::Activation(a) => LayerKind::Activation(a),
            &Layer::Dropout { p } => LayerKind::Dropout { p },
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    /// Every parameter handle, running statistics included.
    pub fn params(&self) -> Vec<Param<T>> {
        match self {
            Layer::Conv2d(c) => vec![c.weight.clone(), c.bias.clone()],
            Layer::ConvTranspose2d(c) => vec![c.weight.clone(), c.bias.clone()],
            Layer::BatchNorm(b) => vec![b.gamma.clone(), b.beta.clone(), b.running_mean.clone(), b.running_var.clone()],
            Layer::Dense(d) => vec![d.weight.clone(), d.bias.clone()],
            _ => Vec::new(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, phase: &mut Phase<'_>) -> Result<(Tensor<T>, Cache<T>)> {
        Ok(match self {
            Layer::Conv2d(c) => {
                let (w, b) = (c.weight.read(), c.bias.read());
                let y = conv2d(x, &w.value, Some(&b.value), c.stride, c.pad)?;
                (y, Cache::Input(x.clone()))
            }
            Layer::ConvTranspose2d(c) => {
                let (w, b) = (c.weight.read(), c.bias.read());
                let y = conv2d_transpose(x, &w.value, Some(&b.value), c.stride, c.pad)?;
                (y, Cache::Input(x.clone()))
            }
            Layer::BatchNorm(bn) => {
                let (gamma, beta) = (bn.gamma.read(), bn.beta.read());
                if phase.is_training() {
                    let (y, cache, stats) = batchnorm_train(x, gamma.value.data(), beta.value.data(), bn.eps)?;
                    let m = T::of(bn.momentum);
                    let keep = T::one() - m;
                    {
                        let mut rm = bn.running_mean.write();
                        for (r, &s) in rm.value.data_mut().iter_mut().zip(&stats.mean) {
                            *r = keep * *r + m * s;
                        }
                    }
                    let mut rv = bn.running_var.write();
                    for (r, &s) in rv.value.data_mut().iter_mut().zip(&stats.var_unbiased) {
                        *r = keep * *r + m * s;
                    }
                    (y, Cache::Norm(cache))
                } else {
                    let (rm, rv) = (bn.running_mean.read(), bn.running_var.read());
                    let (y, cache) = batchnorm_eval(x, gamma.value.data(), beta.value.data(), rm.value.data(), rv.value.data(), bn.eps)?;
                    (y, Cache::Norm(cache))
                }
            }
            Layer::Dense(d) => {
                let (w, b) = (d.weight.read(), d.bias.read());
                (dense_forward(x, &w.value, Some(&b.value))?, Cache::Input(x.clone()))
            }
            &Layer::MaxPool { kernel, stride } => {
                let pooled = maxpool(x, kernel, stride)?;
                (
                    pooled.output,
                    Cache::Pool {
                        dims: x.dims().to_vec(),
                        argmax: pooled.argmax,
                    },
                )
            }
            &Layer::Activation(act) => {
                let y = activate(x, act);
                (y.clone(), Cache::Act { input: x.clone(), output: y })
            }
            &Layer::Dropout { p } => {
                let (y, mask) = dropout(x, p, phase);
                (y, Cache::Mask(mask))
            }
            Layer::Flatten => {
                let n = x.dims()[0];
                let f = x.len() / n;
                (x.clone().reshape(&[n, f])?, Cache::Shape(x.dims().to_vec()))
            }
        })
    }

    /// Backpropagate `grad` through this layer, accumulating parameter gradients.
    pub fn backward(&self, cache: Cache<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        match (self, cache) {
            (Layer::Conv2d(c), Cache::Input(x)) => {
                let g = conv2d_backward(&x, &c.weight.read().value, grad, c.stride, c.pad)?;
                c.weight.write().grad.add_assign(&g.weight);
                c.bias.write().grad.add_assign(&g.bias);
                Ok(g.input)
            }
            (Layer::ConvTranspose2d(c), Cache::Input(x)) => {
                let g = conv2d_transpose_backward(&x, &c.weight.read().value, grad, c.stride, c.pad)?;
                c.weight.write().grad.add_assign(&g.weight);
                c.bias.write().grad.add_assign(&g.bias);
                Ok(g.input)
            }
            (Layer::BatchNorm(bn), Cache::Norm(cache)) => {
                let (gx, dgamma, dbeta) = batchnorm_backward(&cache, bn.gamma.read().value.data(), grad)?;
                for (g, d) in bn.gamma.write().grad.data_mut().iter_mut().zip(dgamma) {
                    *g = *g + d;
                }
                for (g, d) in bn.beta.write().grad.data_mut().iter_mut().zip(dbeta) {
                    *g = *g + d;
                }
                Ok(gx)
            }
            (Layer::Dense(d), Cache::Input(x)) => {
                let (gx, gw, gb) = dense_backward(&x, &d.weight.read().value, grad)?;
                d.weight.write().grad.add_assign(&gw);
                d.bias.write().grad.add_assign(&gb);
                Ok(gx)
            }
            (Layer::MaxPool { .. }, Cache::Pool { dims, argmax }) => maxpool_backward(&dims, &argmax, grad),
            (&Layer::Activation(act), Cache::Act { input, output }) => {
                let mut gx = grad.clone();
                for ((g, &x), &y) in gx.data_mut().iter_mut().zip(input.data()).zip(output.data()) {
                    *g = *g * T::of(act.derivative(x.as_f64(), y.as_f64()));
                }
                Ok(gx)
            }
            (Layer::Dropout { .. }, Cache::Mask(mask)) => {
                let mut gx = grad.clone();
                if let Some(mask) = mask {
                    for (g, m) in gx.data_mut().iter_mut().zip(mask) {
                        *g = *g * m;
                    }
                }
                Ok(gx)
            }
            (Layer::Flatten, Cache::Shape(dims)) => grad.clone().reshape(&dims),
            (layer, _) => Err(Error::Config(format!("tape does not match layer {:?}", layer.kind()))),
        }
    }
}

/// Caches recorded by one [`Sequential::forward`] call, in layer order.
#[derive(Debug, Default)]
pub struct Tape<T>(Vec<Cache<T>>);

#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&self, x: &Tensor<T>, phase: &mut Phase<'_>) -> Result<(Tensor<T>, Tape<T>)> {
        let mut tape = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&cur, phase)?;
            tape.push(cache);
            cur = y;
        }
        Ok((cur, Tape(tape)))
    }

    pub fn backward(&self, tape: Tape<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for (layer, cache) in self.layers.iter().zip(tape.0).rev() {
            g = layer.backward(cache, &g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<Param<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_activation_values() {
        assert!((Activation::LeakyRelu(0.2).apply(-2.0) + 0.4).abs() < 1e-15);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu.apply(7.0), 7.0);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::LeakyRelu(0.2).derivative(0.0, 0.0), 0.2);
    }

    #[test]
    fn dense_reference_cases() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        assert_eq!(dense_forward(&x, &w, Some(&b)).unwrap().data(), &[6.0]);

        let eye = Tensor::<f64>::from_fn(&[2, 2], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        assert_eq!(dense_forward(&x, &eye, None).unwrap(), x);
    }

    #[test]
    fn dense_matches_double_loop() {
        let mut rng = Rng::new(4);
        let x = Tensor::<f64>::from_fn(&[5, 7], |_| rng.normal());
        let w = Tensor::<f64>::from_fn(&[7, 3], |_| rng.normal());
        let y = dense_forward(&x, &w, None).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let want: f64 = (0..7).map(|k| x.data()[i * 7 + k] * w.data()[k * 3 + j]).sum();
                assert!((y.data()[i * 3 + j] - want).abs() < 1e-12);
            }
        }
        assert!(matches!(dense_forward(&Tensor::<f64>::zeros(&[2, 6]), &w, None), Err(Error::Dimension { .. })));
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::<f32>::from_fn(&[3, 4], |i| i as f32);
        let mut rng = Rng::new(1);
        assert_eq!(dropout(&x, 0.0, &mut Phase::Train(&mut rng)).0, x);
        assert_eq!(dropout(&x, 0.7, &mut Phase::Eval).0, x);
    }

    #[test]
    fn dropout_preserves_mean_in_expectation() {
        let x = Tensor::<f64>::full(&[100_000], 1.0);
        let mut rng = Rng::new(2);
        let (y, mask) = dropout(&x, 0.5, &mut Phase::Train(&mut rng));
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(mask.unwrap().iter().all(|&m| m == 0.0 || m == 2.0));
    }

    #[test]
    fn dropout_mask_is_seed_determined() {
        let x = Tensor::<f32>::full(&[64], 1.0);
        let a = dropout(&x, 0.5, &mut Phase::Train(&mut Rng::new(9))).0;
        let b = dropout(&x, 0.5, &mut Phase::Train(&mut Rng::new(9))).0;
        assert_eq!(a, b);
    }
}
