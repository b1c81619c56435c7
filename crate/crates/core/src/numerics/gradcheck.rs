//! Central finite-difference verification of analytic gradients, in double precision.

use crate::error::Result;

use super::layers::{Activation, BatchNorm, Conv2d, ConvTranspose2d, Dense, Layer, Phase, Sequential};
use super::loss::{bce, softmax_xent};
use super::{Rng, Tensor};

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < self.tolerance
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Check input and parameter gradients of `fragment` under the scalar loss
/// `L = Σ output ⊙ R` for a fixed random projection `R`.
///
/// In training mode every forward pass reuses the same dropout seed, so the mask is
/// identical across perturbations.
pub fn gradient_check(name: &str, fragment: &Sequential<f64>, input: &Tensor<f64>, tolerance: f64, training: bool) -> Result<GradCheckReport> {
    const MASK_SEED: u64 = 0xD20;
    let run = |x: &Tensor<f64>| -> Result<(Tensor<f64>, super::layers::Tape<f64>)> {
        let mut rng = Rng::new(MASK_SEED);
        let mut phase = if training { Phase::Train(&mut rng) } else { Phase::Eval };
        fragment.forward(x, &mut phase)
    };
    let (out, tape) = run(input)?;
    let mut proj_rng = Rng::new(0x5EED);
    let projection = Tensor::from_fn(out.dims(), |_| proj_rng.normal());
    let loss = |x: &Tensor<f64>| -> Result<f64> { Ok(run(x)?.0.dot(&projection)) };

    let params = fragment.params();
    for p in &params {
        p.zero_grad();
    }
    let grad_input = fragment.backward(tape, &projection)?;

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + STEP;
        let up = loss(&x)?;
        x.data_mut()[i] = orig - STEP;
        let down = loss(&x)?;
        x.data_mut()[i] = orig;
        worst = worst.max(rel_error(grad_input.data()[i], (up - down) / (2.0 * STEP)));
        checked += 1;
    }
    for p in params.iter().filter(|p| p.read().trainable) {
        let analytic = p.read().grad.clone();
        for i in 0..analytic.len() {
            let orig = p.read().value.data()[i];
            p.write().value.data_mut()[i] = orig + STEP;
            let up = loss(input)?;
            p.write().value.data_mut()[i] = orig - STEP;
            let down = loss(input)?;
            p.write().value.data_mut()[i] = orig;
            worst = worst.max(rel_error(analytic.data()[i], (up - down) / (2.0 * STEP)));
            checked += 1;
        }
        p.zero_grad();
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: worst,
        checked,
        tolerance,
    })
}

/// Check a loss function's gradient with respect to its input tensor.
pub fn loss_check(name: &str, input: &Tensor<f64>, tolerance: f64, f: impl Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>) -> Result<GradCheckReport> {
    let (_, grad) = f(input)?;
    let mut worst: f64 = 0.0;
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + STEP;
        let up = f(&x)?.0;
        x.data_mut()[i] = orig - STEP;
        let down = f(&x)?.0;
        x.data_mut()[i] = orig;
        worst = worst.max(rel_error(grad.data()[i], (up - down) / (2.0 * STEP)));
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: worst,
        checked: x.len(),
        tolerance,
    })
}

/// Normal draws pushed at least `margin` away from zero, so piecewise-linear
/// activations are never probed across their kink.
fn away_from_zero(dims: &[usize], margin: f64, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| {
        let v = rng.normal();
        v + margin * v.signum()
    })
}

/// Distinct, well-separated values so pooling windows have no near-ties.
fn separated(dims: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let len: usize = dims.iter().product();
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    Tensor::from_fn(dims, |i| order[i] as f64 * 0.1 - len as f64 * 0.05)
}

/// Every layer kind the networks use, at the tolerances the build is held to.
pub fn standard_suite() -> Result<Vec<GradCheckReport>> {
    const TOL: f64 = 1e-4;
    const BN_TOL: f64 = 1e-3;
    let mut rng = Rng::new(2024);
    let mut reports = Vec::new();

    let dense = Sequential::new(vec![Layer::Dense(Dense::new("dense", 6, 5, &mut rng))]);
    scale_params(&dense, 25.0);
    reports.push(gradient_check("dense", &dense, &away_from_zero(&[4, 6], 0.0, &mut rng), TOL, false)?);

    let conv = Sequential::new(vec![Layer::Conv2d(Conv2d::new("conv", 3, 4, 3, 2, 1, &mut rng))]);
    scale_params(&conv, 25.0);
    reports.push(gradient_check("conv2d", &conv, &away_from_zero(&[2, 3, 7, 7], 0.0, &mut rng), TOL, false)?);

    let conv_lrelu = Sequential::new(vec![
        Layer::Conv2d(Conv2d::new("conv", 2, 3, 3, 1, 1, &mut rng)),
        Layer::Activation(Activation::LeakyRelu(0.2)),
    ]);
    scale_params(&conv_lrelu, 25.0);
    reports.push(gradient_check(
        "conv2d+leaky_relu",
        &conv_lrelu,
        &away_from_zero(&[2, 2, 5, 5], 0.0, &mut rng),
        TOL,
        false,
    )?);

    let tconv = Sequential::new(vec![Layer::ConvTranspose2d(ConvTranspose2d::new("tconv", 3, 2, 4, 2, 1, &mut rng))]);
    scale_params(&tconv, 25.0);
    reports.push(gradient_check(
        "conv2d_transpose",
        &tconv,
        &away_from_zero(&[2, 3, 4, 4], 0.0, &mut rng),
        TOL,
        false,
    )?);

    let pool = Sequential::new(vec![Layer::MaxPool { kernel: 3, stride: 2 }]);
    reports.push(gradient_check("maxpool", &pool, &separated(&[2, 2, 7, 7], &mut rng), TOL, false)?);

    let bn = BatchNorm::new("bn", 3, 1e-5, 0.1);
    for (i, v) in bn.gamma.write().value.data_mut().iter_mut().enumerate() {
        *v = 0.5 + i as f64;
    }
    bn.beta.write().value.data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
    let bn_train = Sequential::new(vec![Layer::BatchNorm(bn.clone())]);
    reports.push(gradient_check(
        "batchnorm(train)",
        &bn_train,
        &away_from_zero(&[8, 3, 2, 2], 0.0, &mut rng),
        BN_TOL,
        true,
    )?);
    bn.running_mean.write().value.data_mut().copy_from_slice(&[0.2, -0.1, 0.0]);
    bn.running_var.write().value.data_mut().copy_from_slice(&[1.5, 0.7, 2.0]);
    reports.push(gradient_check(
        "batchnorm(eval)",
        &bn_train,
        &away_from_zero(&[4, 3, 2, 2], 0.0, &mut rng),
        BN_TOL,
        false,
    )?);

    let drop0 = Sequential::new(vec![Layer::Dropout { p: 0.0 }]);
    reports.push(gradient_check("dropout(p=0)", &drop0, &away_from_zero(&[4, 5], 0.0, &mut rng), TOL, true)?);
    let drop_half = Sequential::new(vec![Layer::Dropout { p: 0.5 }]);
    reports.push(gradient_check(
        "dropout(p=0.5, fixed mask)",
        &drop_half,
        &away_from_zero(&[4, 5], 0.0, &mut rng),
        TOL,
        true,
    )?);

    for (name, act, margin) in [
        ("leaky_relu", Activation::LeakyRelu(0.2), 0.05),
        ("relu", Activation::Relu, 0.05),
        ("tanh", Activation::Tanh, 0.0),
        ("sigmoid", Activation::Sigmoid, 0.0),
    ] {
        let seq = Sequential::new(vec![Layer::Activation(act)]);
        reports.push(gradient_check(name, &seq, &away_from_zero(&[3, 7], margin, &mut rng), TOL, false)?);
    }

    let logits = away_from_zero(&[5, 3], 0.0, &mut rng);
    let labels = [0usize, 2, 1, 1, 0];
    reports.push(loss_check("softmax_xent", &logits, TOL, |x| softmax_xent(x, &labels))?);

    let probs = Tensor::from_fn(&[6], |_| 0.1 + 0.8 * rng.next_f64());
    reports.push(loss_check("bce(target=1)", &probs, TOL, |x| Ok(bce(x, 1.0)))?);
    reports.push(loss_check("bce(target=0)", &probs, TOL, |x| Ok(bce(x, 0.0)))?);

    Ok(reports)
}

/// Inflate the 0.02-stdev initial weights so gradients are far above the error floor.
fn scale_params(seq: &Sequential<f64>, factor: f64) {
    for p in seq.params() {
        for v in p.write().value.data_mut() {
            *v *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_suite_passes() {
        for r in standard_suite().unwrap() {
            assert!(r.passed(), "{} max rel err {:.3e}", r.name, r.max_rel_error);
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::from_vec(&[3], vec![0.3, -0.4, 1.2]).unwrap();
        let r = loss_check("broken", &x, 1e-4, |t| {
            let loss = t.data().iter().map(|v| v * v).sum::<f64>();
            Ok((loss, t.map(|v| 3.0 * v)))
        })
        .unwrap();
        assert!(!r.passed());
    }
}
