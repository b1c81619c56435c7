//! Per-channel batch normalization over every axis except axis 1.

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Saved state needed by [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub training: bool,
}

pub struct BnStats<T> {
    pub mean: Vec<T>,
    /// Unbiased batch variance, the quantity folded into the running estimate.
    pub var_unbiased: Vec<T>,
}

fn layout(dims: &[usize]) -> Result<(usize, usize, usize)> {
    if dims.len() < 2 {
        return Err(Error::dim("batchnorm rank", 2, dims.len()));
    }
    Ok((dims[0], dims[1], dims[2..].iter().product()))
}

/// Visit every element of channel `ch` in an `[n, c, inner]` layout.
fn channel_indices(n: usize, c: usize, inner: usize, ch: usize) -> impl Iterator<Item = usize> {
    (0..n).flat_map(move |i| {
        let base = (i * c + ch) * inner;
        base..base + inner
    })
}

/// Training-mode forward: batch statistics, returns output, cache and the statistics.
pub fn batchnorm_train<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T], eps: f64) -> Result<(Tensor<T>, BnCache<T>, BnStats<T>)> {
    let (n, c, inner) = layout(x.dims())?;
    if gamma.len() != c {
        return Err(Error::dim("batchnorm channels", gamma.len(), c));
    }
    let m = n * inner;
    if m < 2 {
        return Err(Error::DegenerateBatch { channel: 0, count: m });
    }
    let mf = T::of(m as f64);
    let mut out = Tensor::zeros(x.dims());
    let mut normalized = Tensor::zeros(x.dims());
    let mut inv_std = vec![T::zero(); c];
    let mut stats = BnStats {
        mean: vec![T::zero(); c],
        var_unbiased: vec![T::zero(); c],
    };
    let src = x.data();
    for ch in 0..c {
        let mean = channel_indices(n, c, inner, ch).map(|i| src[i]).sum::<T>() / mf;
        let var = channel_indices(n, c, inner, ch).map(|i| (src[i] - mean) * (src[i] - mean)).sum::<T>() / mf;
        let is = T::one() / (var + T::of(eps)).sqrt();
        for i in channel_indices(n, c, inner, ch) {
            let xh = (src[i] - mean) * is;
            normalized.data_mut()[i] = xh;
            out.data_mut()[i] = gamma[ch] * xh + beta[ch];
        }
        inv_std[ch] = is;
        stats.mean[ch] = mean;
        stats.var_unbiased[ch] = var * mf / T::of((m - 1) as f64);
    }
    Ok((
        out,
        BnCache {
            normalized,
            inv_std,
            training: true,
        },
        stats,
    ))
}

/// Inference-mode forward with fixed running statistics.
pub fn batchnorm_eval<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T], running_mean: &[T], running_var: &[T], eps: f64) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, c, inner) = layout(x.dims())?;
    if gamma.len() != c {
        return Err(Error::dim("batchnorm channels", gamma.len(), c));
    }
    let mut out = Tensor::zeros(x.dims());
    let mut normalized = Tensor::zeros(x.dims());
    let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
    let src = x.data();
    for ch in 0..c {
        for i in channel_indices(n, c, inner, ch) {
            let xh = (src[i] - running_mean[ch]) * inv_std[ch];
            normalized.data_mut()[i] = xh;
            out.data_mut()[i] = gamma[ch] * xh + beta[ch];
        }
    }
    Ok((
        out,
        BnCache {
            normalized,
            inv_std,
            training: false,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<T: Scalar>(cache: &BnCache<T>, gamma: &[T], grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (n, c, inner) = layout(grad_out.dims())?;
    if grad_out.len() != cache.normalized.len() {
        return Err(Error::dim("batchnorm grad_out length", cache.normalized.len(), grad_out.len()));
    }
    let m = T::of((n * inner) as f64);
    let g = grad_out.data();
    let xh = cache.normalized.data();
    let mut gx = Tensor::zeros(grad_out.dims());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for i in channel_indices(n, c, inner, ch) {
            sum_g = sum_g + g[i];
            sum_gx = sum_gx + g[i] * xh[i];
        }
        dgamma[ch] = sum_gx;
        dbeta[ch] = sum_g;
        let scale = gamma[ch] * cache.inv_std[ch];
        for i in channel_indices(n, c, inner, ch) {
            gx.data_mut()[i] = if cache.training {
                scale * (g[i] - sum_g / m - xh[i] * sum_gx / m)
            } else {
                scale * g[i]
            };
        }
    }
    Ok((gx, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn two_point_batch_maps_to_plus_minus_one() {
        let x = Tensor::<f64>::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        let (y, _, _) = batchnorm_train(&x, &[1.0], &[0.0], 1e-5).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-5);
        assert!((y.data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn affine_contract_and_moments() {
        let mut rng = Rng::new(11);
        let x = Tensor::<f64>::from_fn(&[8, 3, 4, 4], |_| rng.normal() * 3.0 + 1.5);
        let (y, cache, _) = batchnorm_train(&x, &[2.0, 2.0, 2.0], &[5.0, 5.0, 5.0], 1e-5).unwrap();
        let xh = cache.normalized.data();
        for ch in 0..3 {
            let idx: Vec<usize> = channel_indices(8, 3, 16, ch).collect();
            let m = idx.len() as f64;
            let mean_n = idx.iter().map(|&i| xh[i]).sum::<f64>() / m;
            let var_n = idx.iter().map(|&i| (xh[i] - mean_n).powi(2)).sum::<f64>() / m;
            assert!(mean_n.abs() < 1e-6);
            assert!((var_n - 1.0).abs() < 1e-4);
            let mean_y = idx.iter().map(|&i| y.data()[i]).sum::<f64>() / m;
            let sd_y = (idx.iter().map(|&i| (y.data()[i] - mean_y).powi(2)).sum::<f64>() / m).sqrt();
            assert!((mean_y - 5.0).abs() < 1e-6);
            assert!((sd_y - 2.0).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_channel_stays_finite() {
        let x = Tensor::<f32>::full(&[4, 2, 3, 3], 7.0);
        let (y, _, _) = batchnorm_train(&x, &[3.0, 3.0], &[0.5, -0.5], 1e-5).unwrap();
        assert!(y.all_finite());
        assert!(y.data()[..9].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_element_channel_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        assert!(matches!(batchnorm_train(&x, &[1.0; 2], &[0.0; 2], 1e-5), Err(Error::DegenerateBatch { .. })));
    }
}
