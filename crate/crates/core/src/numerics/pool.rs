use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Max pooling output plus the flat input index that won each window.
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

pub fn maxpool<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<Pooled<T>> {
    let [n, c, h, w] = x.nchw()?;
    if h < kernel {
        return Err(Error::dim("maxpool height (window larger than input)", kernel, h));
    }
    if w < kernel {
        return Err(Error::dim("maxpool width (window larger than input)", kernel, w));
    }
    if stride == 0 {
        return Err(Error::Config("maxpool stride must be positive".into()));
    }
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let src = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        // strict comparison: the first maximum in row-major order wins ties
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                out.data_mut()[argmax.len()] = src[best];
                argmax.push(best);
            }
        }
    }
    Ok(Pooled { output: out, argmax })
}

pub fn maxpool_backward<T: Scalar>(input_dims: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::dim("maxpool grad_out length", argmax.len(), grad_out.len()));
    }
    let mut gx = Tensor::zeros(input_dims);
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gx.data_mut()[idx] = gx.data()[idx] + g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_max_of_three_by_three() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 3, 3], |i| (i + 1) as f32);
        let p = maxpool(&x, 3, 2).unwrap();
        assert_eq!(p.output.data(), &[9.0]);
    }

    #[test]
    fn five_by_five_counting_windows() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 5, 5], |i| i as f32);
        let p = maxpool(&x, 3, 2).unwrap();
        assert_eq!(p.output.dims(), &[1, 1, 2, 2]);
        assert_eq!(p.output.data(), &[12.0, 14.0, 22.0, 24.0]);
    }

    #[test]
    fn constant_input_routes_gradient_to_first_index() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 4.0);
        let p = maxpool(&x, 3, 2).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        let g = maxpool_backward(x.dims(), &p.argmax, &Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(g.data()[0], 1.0);
        assert!(g.data()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_larger_than_input() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(matches!(maxpool(&x, 3, 2), Err(Error::Dimension { .. })));
    }
}
