//! Strided 2-D cross-correlation and its adjoint, via im2col + GEMM.

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Spatial geometry of a convolution window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Window {
    fn of<T: Scalar>(weight: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let [_, _, kh, kw] = weight.nchw()?;
        if stride == 0 {
            return Err(Error::Config("convolution stride must be positive".into()));
        }
        Ok(Window { kh, kw, stride, pad })
    }

    /// Output extent of a forward convolution over `extent` input cells.
    fn conv_out(&self, extent: usize, k: usize, axis: &str) -> Result<usize> {
        let padded = extent + 2 * self.pad;
        if padded < k {
            return Err(Error::dim(format!("{axis} (window {k} larger than padded input)"), k, padded));
        }
        Ok((padded - k) / self.stride + 1)
    }

    /// Output extent of a transposed convolution over `extent` input cells.
    fn transpose_out(&self, extent: usize, k: usize, axis: &str) -> Result<usize> {
        let grown = (extent - 1) * self.stride + k;
        if grown <= 2 * self.pad {
            return Err(Error::dim(format!("{axis} (transposed output empty)"), 1, 0));
        }
        Ok(grown - 2 * self.pad)
    }
}

struct Plane {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

/// Output columns `lo..hi` whose input column `ox·stride + k − pad` lies inside `0..w`.
fn valid_span(ow: usize, w: usize, k: usize, win: Window) -> (usize, usize) {
    let lo = win.pad.saturating_sub(k).div_ceil(win.stride).min(ow);
    let hi = if w + win.pad <= k {
        0
    } else {
        (w + win.pad - k).div_ceil(win.stride).min(ow)
    };
    (lo, hi.max(lo))
}

/// Unfold one `c × h × w` image into a `(c·kh·kw) × (oh·ow)` column matrix.
fn im2col<T: Scalar>(img: &[T], p: &Plane, win: Window, cols: &mut [T]) {
    let spatial = p.oh * p.ow;
    for ch in 0..p.c {
        for ki in 0..win.kh {
            for kj in 0..win.kw {
                let row = (ch * win.kh + ki) * win.kw + kj;
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                let (lo, hi) = valid_span(p.ow, p.w, kj, win);
                for oy in 0..p.oh {
                    let iy = (oy * win.stride + ki) as isize - win.pad as isize;
                    let line = &mut dst[oy * p.ow..(oy + 1) * p.ow];
                    if iy < 0 || iy >= p.h as isize || lo == hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &img[(ch * p.h + iy as usize) * p.w..(ch * p.h + iy as usize + 1) * p.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let first = lo * win.stride + kj - win.pad;
                    if win.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, &s) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(win.stride)) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

/// [`im2col`] written spatial-major, `(oh·ow) × (c·kh·kw)`, so weight gradients can be
/// formed with both GEMM operands in their fast layout.
fn im2col_t<T: Scalar>(img: &[T], p: &Plane, win: Window, cols_t: &mut [T]) {
    let patch = p.c * win.kh * win.kw;
    for oy in 0..p.oh {
        for ox in 0..p.ow {
            let dst = &mut cols_t[(oy * p.ow + ox) * patch..(oy * p.ow + ox + 1) * patch];
            let x0 = (ox * win.stride) as isize - win.pad as isize;
            for ch in 0..p.c {
                for ki in 0..win.kh {
                    let iy = (oy * win.stride + ki) as isize - win.pad as isize;
                    let seg = &mut dst[(ch * win.kh + ki) * win.kw..(ch * win.kh + ki + 1) * win.kw];
                    if iy < 0 || iy >= p.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &img[(ch * p.h + iy as usize) * p.w..(ch * p.h + iy as usize + 1) * p.w];
                    for (kj, v) in seg.iter_mut().enumerate() {
                        let ix = x0 + kj as isize;
                        *v = if ix < 0 || ix >= p.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the image.
fn col2im<T: Scalar>(cols: &[T], p: &Plane, win: Window, img: &mut [T]) {
    let spatial = p.oh * p.ow;
    for ch in 0..p.c {
        for ki in 0..win.kh {
            for kj in 0..win.kw {
                let row = (ch * win.kh + ki) * win.kw + kj;
                let src = &cols[row * spatial..(row + 1) * spatial];
                let (lo, hi) = valid_span(p.ow, p.w, kj, win);
                if lo == hi {
                    continue;
                }
                for oy in 0..p.oh {
                    let iy = (oy * win.stride + ki) as isize - win.pad as isize;
                    if iy < 0 || iy >= p.h as isize {
                        continue;
                    }
                    let base = (ch * p.h + iy as usize) * p.w + lo * win.stride + kj - win.pad;
                    let dst = img[base..].iter_mut().step_by(win.stride);
                    for (d, &s) in dst.zip(&src[oy * p.ow + lo..oy * p.ow + hi]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

fn check_channels(axis: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::dim(axis, expected, actual));
    }
    Ok(())
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, k: usize) -> Result<()> {
    if let Some(b) = bias {
        check_channels("bias length", k, b.len())?;
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], bias: Option<&Tensor<T>>, spatial: usize) {
    if let Some(b) = bias {
        for (k, chunk) in out.chunks_mut(spatial).enumerate() {
            let bk = b.data()[k];
            chunk.iter_mut().for_each(|v| *v = *v + bk);
        }
    }
}

/// Gradients of a convolution-type layer.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn conv_geometry<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, win: Window) -> Result<([usize; 4], usize, Plane)> {
    let [n, c, h, w] = x.nchw()?;
    let [k, wc, kh, kw] = weight.nchw()?;
    check_channels("conv2d input channels", wc, c)?;
    debug_assert_eq!((kh, kw), (win.kh, win.kw));
    let oh = win.conv_out(h, kh, "conv2d height")?;
    let ow = win.conv_out(w, kw, "conv2d width")?;
    Ok(([n, c, h, w], k, Plane { c, h, w, oh, ow }))
}

/// Cross-correlation: `x [N,C,H,W]`, `weight [K,C,kh,kw]` → `[N,K,H',W']`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let win = Window::of(weight, stride, pad)?;
    let ([n, c, _, _], k, plane) = conv_geometry(x, weight, win)?;
    check_bias(bias, k)?;
    let patch = c * win.kh * win.kw;
    let spatial = plane.oh * plane.ow;
    let mut cols = vec![T::zero(); patch * spatial];
    let mut out = Tensor::zeros(&[n, k, plane.oh, plane.ow]);
    for i in 0..n {
        im2col(x.item(i), &plane, win, &mut cols);
        let dst = &mut out.data_mut()[i * k * spatial..(i + 1) * k * spatial];
        T::gemm(
            k,
            patch,
            spatial,
            weight.data(),
            (patch as isize, 1),
            &cols,
            (spatial as isize, 1),
            T::zero(),
            dst,
            (spatial as isize, 1),
        );
        add_bias(dst, bias, spatial);
    }
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>, stride: usize, pad: usize) -> Result<ConvGrads<T>> {
    let win = Window::of(weight, stride, pad)?;
    let ([n, c, h, w], k, plane) = conv_geometry(x, weight, win)?;
    let expected = [n, k, plane.oh, plane.ow];
    if grad_out.dims() != expected {
        return Err(Error::dim("conv2d grad_out length", expected.iter().product(), grad_out.len()));
    }
    let patch = c * win.kh * win.kw;
    let spatial = plane.oh * plane.ow;
    let mut cols_t = vec![T::zero(); patch * spatial];
    let mut dcols = vec![T::zero(); patch * spatial];
    let mut gx = Tensor::zeros(&[n, c, h, w]);
    let mut gw = Tensor::zeros(weight.dims());
    let mut gb = Tensor::zeros(&[k]);
    for i in 0..n {
        let go = grad_out.item(i);
        im2col_t(x.item(i), &plane, win, &mut cols_t);
        // dW += dOut · colsᵀ
        T::gemm(
            k,
            spatial,
            patch,
            go,
            (spatial as isize, 1),
            &cols_t,
            (patch as isize, 1),
            T::one(),
            gw.data_mut(),
            (patch as isize, 1),
        );
        // dcols = Wᵀ · dOut
        T::gemm(
            patch,
            k,
            spatial,
            weight.data(),
            (1, patch as isize),
            go,
            (spatial as isize, 1),
            T::zero(),
            &mut dcols,
            (spatial as isize, 1),
        );
        let img = &mut gx.data_mut()[i * c * h * w..(i + 1) * c * h * w];
        col2im(&dcols, &plane, win, img);
        for (kk, chunk) in go.chunks(spatial).enumerate() {
            gb.data_mut()[kk] = gb.data()[kk] + chunk.iter().copied().sum::<T>();
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

fn transpose_geometry<T: Scalar>(y: &Tensor<T>, weight: &Tensor<T>, win: Window) -> Result<([usize; 4], usize, Plane)> {
    let [n, cin, h, w] = y.nchw()?;
    let [wc, cout, kh, kw] = weight.nchw()?;
    check_channels("conv2d_transpose input channels", wc, cin)?;
    let oh = win.transpose_out(h, kh, "conv2d_transpose height")?;
    let ow = win.transpose_out(w, kw, "conv2d_transpose width")?;
    // The plane describes the forward convolution this layer is the adjoint of:
    // its "input" is our output grid and its output grid is our input grid.
    Ok((
        [n, cin, h, w],
        cout,
        Plane {
            c: cout,
            h: oh,
            w: ow,
            oh: h,
            ow: w,
        },
    ))
}

/// Transposed convolution: `y [N,Cin,H,W]`, `weight [Cin,Cout,kh,kw]` →
/// `[N,Cout,(H−1)·s−2p+kh,…]`. With zero bias it is the exact adjoint of [`conv2d`]
/// using the same weight tensor and window.
pub fn conv2d_transpose<T: Scalar>(y: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let win = Window::of(weight, stride, pad)?;
    let ([n, cin, h, w], cout, plane) = transpose_geometry(y, weight, win)?;
    check_bias(bias, cout)?;
    let patch = cout * win.kh * win.kw;
    let spatial = h * w;
    let out_spatial = plane.h * plane.w;
    let mut cols = vec![T::zero(); patch * spatial];
    let mut out = Tensor::zeros(&[n, cout, plane.h, plane.w]);
    for i in 0..n {
        // cols = Wᵀ · y  with W viewed as [Cin, Cout·kh·kw]
        T::gemm(
            patch,
            cin,
            spatial,
            weight.data(),
            (1, patch as isize),
            y.item(i),
            (spatial as isize, 1),
            T::zero(),
            &mut cols,
            (spatial as isize, 1),
        );
        let dst = &mut out.data_mut()[i * cout * out_spatial..(i + 1) * cout * out_spatial];
        col2im(&cols, &plane, win, dst);
        add_bias(dst, bias, out_spatial);
    }
    Ok(out)
}

pub fn conv2d_transpose_backward<T: Scalar>(y: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>, stride: usize, pad: usize) -> Result<ConvGrads<T>> {
    let win = Window::of(weight, stride, pad)?;
    let ([n, cin, h, w], cout, plane) = transpose_geometry(y, weight, win)?;
    let expected = [n, cout, plane.h, plane.w];
    if grad_out.dims() != expected {
        return Err(Error::dim("conv2d_transpose grad_out length", expected.iter().product(), grad_out.len()));
    }
    let patch = cout * win.kh * win.kw;
    let spatial = h * w;
    let out_spatial = plane.h * plane.w;
    let mut dcols_t = vec![T::zero(); patch * spatial];
    let mut gy = Tensor::zeros(&[n, cin, h, w]);
    let mut gw = Tensor::zeros(weight.dims());
    let mut gb = Tensor::zeros(&[cout]);
    for i in 0..n {
        let go = grad_out.item(i);
        im2col_t(go, &plane, win, &mut dcols_t);
        let yi = y.item(i);
        // dyᵀ = dcolsᵀ · Wᵀ
        let dst = &mut gy.data_mut()[i * cin * spatial..(i + 1) * cin * spatial];
        T::gemm(
            spatial,
            patch,
            cin,
            &dcols_t,
            (patch as isize, 1),
            weight.data(),
            (1, patch as isize),
            T::zero(),
            dst,
            (1, spatial as isize),
        );
        // dW += y · dcolsᵀ
        T::gemm(
            cin,
            spatial,
            patch,
            yi,
            (spatial as isize, 1),
            &dcols_t,
            (patch as isize, 1),
            T::one(),
            gw.data_mut(),
            (patch as isize, 1),
        );
        for (kk, chunk) in go.chunks(out_spatial).enumerate() {
            gb.data_mut()[kk] = gb.data()[kk] + chunk.iter().copied().sum::<T>();
        }
    }
    Ok(ConvGrads {
        input: gy,
        weight: gw,
        bias: gb,
    })
}
