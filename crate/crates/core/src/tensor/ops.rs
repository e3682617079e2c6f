//! Forward and backward kernels on batched NHWC tensors.
//!
//! Every kernel takes a leading batch axis. Convolution is "valid" (no
//! padding) and max pooling drops trailing remainder rows/columns.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dims4(t: &Tensor<impl Scalar>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [b, h, w, c] => Ok((b, h, w, c)),
        _ => Err(Error::Shape {
            op,
            left: t.shape().to_vec(),
            right: vec![0, 0, 0, 0],
        }),
    }
}

/// Unfolded convolution input: one row per output position.
#[derive(Clone, Debug)]
pub struct ConvCols<T> {
    pub(crate) cols: Vec<T>,
    pub(crate) input_shape: [usize; 4],
}

/// Valid 2-D convolution of `input [B,H,W,Cin]` with `kernel [kh,kw,Cin,Cout]`.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    conv2d_forward_cols(input, kernel, bias).map(|(y, _)| y)
}

pub(crate) fn conv2d_forward_cols<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, ConvCols<T>)> {
    let (b, h, w, c) = dims4(input, "conv2d input")?;
    let (kh, kw, kc, co) = dims4(kernel, "conv2d kernel")?;
    if kc != c || kh > h || kw > w {
        return Err(Error::Shape {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: kernel.shape().to_vec(),
        });
    }
    bias.expect_shape("conv2d bias", &[co])?;
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let k = kh * kw * c;
    let rows = b * oh * ow;
    let run = kw * c;
    let x = input.data();
    let mut cols = vec![T::zero(); rows * k];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (bi * oh + oy) * ow + ox;
                let dst = &mut cols[row * k..(row + 1) * k];
                for ky in 0..kh {
                    let src = ((bi * h + oy + ky) * w + ox) * c;
                    dst[ky * run..(ky + 1) * run].copy_from_slice(&x[src..src + run]);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(rows * co);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        rows,
        k,
        co,
        T::one(),
        &cols,
        (k as isize, 1),
        kernel.data(),
        (co as isize, 1),
        T::one(),
        &mut out,
        (co as isize, 1),
    );
    Ok((
        Tensor::new(vec![b, oh, ow, co], out)?,
        ConvCols {
            cols,
            input_shape: [b, h, w, c],
        },
    ))
}

/// Returns `(d_input, d_kernel, d_bias)`.
pub(crate) fn conv2d_backward<T: Scalar>(
    cache: &ConvCols<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let [b, h, w, c] = cache.input_shape;
    let (kh, kw, _, co) = dims4(kernel, "conv2d kernel")?;
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    grad_out.expect_shape("conv2d grad", &[b, oh, ow, co])?;
    let k = kh * kw * c;
    let rows = b * oh * ow;
    let dy = grad_out.data();

    let mut dk = vec![T::zero(); k * co];
    T::gemm(
        k,
        rows,
        co,
        T::one(),
        &cache.cols,
        (1, k as isize),
        dy,
        (co as isize, 1),
        T::zero(),
        &mut dk,
        (co as isize, 1),
    );
    let mut db = vec![T::zero(); co];
    for row in dy.chunks_exact(co) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += *v;
        }
    }
    let mut dcols = vec![T::zero(); rows * k];
    T::gemm(
        rows,
        co,
        k,
        T::one(),
        dy,
        (co as isize, 1),
        kernel.data(),
        (1, co as isize),
        T::zero(),
        &mut dcols,
        (k as isize, 1),
    );
    let run = kw * c;
    let mut dx = vec![T::zero(); b * h * w * c];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (bi * oh + oy) * ow + ox;
                let src = &dcols[row * k..(row + 1) * k];
                for ky in 0..kh {
                    let dst = ((bi * h + oy + ky) * w + ox) * c;
                    for (d, s) in dx[dst..dst + run].iter_mut().zip(&src[ky * run..(ky + 1) * run]) {
                        *d += *s;
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![b, h, w, c], dx)?, dk, db))
}

/// Non-overlapping max pooling of `input [B,H,W,C]` over `ph x pw` windows.
pub fn maxpool_forward<T: Scalar>(input: &Tensor<T>, ph: usize, pw: usize) -> Result<Tensor<T>> {
    maxpool_forward_idx(input, ph, pw).map(|(y, _)| y)
}

pub(crate) fn maxpool_forward_idx<T: Scalar>(
    input: &Tensor<T>,
    ph: usize,
    pw: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if ph == 0 || pw == 0 {
        return Err(invalid(format!("pool extents must be positive, got {ph}x{pw}")));
    }
    let (b, h, w, c) = dims4(input, "maxpool input")?;
    let (oh, ow) = (h / ph, w / pw);
    if oh == 0 || ow == 0 {
        return Err(Error::Shape {
            op: "maxpool",
            left: input.shape().to_vec(),
            right: vec![ph, pw],
        });
    }
    let x = input.data();
    let mut out = Vec::with_capacity(b * oh * ow * c);
    let mut idx = Vec::with_capacity(b * oh * ow * c);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = ((bi * h + oy * ph) * w + ox * pw) * c + ch;
                    for dy in 0..ph {
                        for dx in 0..pw {
                            let i = ((bi * h + oy * ph + dy) * w + ox * pw + dx) * c + ch;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(x[best]);
                    idx.push(best);
                }
            }
        }
    }
    Ok((Tensor::new(vec![b, oh, ow, c], out)?, idx))
}

pub(crate) fn maxpool_backward<T: Scalar>(argmax: &[usize], input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    dx
}

/// `input [B,n] · weights [n,m] + bias [m]`.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, n) = match *input.shape() {
        [b, n] => (b, n),
        _ => (1, input.len()),
    };
    let m = match *weights.shape() {
        [rows, m] if rows == n => m,
        _ => {
            return Err(Error::Shape {
                op: "dense",
                left: input.shape().to_vec(),
                right: weights.shape().to_vec(),
            })
        }
    };
    bias.expect_shape("dense bias", &[m])?;
    let mut out = Vec::with_capacity(b * m);
    for _ in 0..b {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        b,
        n,
        m,
        T::one(),
        input.data(),
        (n as isize, 1),
        weights.data(),
        (m as isize, 1),
        T::one(),
        &mut out,
        (m as isize, 1),
    );
    let shape = if input.shape().len() == 2 { vec![b, m] } else { vec![m] };
    Tensor::new(shape, out)
}

/// Returns `(d_input, d_weights, d_bias)` for a `[B,n]` input.
pub(crate) fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (b, n) = (input.shape()[0], input.shape()[1]);
    let m = weights.shape()[1];
    grad_out.expect_shape("dense grad", &[b, m])?;
    let dy = grad_out.data();
    let mut dw = vec![T::zero(); n * m];
    T::gemm(
        n,
        b,
        m,
        T::one(),
        input.data(),
        (1, n as isize),
        dy,
        (m as isize, 1),
        T::zero(),
        &mut dw,
        (m as isize, 1),
    );
    let mut db = vec![T::zero(); m];
    for row in dy.chunks_exact(m) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += *v;
        }
    }
    let mut dx = vec![T::zero(); b * n];
    T::gemm(
        b,
        m,
        n,
        T::one(),
        dy,
        (m as isize, 1),
        weights.data(),
        (1, m as isize),
        T::zero(),
        &mut dx,
        (n as isize, 1),
    );
    Ok((Tensor::new(vec![b, n], dx)?, dw, db))
}

pub const BN_EPS: f64 = 1e-5;
/// Retention factor of the running statistics.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug)]
pub(crate) struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// True when batch statistics were used (train mode).
    batch_stats: bool,
}

/// Per-feature statistics over every row of the `[rows, features]` view.
fn feature_rows<T: Scalar>(input: &Tensor<T>, features: usize) -> Result<usize> {
    if features == 0 || input.len() % features != 0 {
        return Err(Error::Shape {
            op: "batchnorm",
            left: input.shape().to_vec(),
            right: vec![features],
        });
    }
    Ok(input.len() / features)
}

/// Train-mode batchnorm. Features are the trailing `features` values of each
/// sample; statistics pool the batch axis and any leading spatial axes.
/// Returns the output, the cache, and the batch `(mean, unbiased variance)`.
#[allow(clippy::type_complexity)]
pub(crate) fn batchnorm_train<T: Scalar>(
    input: &Tensor<T>,
    features: usize,
    scale: &[T],
    shift: &[T],
) -> Result<(Tensor<T>, BatchNormCache<T>, Vec<T>, Vec<T>)> {
    if input.shape()[0] < 2 {
        return Err(invalid("batchnorm in train mode needs a batch of at least 2"));
    }
    let rows = feature_rows(input, features)?;
    let n = T::from_usize(rows).unwrap();
    let x = input.data();
    let mut mean = vec![T::zero(); features];
    for row in x.chunks_exact(features) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += *v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); features];
    for row in x.chunks_exact(features) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = *v - *m;
            *s += d * d;
        }
    }
    let unbiased: Vec<T> = var.iter().map(|s| *s / (n - T::one())).collect();
    var.iter_mut().for_each(|s| *s /= n);
    let eps = T::lit(BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(features) {
        for j in 0..features {
            let h = (row[j] - mean[j]) * inv_std[j];
            xhat.push(h);
            out.push(scale[j] * h + shift[j]);
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        BatchNormCache {
            xhat,
            inv_std,
            batch_stats: true,
        },
        mean,
        unbiased,
    ))
}

pub(crate) fn batchnorm_infer<T: Scalar>(
    input: &Tensor<T>,
    features: usize,
    scale: &[T],
    shift: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    feature_rows(input, features)?;
    let eps = T::lit(BN_EPS);
    let inv_std: Vec<T> = running_var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(input.len());
    let mut out = Vec::with_capacity(input.len());
    for row in input.data().chunks_exact(features) {
        for j in 0..features {
            let h = (row[j] - running_mean[j]) * inv_std[j];
            xhat.push(h);
            out.push(scale[j] * h + shift[j]);
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        BatchNormCache {
            xhat,
            inv_std,
            batch_stats: false,
        },
    ))
}

/// Returns `(d_input, d_scale, d_shift)`.
pub(crate) fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    features: usize,
    scale: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let rows = feature_rows(grad_out, features)?;
    let dy = grad_out.data();
    let mut dscale = vec![T::zero(); features];
    let mut dshift = vec![T::zero(); features];
    for (gy, xh) in dy.chunks_exact(features).zip(cache.xhat.chunks_exact(features)) {
        for j in 0..features {
            dshift[j] += gy[j];
            dscale[j] += gy[j] * xh[j];
        }
    }
    let mut dx = Vec::with_capacity(dy.len());
    if cache.batch_stats {
        let n = T::from_usize(rows).unwrap();
        for (gy, xh) in dy.chunks_exact(features).zip(cache.xhat.chunks_exact(features)) {
            for j in 0..features {
                let g = scale[j] * cache.inv_std[j] / n;
                dx.push(g * (n * gy[j] - dshift[j] - xh[j] * dscale[j]));
            }
        }
    } else {
        for gy in dy.chunks_exact(features) {
            for j in 0..features {
                dx.push(gy[j] * scale[j] * cache.inv_std[j]);
            }
        }
    }
    Ok((Tensor::new(grad_out.shape().to_vec(), dx)?, dscale, dshift))
}

/// Inverted dropout. Returns the output and the per-cell multiplier.
pub(crate) fn dropout_train<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut R,
) -> Result<(Tensor<T>, Vec<T>)> {
    check_dropout_rate(rate)?;
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let out = input.data().iter().zip(&mask).map(|(x, m)| *x * *m).collect();
    Ok((Tensor::new(input.shape().to_vec(), out)?, mask))
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Dropout as a standalone operation; `train = false` is the identity.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    train: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    check_dropout_rate(rate)?;
    if !train || rate == 0.0 {
        return Ok(input.clone());
    }
    dropout_train(input, rate, rng).map(|(y, _)| y)
}

/// Reference implementations with literal nested loops, used by tests.
#[cfg(test)]
pub(crate) mod naive {
    use super::*;

    pub fn conv(input: &Tensor<f64>, kernel: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
        let s = input.shape();
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let k = kernel.shape();
        let (kh, kw, co) = (k[0], k[1], k[3]);
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let x = input.data();
        let kd = kernel.data();
        let mut out = Tensor::zeros(&[b, oh, ow, co]);
        let o = out.data_mut();
        for bi in 0..b {
            for y in 0..oh {
                for xx in 0..ow {
                    for oc in 0..co {
                        let mut acc = bias.data()[oc];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                for ic in 0..c {
                                    acc += x[((bi * h + y + ky) * w + xx + kx) * c + ic]
                                        * kd[((ky * kw + kx) * c + ic) * co + oc];
                                }
                            }
                        }
                        o[((bi * oh + y) * ow + xx) * co + oc] = acc;
                    }
                }
            }
        }
        out
    }

    pub fn pool(input: &Tensor<f64>, ph: usize, pw: usize) -> Tensor<f64> {
        let s = input.shape();
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / ph, w / pw);
        let x = input.data();
        let mut out = Tensor::zeros(&[b, oh, ow, c]);
        let o = out.data_mut();
        for bi in 0..b {
            for y in 0..oh {
                for xx in 0..ow {
                    for ch in 0..c {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..ph {
                            for dx in 0..pw {
                                m = m.max(x[((bi * h + y * ph + dy) * w + xx * pw + dx) * c + ch]);
                            }
                        }
                        o[((bi * oh + y) * ow + xx) * c + ch] = m;
                    }
                }
            }
        }
        out
    }
}
