//! Forward and backward rules for the primitive operations.
//!
//! Each forward has a matching `*_backward` that maps an upstream gradient to
//! gradients of the inputs. Reductions always run in index order so results
//! are reproducible bit for bit.

use super::Tensor;
use crate::error::{Error, Result};

pub const GROUP_NORM_EPS: f64 = 1e-5;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Geometry of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvShape {
    pub fn out_len(&self, len: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::shape("conv1d", "stride must be positive"));
        }
        let padded = len + 2 * self.padding;
        if self.kernel == 0 || self.kernel > padded {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "kernel size {} exceeds padded length {padded} (length {len}, padding {})",
                    self.kernel, self.padding
                ),
            ));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

/// Cross-correlation over the trailing axis.
///
/// `input` is `[Cin × L]`, `kernel` is `[Cout × Cin × K]`, `bias` is `[Cout]`.
pub fn conv1d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let geom = conv_geometry(input, kernel, bias, stride, padding)?;
    let len = input.shape()[1];
    let out_len = geom.out_len(len)?;
    let mut out = vec![0.0; geom.out_channels * out_len];
    conv1d_raw(input.data(), len, kernel.data(), bias.data(), geom, out_len, &mut out);
    Tensor::new(vec![geom.out_channels, out_len], out)
}

fn conv_geometry(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<ConvShape> {
    if input.rank() != 2 {
        return Err(Error::shape(
            "conv1d",
            format!("input must be [Cin x L], got {:?}", input.shape()),
        ));
    }
    if kernel.rank() != 3 {
        return Err(Error::shape(
            "conv1d",
            format!("kernel must be [Cout x Cin x K], got {:?}", kernel.shape()),
        ));
    }
    let (cin, cout, k) = (input.shape()[0], kernel.shape()[0], kernel.shape()[2]);
    if kernel.shape()[1] != cin {
        return Err(Error::shape(
            "conv1d",
            format!(
                "in-channel dimension: input has {cin}, kernel has {}",
                kernel.shape()[1]
            ),
        ));
    }
    if bias.len() != cout {
        return Err(Error::shape(
            "conv1d",
            format!("out-channel dimension: kernel has {cout}, bias has {}", bias.len()),
        ));
    }
    Ok(ConvShape {
        in_channels: cin,
        out_channels: cout,
        kernel: k,
        stride,
        padding,
    })
}

/// Column matrix `[(in_channels·k) × out_len]` with zeros where the window leaves the input.
fn im2col(input: &[f64], len: usize, g: ConvShape, out_len: usize) -> Vec<f64> {
    let k = g.kernel;
    let mut col = vec![0.0; g.in_channels * k * out_len];
    for c in 0..g.in_channels {
        let x = &input[c * len..(c + 1) * len];
        for j in 0..k {
            let row = &mut col[(c * k + j) * out_len..(c * k + j + 1) * out_len];
            for (t, v) in row.iter_mut().enumerate() {
                let idx = (t * g.stride + j) as isize - g.padding as isize;
                if idx >= 0 && (idx as usize) < len {
                    *v = x[idx as usize];
                }
            }
        }
    }
    col
}

pub(crate) fn conv1d_raw(
    input: &[f64],
    len: usize,
    kernel: &[f64],
    bias: &[f64],
    g: ConvShape,
    out_len: usize,
    out: &mut [f64],
) {
    let rows = g.in_channels * g.kernel;
    let col = im2col(input, len, g, out_len);
    for (o, orow) in out[..g.out_channels * out_len].chunks_exact_mut(out_len).enumerate() {
        orow.iter_mut().for_each(|v| *v = bias[o]);
    }
    // Four output channels per pass share each column row.
    let mut o = 0;
    while o < g.out_channels {
        let n = (g.out_channels - o).min(4);
        let block = &mut out[o * out_len..(o + n) * out_len];
        for r in 0..rows {
            let crow = &col[r * out_len..(r + 1) * out_len];
            if n == 4 {
                let w0 = kernel[o * rows + r];
                let w1 = kernel[(o + 1) * rows + r];
                let w2 = kernel[(o + 2) * rows + r];
                let w3 = kernel[(o + 3) * rows + r];
                let (r0, rest) = block.split_at_mut(out_len);
                let (r1, rest) = rest.split_at_mut(out_len);
                let (r2, r3) = rest.split_at_mut(out_len);
                for t in 0..out_len {
                    let x = crow[t];
                    r0[t] += w0 * x;
                    r1[t] += w1 * x;
                    r2[t] += w2 * x;
                    r3[t] += w3 * x;
                }
            } else {
                for i in 0..n {
                    let w = kernel[(o + i) * rows + r];
                    for (acc, &x) in block[i * out_len..(i + 1) * out_len].iter_mut().zip(crow) {
                        *acc += w * x;
                    }
                }
            }
        }
        o += n;
    }
}

/// Gradients of a convolution. `grad_input` is skipped when `want_input` is false.
pub(crate) fn conv1d_backward_raw(
    input: &[f64],
    len: usize,
    kernel: &[f64],
    g: ConvShape,
    out_len: usize,
    grad_out: &[f64],
    grad_kernel: &mut [f64],
    grad_bias: &mut [f64],
    grad_input: Option<&mut [f64]>,
) {
    let rows = g.in_channels * g.kernel;
    let col = im2col(input, len, g, out_len);
    for o in 0..g.out_channels {
        let dy = &grad_out[o * out_len..(o + 1) * out_len];
        grad_bias[o] += dy.iter().sum::<f64>();
        let dw = &mut grad_kernel[o * rows..(o + 1) * rows];
        for (r, w) in dw.iter_mut().enumerate() {
            let crow = &col[r * out_len..(r + 1) * out_len];
            *w += crow.iter().zip(dy).map(|(x, d)| x * d).sum::<f64>();
        }
    }
    if let Some(dx_all) = grad_input {
        let mut dcol = vec![0.0; rows * out_len];
        for o in 0..g.out_channels {
            let dy = &grad_out[o * out_len..(o + 1) * out_len];
            let w = &kernel[o * rows..(o + 1) * rows];
            for (r, &wr) in w.iter().enumerate() {
                let drow = &mut dcol[r * out_len..(r + 1) * out_len];
                for (acc, &d) in drow.iter_mut().zip(dy) {
                    *acc += wr * d;
                }
            }
        }
        let k = g.kernel;
        for c in 0..g.in_channels {
            let dx = &mut dx_all[c * len..(c + 1) * len];
            for j in 0..k {
                let drow = &dcol[(c * k + j) * out_len..(c * k + j + 1) * out_len];
                for (t, &v) in drow.iter().enumerate() {
                    let idx = (t * g.stride + j) as isize - g.padding as isize;
                    if idx >= 0 && (idx as usize) < len {
                        dx[idx as usize] += v;
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv1d`]: `(d_input, d_kernel, d_bias)`.
pub fn conv1d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let bias = Tensor::zeros(&[kernel.shape().first().copied().unwrap_or(0)]);
    let g = conv_geometry(input, kernel, &bias, stride, padding)?;
    let len = input.shape()[1];
    let out_len = g.out_len(len)?;
    if grad_out.shape() != [g.out_channels, out_len] {
        return Err(Error::shape(
            "conv1d_backward",
            format!(
                "grad_out {:?}, expected [{}, {out_len}]",
                grad_out.shape(),
                g.out_channels
            ),
        ));
    }
    let mut dx = Tensor::zeros(input.shape());
    let mut dk = Tensor::zeros(kernel.shape());
    let mut db = Tensor::zeros(&[g.out_channels]);
    conv1d_backward_raw(
        input.data(),
        len,
        kernel.data(),
        g,
        out_len,
        grad_out.data(),
        dk.data_mut(),
        db.data_mut(),
        Some(dx.data_mut()),
    );
    Ok((dx, dk, db))
}

/// Standard normal CDF via the exact error function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    normal_cdf(x) + x * pdf
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub fn gelu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut out = grad_out.clone();
    for (g, &xi) in out.data_mut().iter_mut().zip(x.data()) {
        *g *= gelu_grad_scalar(xi);
    }
    out
}

/// Statistics kept from a normalization forward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Group normalization of `[C × L]`; returns the output and the cache.
pub(crate) fn group_norm_raw(
    x: &[f64],
    channels: usize,
    len: usize,
    groups: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    out: &mut [f64],
) -> NormCache {
    let cpg = channels / groups;
    let n = (cpg * len) as f64;
    let mut normalized = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; groups];
    for g in 0..groups {
        let span = g * cpg * len..(g + 1) * cpg * len;
        let xs = &x[span.clone()];
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[g] = inv;
        for (dst, &v) in normalized[span].iter_mut().zip(xs) {
            *dst = (v - mean) * inv;
        }
    }
    for c in 0..channels {
        for l in 0..len {
            let i = c * len + l;
            out[i] = gamma[c] * normalized[i] + beta[c];
        }
    }
    NormCache { normalized, inv_std }
}

pub(crate) fn group_norm_backward_raw(
    cache: &NormCache,
    channels: usize,
    len: usize,
    groups: usize,
    gamma: &[f64],
    grad_out: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
    grad_input: Option<&mut [f64]>,
) {
    let cpg = channels / groups;
    for c in 0..channels {
        let row = c * len..(c + 1) * len;
        let mut dg = 0.0;
        let mut db = 0.0;
        for (dy, xh) in grad_out[row.clone()].iter().zip(&cache.normalized[row]) {
            dg += dy * xh;
            db += dy;
        }
        grad_gamma[c] += dg;
        grad_beta[c] += db;
    }
    let Some(dx) = grad_input else { return };
    let n = (cpg * len) as f64;
    for g in 0..groups {
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for c in g * cpg..(g + 1) * cpg {
            for l in 0..len {
                let i = c * len + l;
                let d = grad_out[i] * gamma[c];
                sum_d += d;
                sum_dx += d * cache.normalized[i];
            }
        }
        let inv = cache.inv_std[g];
        for c in g * cpg..(g + 1) * cpg {
            for l in 0..len {
                let i = c * len + l;
                let d = grad_out[i] * gamma[c];
                dx[i] += inv / n * (n * d - sum_d - cache.normalized[i] * sum_dx);
            }
        }
    }
}

fn check_group_norm(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize)> {
    if x.rank() != 2 {
        return Err(Error::shape(
            "group_norm",
            format!("input must be [C x L], got {:?}", x.shape()),
        ));
    }
    let (c, l) = (x.shape()[0], x.shape()[1]);
    if groups == 0 || c % groups != 0 {
        return Err(Error::shape(
            "group_norm",
            format!("channel count {c} is not divisible by groups {groups}"),
        ));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "group_norm",
            format!(
                "affine parameters need {c} channels, got gamma {} beta {}",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    Ok((c, l))
}

pub fn group_norm(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (c, l) = check_group_norm(x, groups, gamma, beta)?;
    let mut out = vec![0.0; c * l];
    group_norm_raw(x.data(), c, l, groups, gamma.data(), beta.data(), eps, &mut out);
    Tensor::new(vec![c, l], out)
}

/// Gradients of [`group_norm`]: `(d_input, d_gamma, d_beta)`.
pub fn group_norm_backward(
    x: &Tensor,
    groups: usize,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, l) = check_group_norm(x, groups, gamma, beta)?;
    let mut scratch = vec![0.0; c * l];
    let cache = group_norm_raw(x.data(), c, l, groups, gamma.data(), beta.data(), eps, &mut scratch);
    let mut dx = Tensor::zeros(&[c, l]);
    let mut dg = Tensor::zeros(&[c]);
    let mut db = Tensor::zeros(&[c]);
    group_norm_backward_raw(
        &cache,
        c,
        l,
        groups,
        gamma.data(),
        grad_out.data(),
        dg.data_mut(),
        db.data_mut(),
        Some(dx.data_mut()),
    );
    Ok((dx, dg, db))
}

/// Layer normalization over the trailing dimension of `[n × d]`.
pub(crate) fn layer_norm_raw(x: &[f64], d: usize, gamma: &[f64], beta: &[f64], out: &mut [f64]) -> NormCache {
    let rows = x.len() / d;
    let mut normalized = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xs = &x[r * d..(r + 1) * d];
        let mean = xs.iter().sum::<f64>() / d as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = inv;
        for j in 0..d {
            let h = (xs[j] - mean) * inv;
            normalized[r * d + j] = h;
            out[r * d + j] = gamma[j] * h + beta[j];
        }
    }
    NormCache { normalized, inv_std }
}

pub(crate) fn layer_norm_backward_raw(
    cache: &NormCache,
    d: usize,
    gamma: &[f64],
    grad_out: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
    grad_input: &mut [f64],
) {
    let rows = grad_out.len() / d;
    let n = d as f64;
    for r in 0..rows {
        let dy = &grad_out[r * d..(r + 1) * d];
        let xh = &cache.normalized[r * d..(r + 1) * d];
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for j in 0..d {
            grad_gamma[j] += dy[j] * xh[j];
            grad_beta[j] += dy[j];
            let g = dy[j] * gamma[j];
            sum_d += g;
            sum_dx += g * xh[j];
        }
        let inv = cache.inv_std[r];
        for j in 0..d {
            let g = dy[j] * gamma[j];
            grad_input[r * d + j] += inv / n * (n * g - sum_d - xh[j] * sum_dx);
        }
    }
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let d = x.last_dim();
    if gamma.len() != d || beta.len() != d {
        return Err(Error::shape(
            "layer_norm",
            format!("feature dim {d}, gamma {} beta {}", gamma.len(), beta.len()),
        ));
    }
    let mut out = vec![0.0; x.len()];
    layer_norm_raw(x.data(), d, gamma.data(), beta.data(), &mut out);
    Tensor::new(x.shape().to_vec(), out)
}

/// `y = x·Wᵀ + b` on raw buffers; `x` is `[n × k]`, `w` is `[d × k]`.
pub(crate) fn linear_raw(x: &[f64], k: usize, w: &[f64], b: &[f64], d: usize, out: &mut [f64]) {
    let n = x.len() / k;
    for r in 0..n {
        let xr = &x[r * k..(r + 1) * k];
        for o in 0..d {
            let wr = &w[o * k..(o + 1) * k];
            let mut s = b[o];
            for (a, c) in wr.iter().zip(xr) {
                s += a * c;
            }
            out[r * d + o] = s;
        }
    }
}

/// Accumulates `dW += dyᵀ·x`, `db += Σ dy`, and optionally `dx += dy·W`.
pub(crate) fn linear_backward_raw(
    x: &[f64],
    k: usize,
    w: &[f64],
    d: usize,
    grad_out: &[f64],
    grad_w: Option<&mut [f64]>,
    grad_b: Option<&mut [f64]>,
    grad_x: Option<&mut [f64]>,
) {
    let n = x.len() / k;
    if let Some(gw) = grad_w {
        for r in 0..n {
            let xr = &x[r * k..(r + 1) * k];
            for o in 0..d {
                let dy = grad_out[r * d + o];
                if dy == 0.0 {
                    continue;
                }
                let gr = &mut gw[o * k..(o + 1) * k];
                for (g, xv) in gr.iter_mut().zip(xr) {
                    *g += dy * xv;
                }
            }
        }
    }
    if let Some(gb) = grad_b {
        for r in 0..n {
            for o in 0..d {
                gb[o] += grad_out[r * d + o];
            }
        }
    }
    if let Some(gx) = grad_x {
        for r in 0..n {
            let gxr = &mut gx[r * k..(r + 1) * k];
            for o in 0..d {
                let dy = grad_out[r * d + o];
                let wr = &w[o * k..(o + 1) * k];
                for (g, wv) in gxr.iter_mut().zip(wr) {
                    *g += dy * wv;
                }
            }
        }
    }
}

/// Affine map over the trailing dimension: `x[..×k] → [..×d]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if weight.rank() != 2 {
        return Err(Error::shape(
            "linear",
            format!("weight must be [d x k], got {:?}", weight.shape()),
        ));
    }
    let (d, k) = (weight.shape()[0], weight.shape()[1]);
    if x.last_dim() != k {
        return Err(Error::shape(
            "linear",
            format!("trailing dimension of input is {}, weight expects {k}", x.last_dim()),
        ));
    }
    if bias.len() != d {
        return Err(Error::shape(
            "linear",
            format!("bias has {} entries, weight has {d} rows", bias.len()),
        ));
    }
    let mut shape = x.shape().to_vec();
    if shape.is_empty() {
        shape.push(d);
    } else {
        *shape.last_mut().unwrap() = d;
    }
    let mut out = vec![0.0; x.rows() * d];
    linear_raw(x.data(), k, weight.data(), bias.data(), d, &mut out);
    Tensor::new(shape, out)
}

/// Gradients of [`linear`]: `(d_input, d_weight, d_bias)`.
pub fn linear_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (d, k) = (weight.shape()[0], weight.shape()[1]);
    if x.last_dim() != k || grad_out.last_dim() != d || grad_out.rows() != x.rows() {
        return Err(Error::shape(
            "linear_backward",
            format!("x {:?}, w {:?}, dy {:?}", x.shape(), weight.shape(), grad_out.shape()),
        ));
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[d]);
    linear_backward_raw(
        x.data(),
        k,
        weight.data(),
        d,
        grad_out.data(),
        Some(dw.data_mut()),
        Some(db.data_mut()),
        Some(dx.data_mut()),
    );
    Ok((dx, dw, db))
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax over the trailing dimension, max-subtracted.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// `dx = y ⊙ (dy − ⟨dy, y⟩)` per row, given the softmax output `y`.
pub fn softmax_rows_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut dx = grad_out.clone();
    for r in 0..y.rows() {
        let yr = y.row(r);
        let dot: f64 = yr.iter().zip(grad_out.row(r)).map(|(a, b)| a * b).sum();
        for (g, &yv) in dx.row_mut(r).iter_mut().zip(yr) {
            *g = yv * (*g - dot);
        }
    }
    dx
}

/// Mean over the trailing axis of `[C × L]`.
pub fn mean_pool(x: &Tensor) -> Tensor {
    let l = x.last_dim();
    let data = (0..x.rows()).map(|r| x.row(r).iter().sum::<f64>() / l as f64).collect();
    Tensor::from_vec(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct sliding-window sum, written without the kernel's fast path.
    fn conv_oracle(x: &[f64], w: &[f64]) -> Vec<f64> {
        (0..=x.len() - w.len())
            .map(|t| (0..w.len()).map(|j| x[t + j] * w[j]).sum())
            .collect()
    }

    #[test]
    fn conv1d_identity_kernel() {
        let x = Tensor::new(vec![1, 5], vec![1., 2., 3., 4., 5.]).unwrap();
        let k = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let y = conv1d(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.data(), &[1., 2., 3., 4., 5.]);
    }

    #[test]
    fn conv1d_box_kernel_matches_window_sums() {
        let xs = [1., 2., 3., 4., 5.];
        let x = Tensor::new(vec![1, 5], xs.to_vec()).unwrap();
        let k = Tensor::new(vec![1, 1, 3], vec![1., 1., 1.]).unwrap();
        let y = conv1d(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        let expected = conv_oracle(&xs, &[1., 1., 1.]);
        assert_eq!(expected, vec![6., 9., 12.]);
        assert_eq!(y.data(), expected.as_slice());
    }

    #[test]
    fn conv1d_zero_kernel_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[3, 20], &mut rng);
        let k = Tensor::zeros(&[4, 3, 5]);
        let y = conv1d(&x, &k, &Tensor::zeros(&[4]), 2, 1).unwrap();
        assert_eq!(y.shape(), &[4, 9]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv1d_rejects_mismatched_channels() {
        let x = Tensor::zeros(&[2, 10]);
        let k = Tensor::zeros(&[1, 3, 3]);
        let err = conv1d(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap_err();
        assert!(err.to_string().contains("in-channel"), "{err}");
        let err = conv1d(
            &Tensor::zeros(&[1, 2]),
            &Tensor::zeros(&[1, 1, 5]),
            &Tensor::zeros(&[1]),
            1,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("kernel size"), "{err}");
    }

    #[test]
    fn conv1d_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = random(&[2, 31], &mut rng);
            let y = random(&[2, 31], &mut rng);
            let k = random(&[3, 2, 5], &mut rng);
            let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let mut comb = x.map(|v| a * v);
            comb.scaled_add(b, &y);
            let zero = Tensor::zeros(&[3]);
            let lhs = conv1d(&comb, &k, &zero, 2, 2).unwrap();
            let mut rhs = conv1d(&x, &k, &zero, 2, 2).unwrap().map(|v| a * v);
            rhs.scaled_add(b, &conv1d(&y, &k, &zero, 2, 2).unwrap());
            assert!(lhs.max_abs_diff(&rhs) <= 1e-9);
        }
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() <= 1e-9);
        // Maclaurin series for erf, independent of libm
        let z = 1.0 / 2f64.sqrt();
        let mut term = z;
        let mut erf = 0.0;
        for n in 0..40 {
            erf += term / (2 * n + 1) as f64;
            term *= -z * z / (n + 1) as f64;
        }
        erf *= 2.0 / std::f64::consts::PI.sqrt();
        let phi1 = 0.5 * (1.0 + erf);
        assert!((gelu_scalar(1.0) - phi1).abs() <= 1e-15);
    }

    #[test]
    fn group_norm_constant_and_affine() {
        let x = Tensor::filled(&[4, 6], 3.5);
        let one = Tensor::filled(&[4], 1.0);
        let zero = Tensor::zeros(&[4]);
        let y = group_norm(&x, 2, &one, &zero, GROUP_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|v| v.abs() <= 1e-6));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[4, 6], &mut rng);
        let y = group_norm(&x, 2, &zero, &Tensor::filled(&[4], 7.0), GROUP_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn group_norm_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[4, 8], &mut rng).map(|v| 10.0 * v);
        let y = group_norm(&x, 2, &Tensor::filled(&[4], 1.0), &Tensor::zeros(&[4]), GROUP_NORM_EPS).unwrap();
        for g in 0..2 {
            let vals = &y.data()[g * 16..(g + 1) * 16];
            let m = vals.iter().sum::<f64>() / 16.0;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 16.0;
            assert!(m.abs() <= 1e-9);
            assert!((v - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn group_norm_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random(&[4, 8], &mut rng);
        let one = Tensor::filled(&[4], 1.0);
        let zero = Tensor::zeros(&[4]);
        let base = group_norm(&x, 2, &one, &zero, GROUP_NORM_EPS).unwrap();
        let mut shifted = x.clone();
        // shift only the first group
        shifted.data_mut()[..16].iter_mut().for_each(|v| *v += 4.25);
        let y = group_norm(&shifted, 2, &one, &zero, GROUP_NORM_EPS).unwrap();
        assert!(base.max_abs_diff(&y) <= 1e-6);
    }

    #[test]
    fn group_norm_rejects_indivisible_channels() {
        let err = group_norm(
            &Tensor::zeros(&[6, 3]),
            4,
            &Tensor::zeros(&[6]),
            &Tensor::zeros(&[6]),
            1e-5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("divisible"));
    }

    #[test]
    fn linear_examples() {
        let x = Tensor::from_vec(vec![1., 2.]);
        let w = Tensor::from_rows(&[&[1., 1.], &[0., 3.]]);
        let y = linear(&x, &w, &Tensor::from_vec(vec![0., 1.])).unwrap();
        assert_eq!(y.data(), &[3., 7.]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[5, 3], &mut rng);
        let y = linear(&x, &Tensor::identity(3), &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
        let b = Tensor::from_vec(vec![0.5, -1.0]);
        let y = linear(&x, &Tensor::zeros(&[2, 3]), &b).unwrap();
        for r in 0..5 {
            assert_eq!(y.row(r), b.data());
        }
        assert!(linear(&x, &Tensor::zeros(&[2, 4]), &b).is_err());
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_rows(&Tensor::from_vec(vec![0., 0., 0.]));
        assert!(y.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let y = softmax_rows(&Tensor::from_vec(vec![1000., 0., 0.]));
        assert!((y.data()[0] - 1.0).abs() <= 1e-9);
        assert!(y.all_finite());

        let y = softmax_rows(&Tensor::from_vec(vec![1., 2., 3.]));
        let e: Vec<f64> = [1f64, 2., 3.].iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for (a, b) in y.data().iter().zip(&e) {
            assert!((a - b / s).abs() <= 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[6, 9], &mut rng).map(|v| 30.0 * v);
        let y = softmax_rows(&x);
        for r in 0..6 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
