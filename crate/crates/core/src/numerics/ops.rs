//! Dense kernels with hand-written backward passes. Arrays are row-major;
//! "rows" always means the leading axes flattened against the last one.

use crate::error::{Error, Result};
use crate::numerics::array::{DenseArray, Real};
use crate::numerics::params::ParamTree;
use crate::numerics::rng::Rng;

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&av, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn matmul_tn_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for (a_row, b_row) in a.chunks_exact(k).zip(b.chunks_exact(n)) {
        for (&av, out_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`
pub fn matmul_nt_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    if n < NT_DOT_MIN && m > n {
        // short rows: transpose `b` once and accumulate along `k` instead
        let mut bt = vec![T::zero(); n * k];
        for (r, row) in b.chunks_exact(n).enumerate() {
            for (c, &v) in row.iter().enumerate() {
                bt[c * k + r] = v;
            }
        }
        matmul_acc(a, &bt, out, m, n, k);
        return;
    }
    for (a_row, out_row) in a.chunks_exact(n).zip(out.chunks_exact_mut(k)) {
        for (o, b_row) in out_row.iter_mut().zip(b.chunks_exact(n)) {
            *o += dot(a_row, b_row);
        }
    }
}

/// Below this inner length [`matmul_nt_acc`] switches to the transposed form.
const NT_DOT_MIN: usize = 48;

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // four accumulators so the loop vectorises without reassociation flags
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// Affine map `y = x·W + b` applied to every row of `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `[in × out]`
    pub weight: DenseArray<T>,
    /// `[out]`
    pub bias: DenseArray<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DenseArray::zeros(&[input, output]),
            bias: DenseArray::zeros(&[output]),
        }
    }

    /// Gaussian weights with standard deviation `std`, zero bias.
    pub fn init(input: usize, output: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            weight: DenseArray::randn(&[input, output], std, rng),
            bias: DenseArray::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn output_dim(&self) -> usize {
        self.weight.dim(1)
    }

    fn check_input(&self, x: &DenseArray<T>) -> Result<()> {
        if x.last_dim() != self.input_dim() {
            return Err(Error::dim(format!(
                "linear expects last axis {}, got shape {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DenseArray<T>) -> Result<DenseArray<T>> {
        self.check_input(x)?;
        let (rows, n_in, n_out) = (x.num_rows(), self.input_dim(), self.output_dim());
        let mut data = Vec::with_capacity(rows * n_out);
        for _ in 0..rows {
            data.extend_from_slice(self.bias.data());
        }
        matmul_acc(x.data(), self.weight.data(), &mut data, rows, n_in, n_out);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = n_out;
        DenseArray::new(&shape, data)
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(
        &self,
        x: &DenseArray<T>,
        grad_out: &DenseArray<T>,
        grads: &mut Linear<T>,
    ) -> Result<DenseArray<T>> {
        self.check_input(x)?;
        let (rows, n_in, n_out) = (x.num_rows(), self.input_dim(), self.output_dim());
        if grad_out.len() != rows * n_out {
            return Err(Error::dim("linear backward: gradient shape"));
        }
        matmul_tn_acc(
            x.data(),
            grad_out.data(),
            grads.weight.data_mut(),
            rows,
            n_in,
            n_out,
        );
        let gb = grads.bias.data_mut();
        for row in grad_out.data().chunks_exact(n_out) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = DenseArray::zeros(x.shape());
        matmul_nt_acc(
            grad_out.data(),
            self.weight.data(),
            dx.data_mut(),
            rows,
            n_in,
            n_out,
        );
        Ok(dx)
    }
}

impl<T: Real> ParamTree<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu_scalar<T: Real>(x: T) -> T {
    x * sigmoid_scalar(x)
}

/// d/dx silu(x) = σ(x)(1 + x(1 − σ(x)))
#[inline]
pub fn silu_grad_scalar<T: Real>(x: T) -> T {
    let s = sigmoid_scalar(x);
    s * (T::one() + x * (T::one() - s))
}

/// ln(1 + eˣ) without overflow.
#[inline]
pub fn softplus_scalar<T: Real>(x: T) -> T {
    if x > T::lit(20.0) {
        x
    } else if x < T::lit(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid<T: Real>(x: &DenseArray<T>) -> DenseArray<T> {
    x.map(sigmoid_scalar)
}

pub fn silu<T: Real>(x: &DenseArray<T>) -> DenseArray<T> {
    x.map(silu_scalar)
}

/// `grad_out ⊙ silu'(x)`
pub fn silu_backward<T: Real>(x: &DenseArray<T>, grad_out: &DenseArray<T>) -> DenseArray<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| g * silu_grad_scalar(v))
        .collect();
    DenseArray::new(x.shape(), data).expect("same shape")
}

pub fn softplus<T: Real>(x: &DenseArray<T>) -> DenseArray<T> {
    x.map(softplus_scalar)
}

/// Learnable scale and bias of a layer normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub scale: DenseArray<T>,
    pub bias: DenseArray<T>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Real> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        Self {
            scale: DenseArray::full(&[width], T::one()),
            bias: DenseArray::zeros(&[width]),
        }
    }

    pub fn width(&self) -> usize {
        self.scale.len()
    }
}

impl<T: Real> ParamTree<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        out.push((format!("{prefix}.scale"), &self.scale));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        out.push((format!("{prefix}.scale"), &mut self.scale));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

/// Saved normalized values and reciprocal deviations, one per row.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub normalized: DenseArray<T>,
    pub inv_std: Vec<T>,
}

/// Per-row normalization over the last axis followed by `scale`/`bias`.
pub fn layer_norm<T: Real>(
    x: &DenseArray<T>,
    scale: &DenseArray<T>,
    bias: &DenseArray<T>,
    eps: T,
) -> Result<(DenseArray<T>, LayerNormCache<T>)> {
    let c = x.last_dim();
    if scale.len() != c || bias.len() != c {
        return Err(Error::dim(format!(
            "layer_norm affine length {}/{} vs last axis {c}",
            scale.len(),
            bias.len()
        )));
    }
    if eps < T::zero() {
        return Err(Error::domain("layer_norm eps must be non-negative"));
    }
    let n = T::from_usize(c).unwrap();
    let mut out = DenseArray::zeros(x.shape());
    let mut normalized = DenseArray::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(x.num_rows());
    for (r, row) in x.rows().enumerate() {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + eps).sqrt();
        if !rstd.is_finite() {
            return Err(Error::numeric("layer_norm (zero variance with eps = 0)", Some(r)));
        }
        inv_std.push(rstd);
        let xh = normalized.row_mut(r);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * rstd;
        }
        let o = out.row_mut(r);
        for j in 0..c {
            o[j] = normalized.data()[r * c + j] * scale.data()[j] + bias.data()[j];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Returns `dL/dx`; accumulates affine gradients into `grads`.
pub fn layer_norm_backward<T: Real>(
    cache: &LayerNormCache<T>,
    scale: &DenseArray<T>,
    grad_out: &DenseArray<T>,
    grads: &mut LayerNorm<T>,
) -> DenseArray<T> {
    let c = scale.len();
    let n = T::from_usize(c).unwrap();
    let mut dx = DenseArray::zeros(grad_out.shape());
    for (r, g) in grad_out.rows().enumerate() {
        let xh = cache.normalized.row(r);
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for j in 0..c {
            grads.scale.data_mut()[j] += g[j] * xh[j];
            grads.bias.data_mut()[j] += g[j];
            let gh = g[j] * scale.data()[j];
            sum_g += gh;
            sum_gx += gh * xh[j];
        }
        let rstd = cache.inv_std[r];
        let d = dx.row_mut(r);
        for j in 0..c {
            let gh = g[j] * scale.data()[j];
            d[j] = rstd * (gh - sum_g / n - xh[j] * sum_gx / n);
        }
    }
    dx
}

/// Causal depthwise convolution along the sequence axis:
/// `out[t,d] = Σ_k kernel[k,d] · x[t−K+1+k, d]`, zero left padding.
pub fn dw_conv1d<T: Real>(x: &DenseArray<T>, kernel: &DenseArray<T>) -> Result<DenseArray<T>> {
    let (len, ch) = seq_dims(x, "dw_conv1d input")?;
    let (k, kch) = seq_dims(kernel, "dw_conv1d kernel")?;
    if kch != ch {
        return Err(Error::dim(format!(
            "dw_conv1d kernel has {kch} channels, input has {ch}"
        )));
    }
    if k == 0 {
        return Err(Error::dim("dw_conv1d kernel width must be at least 1"));
    }
    let xd = x.data();
    let kd = kernel.data();
    let mut out = DenseArray::zeros(&[len, ch]);
    let od = out.data_mut();
    for t in 0..len {
        let o = &mut od[t * ch..(t + 1) * ch];
        for tap in 0..k {
            // source index t - (k - 1) + tap
            let Some(src) = (t + tap).checked_sub(k - 1) else {
                continue;
            };
            let xs = &xd[src * ch..(src + 1) * ch];
            let ks = &kd[tap * ch..(tap + 1) * ch];
            for ((o, &xv), &kv) in o.iter_mut().zip(xs).zip(ks) {
                *o += kv * xv;
            }
        }
    }
    Ok(out)
}

/// Returns `dL/dx`; accumulates the kernel gradient.
pub fn dw_conv1d_backward<T: Real>(
    x: &DenseArray<T>,
    kernel: &DenseArray<T>,
    grad_out: &DenseArray<T>,
    grad_kernel: &mut DenseArray<T>,
) -> DenseArray<T> {
    let (len, ch) = (x.dim(0), x.dim(1));
    let k = kernel.dim(0);
    let xd = x.data();
    let kd = kernel.data();
    let gd = grad_out.data();
    let mut dx = DenseArray::zeros(&[len, ch]);
    let dxd = dx.data_mut();
    let gk = grad_kernel.data_mut();
    for t in 0..len {
        let g = &gd[t * ch..(t + 1) * ch];
        for tap in 0..k {
            let Some(src) = (t + tap).checked_sub(k - 1) else {
                continue;
            };
            for d in 0..ch {
                gk[tap * ch + d] += g[d] * xd[src * ch + d];
                dxd[src * ch + d] += g[d] * kd[tap * ch + d];
            }
        }
    }
    dx
}

fn seq_dims<T: Real>(x: &DenseArray<T>, what: &str) -> Result<(usize, usize)> {
    if x.ndim() != 2 {
        return Err(Error::dim(format!("{what} must be 2-D, got {:?}", x.shape())));
    }
    Ok((x.dim(0), x.dim(1)))
}

/// Reverses the order of rows of a `[L × D]` array.
pub fn reverse_rows<T: Real>(x: &DenseArray<T>) -> DenseArray<T> {
    let c = x.last_dim();
    let mut data = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(c).rev() {
        data.extend_from_slice(row);
    }
    DenseArray::new(x.shape(), data).expect("same shape")
}

/// Adds a per-channel bias to every row.
pub fn add_row_bias<T: Real>(x: &mut DenseArray<T>, bias: &DenseArray<T>) {
    let c = bias.len();
    for row in x.data_mut().chunks_exact_mut(c) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
}

/// Sums rows into a per-channel accumulator (bias gradient).
pub fn accumulate_rows<T: Real>(grad: &DenseArray<T>, into: &mut DenseArray<T>) {
    let c = into.len();
    for row in grad.data().chunks_exact(c) {
        for (acc, &g) in into.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
}
