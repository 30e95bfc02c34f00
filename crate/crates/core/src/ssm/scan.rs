//! Forward selective scan over a diagonal state matrix:
//!
//! ```text
//! h_t = Ā_t ⊙ h_{t−1} + B̄_t ⊙ x_t,   h_0 = 0
//! y_t = Σ_n C_t[n] · h_t[·, n] + D ⊙ x_t
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Real};
use crate::ssm::params::SsmParams;
use crate::ssm::zoh::{discretize_scalar, Discretization};

/// Input-dependent activations of one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanInputs<T> {
    /// `[L × D]` post-convolution activation.
    pub x: DenseArray<T>,
    /// `[L × N]`
    pub b: DenseArray<T>,
    /// `[L × N]`
    pub c: DenseArray<T>,
    /// `[L × D]`, strictly positive.
    pub delta: DenseArray<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanOutput<T> {
    /// `[L × D]`
    pub y: DenseArray<T>,
    /// `[D × N]`
    pub h_last: DenseArray<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScanConfig {
    pub mode: Discretization,
    /// Drop the `D ⊙ x` feed-through term.
    pub no_skip: bool,
    /// Use the associative-scan kernel instead of the sequential one.
    pub parallel: bool,
}

impl ScanConfig {
    pub fn new(mode: Discretization) -> Self {
        Self {
            mode,
            no_skip: false,
            parallel: false,
        }
    }
}

/// Sizes shared by all scan kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ScanDims {
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

pub(crate) fn validate<T: Real>(params: &SsmParams<T>, inputs: &ScanInputs<T>) -> Result<ScanDims> {
    let (d, n) = (params.a_log.dim(0), params.a_log.dim(1));
    let x = &inputs.x;
    if x.ndim() != 2 || x.dim(1) != d {
        return Err(Error::dim(format!(
            "scan input x {:?} does not match A {:?}",
            x.shape(),
            params.a_log.shape()
        )));
    }
    let l = x.dim(0);
    if l == 0 {
        return Err(Error::dim("scan needs at least one step"));
    }
    inputs.b.expect_shape(&[l, n], "scan B")?;
    inputs.c.expect_shape(&[l, n], "scan C")?;
    inputs.delta.expect_shape(&[l, d], "scan delta")?;
    params.d_skip.expect_shape(&[d], "scan D")?;
    if let Some(i) = inputs.delta.data().iter().position(|&v| !(v > T::zero())) {
        return Err(Error::domain(format!(
            "delta must be positive (step {}, channel {})",
            i / d,
            i % d
        )));
    }
    Ok(ScanDims {
        len: l,
        channels: d,
        state: n,
    })
}

/// `A = −exp(A_log)`, `[D × N]`.
pub fn state_matrix<T: Real>(params: &SsmParams<T>) -> DenseArray<T> {
    params.a_log.map(|v| -v.exp())
}

fn skip_term<T: Real>(params: &SsmParams<T>, cfg: ScanConfig, ch: usize) -> T {
    if cfg.no_skip {
        T::zero()
    } else {
        params.d_skip.data()[ch]
    }
}

/// Runs the recurrence step by step. When `states` is given every `h_t` is
/// written to it (`[L × D × N]`) for the reverse pass.
pub(crate) fn scan_recurrent<T: Real>(
    params: &SsmParams<T>,
    inputs: &ScanInputs<T>,
    cfg: ScanConfig,
    dims: ScanDims,
    h0: Option<&[T]>,
    steps: std::ops::Range<usize>,
    mut states: Option<&mut [T]>,
    y: Option<&mut [T]>,
) -> Result<Vec<T>> {
    let ScanDims {
        channels: d,
        state: n,
        ..
    } = dims;
    let a = state_matrix(params);
    let mut h = match h0 {
        Some(h0) => h0.to_vec(),
        None => vec![T::zero(); d * n],
    };
    let (xd, bd, cd, dd) = (
        inputs.x.data(),
        inputs.b.data(),
        inputs.c.data(),
        inputs.delta.data(),
    );
    let mut y = y;
    let start = steps.start;
    for t in steps {
        let b_t = &bd[t * n..(t + 1) * n];
        let c_t = &cd[t * n..(t + 1) * n];
        for ch in 0..d {
            let dt = dd[t * d + ch];
            let xv = xd[t * d + ch];
            let a_row = &a.data()[ch * n..(ch + 1) * n];
            let h_row = &mut h[ch * n..(ch + 1) * n];
            let mut acc = T::zero();
            for s in 0..n {
                let (a_bar, phi) = discretize_scalar(a_row[s], dt, cfg.mode);
                h_row[s] = a_bar * h_row[s] + phi * b_t[s] * xv;
                acc += c_t[s] * h_row[s];
            }
            let out = acc + skip_term(params, cfg, ch) * xv;
            if !out.is_finite() {
                return Err(Error::numeric("selective scan", Some(t)));
            }
            if let Some(y) = y.as_deref_mut() {
                y[t * d + ch] = out;
            }
        }
        if let Some(st) = states.as_deref_mut() {
            let off = (t - start) * d * n;
            st[off..off + d * n].copy_from_slice(&h);
        }
    }
    Ok(h)
}

/// Dispatches to the kernel selected by `cfg.parallel`.
pub fn selective_scan<T: Real>(
    params: &SsmParams<T>,
    inputs: &ScanInputs<T>,
    cfg: ScanConfig,
) -> Result<ScanOutput<T>> {
    if cfg.parallel {
        selective_scan_parallel(params, inputs, cfg)
    } else {
        selective_scan_seq(params, inputs, cfg)
    }
}

/// Sequential reference kernel.
pub fn selective_scan_seq<T: Real>(
    params: &SsmParams<T>,
    inputs: &ScanInputs<T>,
    cfg: ScanConfig,
) -> Result<ScanOutput<T>> {
    let dims = validate(params, inputs)?;
    let mut y = DenseArray::zeros(&[dims.len, dims.channels]);
    let h = scan_recurrent(
        params,
        inputs,
        cfg,
        dims,
        None,
        0..dims.len,
        None,
        Some(y.data_mut()),
    )?;
    Ok(ScanOutput {
        y,
        h_last: DenseArray::new(&[dims.channels, dims.state], h)?,
    })
}

/// One element of the linear-recurrence monoid: the map `h ↦ a·h + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine<T> {
    pub a: T,
    pub b: T,
}

impl<T: Real> Affine<T> {
    pub fn identity() -> Self {
        Self {
            a: T::one(),
            b: T::zero(),
        }
    }

    /// Applies `self` first, then `later`: `(a2,b2)∘(a1,b1) = (a2·a1, a2·b1 + b2)`.
    #[inline]
    pub fn then(self, later: Self) -> Self {
        Self {
            a: later.a * self.a,
            b: later.a * self.b + later.b,
        }
    }
}

/// Work-efficient (Blelloch) inclusive scan in place. The buffer is padded to
/// the next power of two with identities.
pub fn blelloch_inclusive<T: Real>(elems: &mut Vec<Affine<T>>) {
    let len = elems.len();
    if len <= 1 {
        return;
    }
    let orig = elems.clone();
    let size = len.next_power_of_two();
    elems.resize(size, Affine::identity());

    // up-sweep: node i accumulates the block ending at i
    let mut stride = 1;
    while stride < size {
        let mut i = 2 * stride - 1;
        while i < size {
            elems[i] = elems[i - stride].then(elems[i]);
            i += 2 * stride;
        }
        stride *= 2;
    }

    // down-sweep into an exclusive scan
    elems[size - 1] = Affine::identity();
    let mut stride = size / 2;
    while stride >= 1 {
        let mut i = 2 * stride - 1;
        while i < size {
            let left = elems[i - stride];
            elems[i - stride] = elems[i];
            elems[i] = elems[i].then(left);
            i += 2 * stride;
        }
        stride /= 2;
    }

    elems.truncate(len);
    for (e, x) in elems.iter_mut().zip(orig) {
        *e = e.then(x);
    }
}

/// Same result as [`selective_scan_seq`], computed per channel with the
/// associative scan. Channels are distributed over the current rayon pool;
/// every channel is reduced in a fixed order so the output does not depend on
/// the number of workers.
pub fn selective_scan_parallel<T: Real>(
    params: &SsmParams<T>,
    inputs: &ScanInputs<T>,
    cfg: ScanConfig,
) -> Result<ScanOutput<T>> {
    let dims = validate(params, inputs)?;
    let ScanDims {
        len: l,
        channels: d,
        state: n,
    } = dims;
    let a = state_matrix(params);
    let (xd, bd, cd, dd) = (
        inputs.x.data(),
        inputs.b.data(),
        inputs.c.data(),
        inputs.delta.data(),
    );

    // per channel: (y column, final state row)
    let columns: Vec<(Vec<T>, Vec<T>)> = (0..d)
        .into_par_iter()
        .map(|ch| {
            let mut col = vec![T::zero(); l];
            let mut h_last = vec![T::zero(); n];
            let mut elems = Vec::with_capacity(l.next_power_of_two());
            for s in 0..n {
                let a_cs = a.data()[ch * n + s];
                elems.clear();
                elems.extend((0..l).map(|t| {
                    let (a_bar, phi) = discretize_scalar(a_cs, dd[t * d + ch], cfg.mode);
                    Affine {
                        a: a_bar,
                        b: phi * bd[t * n + s] * xd[t * d + ch],
                    }
                }));
                blelloch_inclusive(&mut elems);
                for t in 0..l {
                    col[t] += cd[t * n + s] * elems[t].b;
                }
                h_last[s] = elems[l - 1].b;
            }
            let skip = skip_term(params, cfg, ch);
            for t in 0..l {
                col[t] += skip * xd[t * d + ch];
            }
            (col, h_last)
        })
        .collect();

    let mut y = DenseArray::zeros(&[l, d]);
    let mut h_last = DenseArray::zeros(&[d, n]);
    for (ch, (col, h)) in columns.into_iter().enumerate() {
        for t in 0..l {
            let v = col[t];
            if !v.is_finite() {
                return Err(Error::numeric("parallel selective scan", Some(t)));
            }
            y.data_mut()[t * d + ch] = v;
        }
        h_last.row_mut(ch).copy_from_slice(&h);
    }
    Ok(ScanOutput { y, h_last })
}
