//! One selective-SSM path: `x' = SiLU(Conv1d(x))`, `B, C, Δ = Linear(x')`,
//! `y = SSM(x')`. Operates on a single `[L × E]` sequence.

use crate::error::Result;
use crate::numerics::ops::{
    accumulate_rows, add_row_bias, matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid_scalar,
};
use crate::numerics::{dw_conv1d, dw_conv1d_backward, silu, silu_backward, softplus, DenseArray, Real};
use crate::ssm::backward::selective_scan_backward;
use crate::ssm::params::SsmParams;
use crate::ssm::scan::{selective_scan, ScanConfig, ScanInputs};

/// Intermediates kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct PathCache<T> {
    pub input: DenseArray<T>,
    /// convolution output before the activation
    pub conv_out: DenseArray<T>,
    /// `[L × R]` low-rank Δ features
    pub dt_features: DenseArray<T>,
    /// pre-softplus Δ
    pub dt_pre: DenseArray<T>,
    pub scan: ScanInputs<T>,
}

pub fn path_forward<T: Real>(
    params: &SsmParams<T>,
    x: &DenseArray<T>,
    cfg: ScanConfig,
) -> Result<(DenseArray<T>, PathCache<T>)> {
    let (l, e) = (x.dim(0), x.dim(1));
    let n = params.state_size();
    let r = params.dt_rank();
    let width = 2 * n + r;

    let mut conv_out = dw_conv1d(x, &params.conv_kernel)?;
    add_row_bias(&mut conv_out, &params.conv_bias);
    let x_prime = silu(&conv_out);

    let mut proj = vec![T::zero(); l * width];
    matmul_acc(x_prime.data(), params.proj_bcdt.data(), &mut proj, l, e, width);
    let mut b = Vec::with_capacity(l * n);
    let mut c = Vec::with_capacity(l * n);
    let mut feats = Vec::with_capacity(l * r);
    for row in proj.chunks_exact(width) {
        b.extend_from_slice(&row[..n]);
        c.extend_from_slice(&row[n..2 * n]);
        feats.extend_from_slice(&row[2 * n..]);
    }
    let dt_features = DenseArray::new(&[l, r], feats)?;

    let mut dt_pre = DenseArray::zeros(&[l, e]);
    for row in dt_pre.data_mut().chunks_exact_mut(e) {
        row.copy_from_slice(params.dt_bias.data());
    }
    matmul_acc(dt_features.data(), params.dt_proj.data(), dt_pre.data_mut(), l, r, e);
    let delta = softplus(&dt_pre);

    let scan = ScanInputs {
        x: x_prime,
        b: DenseArray::new(&[l, n], b)?,
        c: DenseArray::new(&[l, n], c)?,
        delta,
    };
    let out = selective_scan(params, &scan, cfg)?;
    Ok((
        out.y,
        PathCache {
            input: x.clone(),
            conv_out,
            dt_features,
            dt_pre,
            scan,
        },
    ))
}

/// Accumulates parameter gradients into `grads` and returns `dL/dx`.
pub fn path_backward<T: Real>(
    params: &SsmParams<T>,
    cache: &PathCache<T>,
    grad_y: &DenseArray<T>,
    cfg: ScanConfig,
    grads: &mut SsmParams<T>,
) -> Result<DenseArray<T>> {
    let (l, e) = (cache.input.dim(0), cache.input.dim(1));
    let n = params.state_size();
    let r = params.dt_rank();
    let width = 2 * n + r;

    let sg = selective_scan_backward(params, &cache.scan, grad_y, cfg)?;
    grads.a_log.add_assign(&sg.a_log)?;
    grads.d_skip.add_assign(&sg.d_skip)?;

    // Δ = softplus(dt_pre)
    let g_pre = DenseArray::new(
        &[l, e],
        sg.delta
            .data()
            .iter()
            .zip(cache.dt_pre.data())
            .map(|(&g, &p)| g * sigmoid_scalar(p))
            .collect(),
    )?;
    accumulate_rows(&g_pre, &mut grads.dt_bias);
    matmul_tn_acc(
        cache.dt_features.data(),
        g_pre.data(),
        grads.dt_proj.data_mut(),
        l,
        r,
        e,
    );
    let mut g_feats = vec![T::zero(); l * r];
    matmul_nt_acc(g_pre.data(), params.dt_proj.data(), &mut g_feats, l, r, e);

    let mut g_proj = Vec::with_capacity(l * width);
    for t in 0..l {
        g_proj.extend_from_slice(sg.b.row(t));
        g_proj.extend_from_slice(sg.c.row(t));
        g_proj.extend_from_slice(&g_feats[t * r..(t + 1) * r]);
    }
    let x_prime = &cache.scan.x;
    matmul_tn_acc(
        x_prime.data(),
        &g_proj,
        grads.proj_bcdt.data_mut(),
        l,
        e,
        width,
    );
    let mut g_xp = sg.x;
    matmul_nt_acc(&g_proj, params.proj_bcdt.data(), g_xp.data_mut(), l, e, width);

    let g_conv = silu_backward(&cache.conv_out, &g_xp);
    accumulate_rows(&g_conv, &mut grads.conv_bias);
    Ok(dw_conv1d_backward(
        &cache.input,
        &params.conv_kernel,
        &g_conv,
        &mut grads.conv_kernel,
    ))
}
