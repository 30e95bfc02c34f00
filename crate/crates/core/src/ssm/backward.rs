//! Reverse-mode pass of the selective scan.
//!
//! Hidden states are not kept from the forward pass; they are recomputed from
//! `h_0`. Sequences longer than [`SEGMENT_THRESHOLD`] are processed in
//! segments: a forward sweep stores only the state at each segment boundary,
//! then each segment is recomputed from its boundary while walking backwards.

use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Real};
use crate::ssm::params::SsmParams;
use crate::ssm::scan::{scan_recurrent, state_matrix, validate, ScanConfig, ScanDims, ScanInputs};
use crate::ssm::zoh::{discretize_scalar, phi_grad_a, Discretization};

/// Above this length the backward pass recomputes states segment by segment.
pub const SEGMENT_THRESHOLD: usize = 512;
/// Segment length used above the threshold.
pub const SEGMENT_LEN: usize = 128;

/// Gradients of a scalar loss with respect to every scan operand.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGrads<T> {
    pub x: DenseArray<T>,
    pub b: DenseArray<T>,
    pub c: DenseArray<T>,
    pub delta: DenseArray<T>,
    pub a_log: DenseArray<T>,
    pub d_skip: DenseArray<T>,
}

pub fn selective_scan_backward<T: Real>(
    params: &SsmParams<T>,
    inputs: &ScanInputs<T>,
    grad_y: &DenseArray<T>,
    cfg: ScanConfig,
) -> Result<ScanGrads<T>> {
    let len = inputs.x.dim(0);
    let segment = if len > SEGMENT_THRESHOLD {
        SEGMENT_LEN
    } else {
        len.max(1)
    };
    selective_scan_backward_segmented(params, inputs, grad_y, cfg, segment)
}

/// Backward pass with an explicit recomputation segment length.
pub fn selective_scan_backward_segmented<T: Real>(
    params: &SsmParams<T>,
    inputs: &ScanInputs<T>,
    grad_y: &DenseArray<T>,
    cfg: ScanConfig,
    segment: usize,
) -> Result<ScanGrads<T>> {
    let dims = validate(params, inputs)?;
    let ScanDims {
        len: l,
        channels: d,
        state: n,
    } = dims;
    grad_y.expect_shape(&[l, d], "scan grad_y")?;
    if segment == 0 {
        return Err(Error::dim("segment length must be positive"));
    }

    // forward sweep keeping only the state entering each segment
    let starts: Vec<usize> = (0..l).step_by(segment).collect();
    let mut boundaries: Vec<Vec<T>> = Vec::with_capacity(starts.len());
    let mut h = vec![T::zero(); d * n];
    for &s in &starts {
        boundaries.push(h.clone());
        if s + segment < l {
            h = scan_recurrent(params, inputs, cfg, dims, Some(&h), s..s + segment, None, None)?;
        }
    }

    let a = state_matrix(params);
    let (xd, bd, cd, dd) = (
        inputs.x.data(),
        inputs.b.data(),
        inputs.c.data(),
        inputs.delta.data(),
    );
    let gy = grad_y.data();
    let mut g = ScanGrads {
        x: DenseArray::zeros(&[l, d]),
        b: DenseArray::zeros(&[l, n]),
        c: DenseArray::zeros(&[l, n]),
        delta: DenseArray::zeros(&[l, d]),
        a_log: DenseArray::zeros(&[d, n]),
        d_skip: DenseArray::zeros(&[d]),
    };
    // dL/dA before the chain through A = −exp(a_log)
    let mut grad_a = vec![T::zero(); d * n];
    // dL/dh_t carried backwards
    let mut gh = vec![T::zero(); d * n];
    let mut states = vec![T::zero(); segment * d * n];
    let mut abars = vec![T::zero(); segment * d * n];
    let mut phis = vec![T::zero(); segment * d * n];

    for (seg_idx, &start) in starts.iter().enumerate().rev() {
        let end = (start + segment).min(l);
        let h_in = &boundaries[seg_idx];
        // recompute states together with their discretization factors
        let mut h = h_in.clone();
        for t in start..end {
            let local = t - start;
            let off = local * d * n;
            for ch in 0..d {
                let dt = dd[t * d + ch];
                let xv = xd[t * d + ch];
                for s in 0..n {
                    let i = ch * n + s;
                    let (a_bar, phi) = discretize_scalar(a.data()[i], dt, cfg.mode);
                    h[i] = a_bar * h[i] + phi * bd[t * n + s] * xv;
                    abars[off + i] = a_bar;
                    phis[off + i] = phi;
                }
            }
            states[off..off + d * n].copy_from_slice(&h);
        }
        for t in (start..end).rev() {
            let local = t - start;
            let h_t = &states[local * d * n..(local + 1) * d * n];
            let h_prev: &[T] = if local == 0 {
                h_in
            } else {
                &states[(local - 1) * d * n..local * d * n]
            };
            let dn = local * d * n;
            let b_t = &bd[t * n..(t + 1) * n];
            let c_t = &cd[t * n..(t + 1) * n];
            let gb_t = &mut g.b.data_mut()[t * n..(t + 1) * n];
            let gc_t = &mut g.c.data_mut()[t * n..(t + 1) * n];
            for ch in 0..d {
                let gy_tc = gy[t * d + ch];
                let dt = dd[t * d + ch];
                let xv = xd[t * d + ch];
                let row = ch * n..(ch + 1) * n;
                let a_row = &a.data()[row.clone()];
                let h_row = &h_t[row.clone()];
                let hp_row = &h_prev[row.clone()];
                let gh_row = &mut gh[row.clone()];
                let ga_row = &mut grad_a[row.clone()];
                let abar_row = &abars[dn + ch * n..dn + (ch + 1) * n];
                let phi_row = &phis[dn + ch * n..dn + (ch + 1) * n];
                let mut dx = T::zero();
                let mut ddelta = T::zero();
                for s in 0..n {
                    let (a_cs, a_bar, phi) = (a_row[s], abar_row[s], phi_row[s]);
                    let ghv = gh_row[s] + c_t[s] * gy_tc;
                    gc_t[s] += gy_tc * h_row[s];
                    let dphi_ddt = match cfg.mode {
                        Discretization::Exact => a_bar,
                        Discretization::Simplified => T::one(),
                    };
                    let dphi_da = phi_grad_a(a_cs, dt, a_bar, phi, cfg.mode);
                    let g_abar = ghv * hp_row[s];
                    // gradient w.r.t. B̄ = φ·B
                    let g_bbar = ghv * xv;
                    dx += ghv * phi * b_t[s];
                    gb_t[s] += g_bbar * phi;
                    ddelta += g_abar * a_cs * a_bar + g_bbar * b_t[s] * dphi_ddt;
                    ga_row[s] += g_abar * dt * a_bar + g_bbar * b_t[s] * dphi_da;
                    gh_row[s] = ghv * a_bar;
                }
                if !cfg.no_skip {
                    dx += params.d_skip.data()[ch] * gy_tc;
                    g.d_skip.data_mut()[ch] += gy_tc * xv;
                }
                g.x.data_mut()[t * d + ch] += dx;
                g.delta.data_mut()[t * d + ch] += ddelta;
            }
        }
    }

    for (ga, (&gv, &av)) in g
        .a_log
        .data_mut()
        .iter_mut()
        .zip(grad_a.iter().zip(a.data()))
    {
        *ga = gv * av;
    }
    for (name, arr) in [
        ("x", &g.x),
        ("B", &g.b),
        ("C", &g.c),
        ("delta", &g.delta),
        ("A_log", &g.a_log),
    ] {
        arr.ensure_finite(&format!("scan gradient {name}"))?;
    }
    Ok(g)
}
