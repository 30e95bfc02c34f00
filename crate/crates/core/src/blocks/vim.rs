//! Bidirectional selective-SSM block over token sequences.
//!
//! ```text
//! u  = Norm(H)
//! z  = Linear_z(u),   x = Linear_x(u)
//! y_f = SSM_f(SiLU(Conv_f(x)))
//! y_b = rev(SSM_b(SiLU(Conv_b(rev(x)))))
//! y' = y_f ⊙ SiLU(z) + y_b ⊙ SiLU(z)
//! H' = H + Linear_out(y')
//! ```

use crate::blocks::tokens::TokenSeq;
use crate::error::{Error, Result};
use crate::numerics::ops::{reverse_rows, silu_scalar};
use crate::numerics::{
    layer_norm, layer_norm_backward, silu_backward, DenseArray, LayerNorm, LayerNormCache, Linear,
    ParamTree, Real, Rng, LAYER_NORM_EPS,
};
use crate::ssm::{path_backward, path_forward, PathCache, ScanConfig, SsmParams};

/// Shape hyper-parameters shared by the backbone and fusion blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockDims {
    /// token width C
    pub channels: usize,
    /// inner width E
    pub expanded: usize,
    /// state size N
    pub state: usize,
    /// causal conv width K
    pub conv_width: usize,
    /// rank R of the Δ projection
    pub dt_rank: usize,
}

impl BlockDims {
    /// `E = 2C`, `R = ⌈C/16⌉`.
    pub fn standard(channels: usize, state: usize, conv_width: usize) -> Self {
        Self {
            channels,
            expanded: 2 * channels,
            state,
            conv_width,
            dt_rank: channels.div_ceil(16).max(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VimBlockParams<T> {
    pub norm: LayerNorm<T>,
    pub proj_z: Linear<T>,
    pub proj_x: Linear<T>,
    pub forward_path: SsmParams<T>,
    pub backward_path: SsmParams<T>,
    pub proj_out: Linear<T>,
}

impl<T: Real> VimBlockParams<T> {
    pub fn init(dims: BlockDims, rng: &mut Rng) -> Self {
        let BlockDims {
            channels: c,
            expanded: e,
            state: n,
            conv_width: k,
            dt_rank: r,
        } = dims;
        Self {
            norm: LayerNorm::new(c),
            proj_z: Linear::init(c, e, 0.02, rng),
            proj_x: Linear::init(c, e, 0.02, rng),
            forward_path: SsmParams::init(e, n, k, r, rng),
            backward_path: SsmParams::init(e, n, k, r, rng),
            proj_out: Linear::init(e, c, 0.02, rng),
        }
    }

    /// Every weight and bias zero (including the norm scale).
    pub fn zeros(dims: BlockDims) -> Self {
        let BlockDims {
            channels: c,
            expanded: e,
            state: n,
            conv_width: k,
            dt_rank: r,
        } = dims;
        Self {
            norm: LayerNorm {
                scale: DenseArray::zeros(&[c]),
                bias: DenseArray::zeros(&[c]),
            },
            proj_z: Linear::zeros(c, e),
            proj_x: Linear::zeros(c, e),
            forward_path: SsmParams::zeros(e, n, k, r),
            backward_path: SsmParams::zeros(e, n, k, r),
            proj_out: Linear::zeros(e, c),
        }
    }

    pub fn channels(&self) -> usize {
        self.norm.width()
    }

    pub fn expanded(&self) -> usize {
        self.proj_x.output_dim()
    }

    /// Same block with the two scan directions exchanged.
    pub fn swap_directions(&self) -> Self {
        let mut s = self.clone();
        std::mem::swap(&mut s.forward_path, &mut s.backward_path);
        s
    }
}

impl<T: Real> ParamTree<T> for VimBlockParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        self.norm.visit(&format!("{prefix}.norm"), out);
        self.proj_z.visit(&format!("{prefix}.proj_z"), out);
        self.proj_x.visit(&format!("{prefix}.proj_x"), out);
        self.forward_path.visit(&format!("{prefix}.forward"), out);
        self.backward_path.visit(&format!("{prefix}.backward"), out);
        self.proj_out.visit(&format!("{prefix}.proj_out"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        self.norm.visit_mut(&format!("{prefix}.norm"), out);
        self.proj_z.visit_mut(&format!("{prefix}.proj_z"), out);
        self.proj_x.visit_mut(&format!("{prefix}.proj_x"), out);
        self.forward_path.visit_mut(&format!("{prefix}.forward"), out);
        self.backward_path.visit_mut(&format!("{prefix}.backward"), out);
        self.proj_out.visit_mut(&format!("{prefix}.proj_out"), out);
    }
}

#[derive(Clone, Debug)]
struct ItemCache<T> {
    fwd: PathCache<T>,
    bwd: PathCache<T>,
    y_fwd: DenseArray<T>,
    y_bwd: DenseArray<T>,
}

/// Everything the reverse pass of one block needs.
#[derive(Clone, Debug)]
pub struct VimBlockCache<T> {
    input: DenseArray<T>,
    ln: LayerNormCache<T>,
    normed: DenseArray<T>,
    z: DenseArray<T>,
    items: Vec<ItemCache<T>>,
    /// pre-residual output `y'`, `[B × T × E]`
    pub y_prime: DenseArray<T>,
}

fn item_rows<T: Real>(x: &DenseArray<T>, i: usize, t: usize) -> DenseArray<T> {
    let c = x.last_dim();
    DenseArray::new(&[t, c], x.data()[i * t * c..(i + 1) * t * c].to_vec()).expect("item rows")
}

fn put_rows<T: Real>(dst: &mut DenseArray<T>, i: usize, src: &DenseArray<T>) {
    let n = src.len();
    dst.data_mut()[i * n..(i + 1) * n].copy_from_slice(src.data());
}

pub fn vim_block_forward<T: Real>(
    tokens: &TokenSeq<T>,
    params: &VimBlockParams<T>,
    cfg: ScanConfig,
) -> Result<(TokenSeq<T>, VimBlockCache<T>)> {
    let [b, t, c] = tokens.shape();
    if c != params.channels() {
        return Err(Error::dim(format!(
            "block expects {} channels, tokens have {c}",
            params.channels()
        )));
    }
    let e = params.expanded();
    let input = tokens.data();
    let (normed, ln) = layer_norm(
        input,
        &params.norm.scale,
        &params.norm.bias,
        T::lit(LAYER_NORM_EPS),
    )?;
    let z = params.proj_z.forward(&normed)?;
    let x = params.proj_x.forward(&normed)?;

    let mut y_prime = DenseArray::zeros(&[b, t, e]);
    let mut items = Vec::with_capacity(b);
    for i in 0..b {
        let xi = item_rows(&x, i, t);
        let (y_fwd, fwd) = path_forward(&params.forward_path, &xi, cfg)?;
        let (y_rev, bwd) = path_forward(&params.backward_path, &reverse_rows(&xi), cfg)?;
        let y_bwd = reverse_rows(&y_rev);
        let zi = &z.data()[i * t * e..(i + 1) * t * e];
        let out = &mut y_prime.data_mut()[i * t * e..(i + 1) * t * e];
        for j in 0..t * e {
            let gate = silu_scalar(zi[j]);
            out[j] = y_fwd.data()[j] * gate + y_bwd.data()[j] * gate;
        }
        items.push(ItemCache {
            fwd,
            bwd,
            y_fwd,
            y_bwd,
        });
    }
    let mut out = params.proj_out.forward(&y_prime)?;
    out.add_assign(input)?;
    out.ensure_finite("vim block output")?;
    Ok((
        tokens.with_data(out)?,
        VimBlockCache {
            input: input.clone(),
            ln,
            normed,
            z,
            items,
            y_prime,
        },
    ))
}

/// Accumulates parameter gradients into `grads` and returns `dL/dH`.
pub fn vim_block_backward<T: Real>(
    params: &VimBlockParams<T>,
    cache: &VimBlockCache<T>,
    grad_out: &DenseArray<T>,
    cfg: ScanConfig,
    grads: &mut VimBlockParams<T>,
) -> Result<DenseArray<T>> {
    let (b, t) = (cache.input.dim(0), cache.input.dim(1));
    let e = params.expanded();
    grad_out.expect_shape(cache.input.shape(), "vim block gradient")?;

    let g_gated = params
        .proj_out
        .backward(&cache.y_prime, grad_out, &mut grads.proj_out)?;

    let mut g_z = DenseArray::zeros(&[b, t, e]);
    let mut g_x = DenseArray::zeros(&[b, t, e]);
    for (i, item) in cache.items.iter().enumerate() {
        let gi = &g_gated.data()[i * t * e..(i + 1) * t * e];
        let zi = &cache.z.data()[i * t * e..(i + 1) * t * e];
        let mut g_yf = DenseArray::zeros(&[t, e]);
        let mut g_yb = DenseArray::zeros(&[t, e]);
        let gz = &mut g_z.data_mut()[i * t * e..(i + 1) * t * e];
        for j in 0..t * e {
            let gate = silu_scalar(zi[j]);
            g_yf.data_mut()[j] = gi[j] * gate;
            g_yb.data_mut()[j] = gi[j] * gate;
            // d/dgate of (y_f·gate + y_b·gate)
            gz[j] = gi[j] * (item.y_fwd.data()[j] + item.y_bwd.data()[j]);
        }
        let mut gx = path_backward(
            &params.forward_path,
            &item.fwd,
            &g_yf,
            cfg,
            &mut grads.forward_path,
        )?;
        let gx_rev = path_backward(
            &params.backward_path,
            &item.bwd,
            &reverse_rows(&g_yb),
            cfg,
            &mut grads.backward_path,
        )?;
        gx.add_assign(&reverse_rows(&gx_rev))?;
        put_rows(&mut g_x, i, &gx);
    }
    let g_z = silu_backward(&cache.z, &g_z);

    let mut g_normed = params
        .proj_z
        .backward(&cache.normed, &g_z, &mut grads.proj_z)?;
    g_normed.add_assign(&params.proj_x.backward(&cache.normed, &g_x, &mut grads.proj_x)?)?;
    let mut g_in = layer_norm_backward(&cache.ln, &params.norm.scale, &g_normed, &mut grads.norm);
    g_in.add_assign(grad_out)?;
    Ok(g_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> BlockDims {
        BlockDims::standard(4, 2, 3)
    }

    #[test]
    fn zero_block_is_identity() {
        let mut rng = Rng::new(4);
        let data = DenseArray::<f64>::randn(&[2, 6, 4], 1.0, &mut rng);
        let tokens = TokenSeq::new(data, 2).unwrap();
        let (out, _) = vim_block_forward(&tokens, &VimBlockParams::zeros(dims()), ScanConfig::default())
            .unwrap();
        assert_eq!(out, tokens);
    }

    #[test]
    fn shape_and_split_preserved() {
        let mut rng = Rng::new(5);
        let d = BlockDims::standard(16, 4, 4);
        let p = VimBlockParams::<f32>::init(d, &mut rng);
        let tokens = TokenSeq::new(DenseArray::randn(&[2, 12, 16], 1.0, &mut rng), 4).unwrap();
        let (out, _) = vim_block_forward(&tokens, &p, ScanConfig::default()).unwrap();
        assert_eq!(out.shape(), [2, 12, 16]);
        assert_eq!(out.split(), 4);
    }

    #[test]
    fn channel_mismatch() {
        let mut rng = Rng::new(6);
        let p = VimBlockParams::<f32>::init(dims(), &mut rng);
        let tokens = TokenSeq::new(DenseArray::zeros(&[1, 4, 5]), 1).unwrap();
        assert!(matches!(
            vim_block_forward(&tokens, &p, ScanConfig::default()),
            Err(Error::Dimension(_))
        ));
    }

    fn noisy(dims: BlockDims, rng: &mut Rng) -> VimBlockParams<f64> {
        let mut p = VimBlockParams::init(dims, rng);
        // push every group away from its init so no gradient is trivially zero
        for (_, a) in p.named_mut() {
            let noise = DenseArray::randn(a.shape(), 0.3, rng);
            a.add_assign(&noise).unwrap();
        }
        // Δ of order one so the state matrix has a measurable effect
        p.forward_path.dt_bias.fill(0.5);
        p.backward_path.dt_bias.fill(0.5);
        p
    }

    #[test]
    fn gradients_match_differences() {
        use crate::numerics::gradcheck::{check_tree, finite_diff_grad, max_rel_error};
        let dims = BlockDims::standard(2, 2, 3);
        for seed in 0..5 {
            let mut rng = Rng::new(100 + seed);
            let p = noisy(dims, &mut rng);
            let x = DenseArray::<f64>::randn(&[1, 4, 2], 1.0, &mut rng);
            let w = DenseArray::<f64>::randn(&[1, 4, 2], 1.0, &mut rng);
            let cfg = ScanConfig::default();
            let loss = |p: &VimBlockParams<f64>, x: &DenseArray<f64>| {
                let t = TokenSeq::new(x.clone(), 1).unwrap();
                let (o, _) = vim_block_forward(&t, p, cfg).unwrap();
                o.data().data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let t = TokenSeq::new(x.clone(), 1).unwrap();
            let (_, cache) = vim_block_forward(&t, &p, cfg).unwrap();
            let mut grads = p.zeros_like();
            let dx = vim_block_backward(&p, &cache, &w, cfg, &mut grads).unwrap();
            let nx = finite_diff_grad(|x| loss(&p, x), &x, 1e-3).unwrap();
            assert!(max_rel_error(&dx, &nx) < 1e-5);
            for g in check_tree(&p, &grads, |p| loss(p, &x), 1e-3, usize::MAX).unwrap() {
                assert!(g.rel_error < 1e-5, "{} {:e}", g.name, g.rel_error);
            }
        }
    }

    #[test]
    fn reversal_with_swapped_paths_reverses_y_prime() {
        let mut rng = Rng::new(9);
        let dims = BlockDims::standard(4, 3, 3);
        let p = noisy(dims, &mut rng);
        let x = DenseArray::<f64>::randn(&[1, 7, 4], 1.0, &mut rng);
        let cfg = ScanConfig::default();
        let (_, c1) = vim_block_forward(&TokenSeq::new(x.clone(), 2).unwrap(), &p, cfg).unwrap();
        let xr = DenseArray::new(&[1, 7, 4], reverse_rows(&x.reshape(&[7, 4]).unwrap()).into_data())
            .unwrap();
        let (_, c2) =
            vim_block_forward(&TokenSeq::new(xr, 2).unwrap(), &p.swap_directions(), cfg).unwrap();
        let y1 = reverse_rows(&c1.y_prime.reshape(&[7, 8]).unwrap());
        assert_eq!(y1.data(), c2.y_prime.data());
    }

    #[test]
    fn deterministic() {
        let mut rng = Rng::new(10);
        let p = noisy(dims(), &mut rng);
        let t = TokenSeq::new(DenseArray::randn(&[2, 5, 4], 1.0, &mut rng), 2).unwrap();
        let a = vim_block_forward(&t, &p, ScanConfig::default()).unwrap().0;
        let b = vim_block_forward(&t, &p, ScanConfig::default()).unwrap().0;
        assert_eq!(a, b);
    }
}
