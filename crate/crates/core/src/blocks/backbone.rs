use crate::blocks::tokens::TokenSeq;
use crate::blocks::vim::{vim_block_backward, vim_block_forward, VimBlockCache, VimBlockParams};
use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Real};
use crate::ssm::ScanConfig;

/// Caches for every block in the stack, first block first.
#[derive(Clone, Debug)]
pub struct BackboneCache<T> {
    pub blocks: Vec<VimBlockCache<T>>,
    pub split: usize,
}

/// Concatenates template `[B × N1 × C]` and search `[B × N2 × C]` tokens and
/// runs them through the block stack.
pub fn backbone_forward<T: Real>(
    template: &DenseArray<T>,
    search: &DenseArray<T>,
    blocks: &[VimBlockParams<T>],
    cfg: ScanConfig,
) -> Result<(TokenSeq<T>, BackboneCache<T>)> {
    if blocks.is_empty() {
        return Err(Error::dim("backbone needs at least one block"));
    }
    let mut h = TokenSeq::concat(template, search)?;
    let split = h.split();
    let mut caches = Vec::with_capacity(blocks.len());
    for block in blocks {
        let (next, cache) = vim_block_forward(&h, block, cfg)?;
        caches.push(cache);
        h = next;
    }
    Ok((
        h,
        BackboneCache {
            blocks: caches,
            split,
        },
    ))
}

/// Returns the gradients with respect to the template and search tokens.
pub fn backbone_backward<T: Real>(
    blocks: &[VimBlockParams<T>],
    cache: &BackboneCache<T>,
    grad_out: &DenseArray<T>,
    cfg: ScanConfig,
    grads: &mut [VimBlockParams<T>],
) -> Result<(DenseArray<T>, DenseArray<T>)> {
    let mut g = grad_out.clone();
    for ((block, c), gb) in blocks.iter().zip(&cache.blocks).zip(grads.iter_mut()).rev() {
        g = vim_block_backward(block, c, &g, cfg, gb)?;
    }
    let (b, t, ch) = (g.dim(0), g.dim(1), g.dim(2));
    let n1 = cache.split;
    let mut gt = Vec::with_capacity(b * n1 * ch);
    let mut gs = Vec::with_capacity(b * (t - n1) * ch);
    for item in g.data().chunks_exact(t * ch) {
        gt.extend_from_slice(&item[..n1 * ch]);
        gs.extend_from_slice(&item[n1 * ch..]);
    }
    Ok((
        DenseArray::new(&[b, n1, ch], gt)?,
        DenseArray::new(&[b, t - n1, ch], gs)?,
    ))
}
