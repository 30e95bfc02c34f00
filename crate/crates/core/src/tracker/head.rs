//! Centre-based tracking head: three convolutional branches (score, offset,
//! size) over the `S × S` grid of search tokens.
//!
//! Each branch is four `Conv3×3 → BatchNorm → ReLU` layers halving the width
//! (`2C → C → C/2 → C/4 → C/8`) followed by a `1×1` projection and a sigmoid.
//! Batch norm uses batch statistics while training and running statistics
//! otherwise; running statistics are buffers, not parameters.

use crate::error::{Error, Result};
use crate::numerics::ops::{matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid_scalar};
use crate::numerics::{DenseArray, Linear, ParamTree, Real, Rng};
use crate::tracker::bbox::ScoreMapOutput;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const HEAD_DEPTH: usize = 4;
/// initial score-branch bias: sigmoid(-2.19) ≈ 0.1
const CLS_PRIOR_BIAS: f64 = -2.19;

/// Channel widths of one branch, input first.
pub fn branch_widths(input: usize) -> Vec<usize> {
    let c = (input / 2).max(1);
    let mut w = vec![input];
    for k in 0..HEAD_DEPTH {
        w.push((c >> k).max(1));
    }
    w
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBnLayer<T> {
    /// `[9·c_in × c_out]`, taps ordered (dy, dx, c_in)
    pub weight: DenseArray<T>,
    pub gamma: DenseArray<T>,
    pub beta: DenseArray<T>,
}

impl<T: Real> ConvBnLayer<T> {
    fn init(c_in: usize, c_out: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / (9 * c_in) as f64).sqrt();
        Self {
            weight: DenseArray::randn(&[9 * c_in, c_out], std, rng),
            gamma: DenseArray::full(&[c_out], T::one()),
            beta: DenseArray::zeros(&[c_out]),
        }
    }

    fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            weight: DenseArray::zeros(&[9 * c_in, c_out]),
            gamma: DenseArray::zeros(&[c_out]),
            beta: DenseArray::zeros(&[c_out]),
        }
    }

    fn c_in(&self) -> usize {
        self.weight.dim(0) / 9
    }

    fn c_out(&self) -> usize {
        self.weight.dim(1)
    }
}

impl<T: Real> ParamTree<T> for ConvBnLayer<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        out.push((format!("{prefix}.conv"), &self.weight));
        out.push((format!("{prefix}.bn_gamma"), &self.gamma));
        out.push((format!("{prefix}.bn_beta"), &self.beta));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        out.push((format!("{prefix}.conv"), &mut self.weight));
        out.push((format!("{prefix}.bn_gamma"), &mut self.gamma));
        out.push((format!("{prefix}.bn_beta"), &mut self.beta));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadBranch<T> {
    pub layers: Vec<ConvBnLayer<T>>,
    pub out: Linear<T>,
}

impl<T: Real> HeadBranch<T> {
    fn init(input: usize, out_ch: usize, rng: &mut Rng) -> Self {
        let w = branch_widths(input);
        Self {
            layers: w.windows(2).map(|p| ConvBnLayer::init(p[0], p[1], rng)).collect(),
            out: Linear::init(w[HEAD_DEPTH], out_ch, 0.02, rng),
        }
    }

    fn zeros(input: usize, out_ch: usize) -> Self {
        let w = branch_widths(input);
        Self {
            layers: w.windows(2).map(|p| ConvBnLayer::zeros(p[0], p[1])).collect(),
            out: Linear::zeros(w[HEAD_DEPTH], out_ch),
        }
    }
}

impl<T: Real> ParamTree<T> for HeadBranch<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        self.layers.visit(&format!("{prefix}.layers"), out);
        self.out.visit(&format!("{prefix}.out"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        self.layers.visit_mut(&format!("{prefix}.layers"), out);
        self.out.visit_mut(&format!("{prefix}.out"), out);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    pub cls: HeadBranch<T>,
    pub offset: HeadBranch<T>,
    pub size: HeadBranch<T>,
}

impl<T: Real> HeadParams<T> {
    /// `input` is the channel count of the fused search features (2C).
    pub fn init(input: usize, rng: &mut Rng) -> Self {
        let mut cls = HeadBranch::init(input, 1, rng);
        cls.out.bias.fill(T::lit(CLS_PRIOR_BIAS));
        Self {
            cls,
            offset: HeadBranch::init(input, 2, rng),
            size: HeadBranch::init(input, 2, rng),
        }
    }

    pub fn zeros(input: usize) -> Self {
        Self {
            cls: HeadBranch::zeros(input, 1),
            offset: HeadBranch::zeros(input, 2),
            size: HeadBranch::zeros(input, 2),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.cls.layers[0].c_in()
    }

    fn branches(&self) -> [&HeadBranch<T>; 3] {
        [&self.cls, &self.offset, &self.size]
    }
}

impl<T: Real> ParamTree<T> for HeadParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        self.cls.visit(&format!("{prefix}.cls"), out);
        self.offset.visit(&format!("{prefix}.offset"), out);
        self.size.visit(&format!("{prefix}.size"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        self.cls.visit_mut(&format!("{prefix}.cls"), out);
        self.offset.visit_mut(&format!("{prefix}.offset"), out);
        self.size.visit_mut(&format!("{prefix}.size"), out);
    }
}

/// Running batch-norm statistics for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: DenseArray<T>,
    pub var: DenseArray<T>,
}

impl<T: Real> ParamTree<T> for BnStats<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        out.push((format!("{prefix}.mean"), &self.mean));
        out.push((format!("{prefix}.var"), &self.var));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        out.push((format!("{prefix}.mean"), &mut self.mean));
        out.push((format!("{prefix}.var"), &mut self.var));
    }
}

/// Running statistics of all three branches, `[branch][layer]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadBuffers<T> {
    pub stats: Vec<Vec<BnStats<T>>>,
}

impl<T: Real> HeadBuffers<T> {
    pub fn new(params: &HeadParams<T>) -> Self {
        Self {
            stats: params
                .branches()
                .iter()
                .map(|b| {
                    b.layers
                        .iter()
                        .map(|l| BnStats {
                            mean: DenseArray::zeros(&[l.c_out()]),
                            var: DenseArray::full(&[l.c_out()], T::one()),
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl<T: Real> ParamTree<T> for HeadBuffers<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        for (name, b) in ["cls", "offset", "size"].iter().zip(&self.stats) {
            b.visit(&format!("{prefix}.{name}"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        for (name, b) in ["cls", "offset", "size"].iter().zip(self.stats.iter_mut()) {
            b.visit_mut(&format!("{prefix}.{name}"), out);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct LayerCache<T> {
    cols: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// post-norm, pre-ReLU
    normed: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
}

#[derive(Clone, Debug)]
struct BranchCache<T> {
    layers: Vec<LayerCache<T>>,
    last: DenseArray<T>,
    probs: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct HeadCache<T> {
    mode: BnMode,
    batch: usize,
    grid: usize,
    branches: Vec<BranchCache<T>>,
}

/// 3×3 patches with zero padding: `[B·S·S × 9·C]`.
fn im2col<T: Real>(x: &[T], b: usize, s: usize, c: usize) -> Vec<T> {
    let mut cols = vec![T::zero(); b * s * s * 9 * c];
    for n in 0..b {
        for i in 0..s {
            for j in 0..s {
                let row = ((n * s + i) * s + j) * 9 * c;
                for (tap, (di, dj)) in TAPS.iter().enumerate() {
                    let (y, x0) = (i as isize + di, j as isize + dj);
                    if y < 0 || x0 < 0 || y >= s as isize || x0 >= s as isize {
                        continue;
                    }
                    let src = ((n * s + y as usize) * s + x0 as usize) * c;
                    cols[row + tap * c..row + (tap + 1) * c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], b: usize, s: usize, c: usize) -> Vec<T> {
    let mut x = vec![T::zero(); b * s * s * c];
    for n in 0..b {
        for i in 0..s {
            for j in 0..s {
                let row = ((n * s + i) * s + j) * 9 * c;
                for (tap, (di, dj)) in TAPS.iter().enumerate() {
                    let (y, x0) = (i as isize + di, j as isize + dj);
                    if y < 0 || x0 < 0 || y >= s as isize || x0 >= s as isize {
                        continue;
                    }
                    let dst = ((n * s + y as usize) * s + x0 as usize) * c;
                    for k in 0..c {
                        x[dst + k] += cols[row + tap * c + k];
                    }
                }
            }
        }
    }
    x
}

const TAPS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn layer_forward<T: Real>(
    layer: &ConvBnLayer<T>,
    stats: &BnStats<T>,
    x: &[T],
    b: usize,
    s: usize,
    mode: BnMode,
) -> (Vec<T>, LayerCache<T>) {
    let (ci, co) = (layer.c_in(), layer.c_out());
    let rows = b * s * s;
    let cols = im2col(x, b, s, ci);
    let mut pre = vec![T::zero(); rows * co];
    matmul_acc(&cols, layer.weight.data(), &mut pre, rows, 9 * ci, co);

    let n = T::lit(rows as f64);
    let (mean, var) = match mode {
        BnMode::Train => {
            let mut mean = vec![T::zero(); co];
            for r in pre.chunks_exact(co) {
                for (m, &v) in mean.iter_mut().zip(r) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m = *m / n);
            let mut var = vec![T::zero(); co];
            for r in pre.chunks_exact(co) {
                for ((s2, &v), &m) in var.iter_mut().zip(r).zip(&mean) {
                    *s2 += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|v| *v = *v / n);
            (mean, var)
        }
        BnMode::Eval => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::lit(BN_EPS)).sqrt()).collect();
    let mut xhat = vec![T::zero(); rows * co];
    let mut normed = vec![T::zero(); rows * co];
    let mut out = vec![T::zero(); rows * co];
    for r in 0..rows {
        for k in 0..co {
            let i = r * co + k;
            xhat[i] = (pre[i] - mean[k]) * inv_std[k];
            normed[i] = layer.gamma.data()[k] * xhat[i] + layer.beta.data()[k];
            out[i] = normed[i].max(T::zero());
        }
    }
    (
        out,
        LayerCache {
            cols,
            xhat,
            inv_std,
            normed,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

fn layer_backward<T: Real>(
    layer: &ConvBnLayer<T>,
    cache: &LayerCache<T>,
    grad_out: &[T],
    b: usize,
    s: usize,
    mode: BnMode,
    grads: &mut ConvBnLayer<T>,
) -> Vec<T> {
    let (ci, co) = (layer.c_in(), layer.c_out());
    let rows = b * s * s;
    let dy: Vec<T> = grad_out
        .iter()
        .zip(&cache.normed)
        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
        .collect();
    let mut sum_dy = vec![T::zero(); co];
    let mut sum_dy_xhat = vec![T::zero(); co];
    for r in 0..rows {
        for k in 0..co {
            let i = r * co + k;
            sum_dy[k] += dy[i];
            sum_dy_xhat[k] += dy[i] * cache.xhat[i];
        }
    }
    for k in 0..co {
        grads.gamma.data_mut()[k] += sum_dy_xhat[k];
        grads.beta.data_mut()[k] += sum_dy[k];
    }
    let n = T::lit(rows as f64);
    let mut dpre = vec![T::zero(); rows * co];
    for r in 0..rows {
        for k in 0..co {
            let i = r * co + k;
            let g = layer.gamma.data()[k] * cache.inv_std[k];
            dpre[i] = match mode {
                BnMode::Train => {
                    g * (dy[i] - sum_dy[k] / n - cache.xhat[i] * sum_dy_xhat[k] / n)
                }
                BnMode::Eval => g * dy[i],
            };
        }
    }
    matmul_tn_acc(&cache.cols, &dpre, grads.weight.data_mut(), rows, 9 * ci, co);
    let mut dcols = vec![T::zero(); rows * 9 * ci];
    matmul_nt_acc(&dpre, layer.weight.data(), &mut dcols, rows, 9 * ci, co);
    col2im(&dcols, b, s, ci)
}

fn grid_side(tokens: usize) -> Result<usize> {
    let s = (tokens as f64).sqrt().round() as usize;
    if s * s != tokens || s == 0 {
        return Err(Error::dim(format!(
            "{tokens} search tokens do not form a square grid"
        )));
    }
    Ok(s)
}

/// `x` is `[B × N2 × 2C]`; returns one score map per batch entry.
pub fn head_forward<T: Real>(
    params: &HeadParams<T>,
    buffers: &HeadBuffers<T>,
    x: &DenseArray<T>,
    mode: BnMode,
) -> Result<(Vec<ScoreMapOutput<T>>, HeadCache<T>)> {
    if x.ndim() != 3 || x.dim(2) != params.input_channels() {
        return Err(Error::dim(format!(
            "head expects [B × N2 × {}] features, got {:?}",
            params.input_channels(),
            x.shape()
        )));
    }
    let (b, n2) = (x.dim(0), x.dim(1));
    let s = grid_side(n2)?;
    let mut caches = Vec::with_capacity(3);
    for (branch, stats) in params.branches().iter().zip(&buffers.stats) {
        let mut h = x.data().to_vec();
        let mut layers = Vec::with_capacity(HEAD_DEPTH);
        for (layer, st) in branch.layers.iter().zip(stats) {
            let (next, cache) = layer_forward(layer, st, &h, b, s, mode);
            layers.push(cache);
            h = next;
        }
        let last = DenseArray::new(&[b * s * s, branch.out.input_dim()], h)?;
        let logits = branch.out.forward(&last)?;
        let probs = logits.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        caches.push(BranchCache {
            layers,
            last,
            probs,
        });
    }
    let per = s * s;
    let mut outs = Vec::with_capacity(b);
    for n in 0..b {
        outs.push(ScoreMapOutput {
            cls: DenseArray::new(&[s, s], caches[0].probs[n * per..(n + 1) * per].to_vec())?,
            offset: DenseArray::new(
                &[s, s, 2],
                caches[1].probs[2 * n * per..2 * (n + 1) * per].to_vec(),
            )?,
            size: DenseArray::new(
                &[s, s, 2],
                caches[2].probs[2 * n * per..2 * (n + 1) * per].to_vec(),
            )?,
        });
    }
    for o in &outs {
        o.cls.ensure_finite("score map")?;
    }
    Ok((
        outs,
        HeadCache {
            mode,
            batch: b,
            grid: s,
            branches: caches,
        },
    ))
}

/// `grads` holds `dL/d(output)` per batch entry in the shape of the outputs.
/// Returns `dL/dx`.
pub fn head_backward<T: Real>(
    params: &HeadParams<T>,
    cache: &HeadCache<T>,
    grads_out: &[ScoreMapOutput<T>],
    grads: &mut HeadParams<T>,
) -> Result<DenseArray<T>> {
    let (b, s) = (cache.batch, cache.grid);
    if grads_out.len() != b {
        return Err(Error::dim("one score-map gradient per batch entry expected"));
    }
    let mut dx = vec![T::zero(); b * s * s * params.input_channels()];
    let branch_grads = [&mut grads.cls, &mut grads.offset, &mut grads.size];
    for (k, ((branch, bc), bg)) in params
        .branches()
        .iter()
        .zip(&cache.branches)
        .zip(branch_grads)
        .enumerate()
    {
        let mut g_probs = Vec::with_capacity(bc.probs.len());
        for g in grads_out {
            let src = match k {
                0 => &g.cls,
                1 => &g.offset,
                _ => &g.size,
            };
            g_probs.extend_from_slice(src.data());
        }
        let g_logits: Vec<T> = g_probs
            .iter()
            .zip(&bc.probs)
            .map(|(&g, &p)| g * p * (T::one() - p))
            .collect();
        let g_logits = DenseArray::new(&[b * s * s, branch.out.output_dim()], g_logits)?;
        let mut g = branch.out.backward(&bc.last, &g_logits, &mut bg.out)?.into_data();
        for ((layer, lc), lg) in branch
            .layers
            .iter()
            .zip(&bc.layers)
            .zip(bg.layers.iter_mut())
            .rev()
        {
            g = layer_backward(layer, lc, &g, b, s, cache.mode, lg);
        }
        for (d, v) in dx.iter_mut().zip(g) {
            *d += v;
        }
    }
    DenseArray::new(&[b, s * s, params.input_channels()], dx)
}

/// Folds the batch statistics of a training pass into the running buffers.
pub fn update_running_stats<T: Real>(buffers: &mut HeadBuffers<T>, cache: &HeadCache<T>) {
    if cache.mode != BnMode::Train {
        return;
    }
    let m = T::lit(BN_MOMENTUM);
    let n = (cache.batch * cache.grid * cache.grid) as f64;
    let unbias = T::lit(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
    for (bs, bc) in buffers.stats.iter_mut().zip(&cache.branches) {
        for (st, lc) in bs.iter_mut().zip(&bc.layers) {
            for (r, &v) in st.mean.data_mut().iter_mut().zip(&lc.batch_mean) {
                *r = (T::one() - m) * *r + m * v;
            }
            for (r, &v) in st.var.data_mut().iter_mut().zip(&lc.batch_var) {
                *r = (T::one() - m) * *r + m * v * unbias;
            }
        }
    }
}
