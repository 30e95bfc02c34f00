//! Cross-modal fusion of the RGB and event backbone features.
//!
//! Each modality `m` contributes a scan output `y_m` computed from its own
//! normalized features. Branch `m` gates *both* scan outputs with its own
//! gate `SiLU(z_m)`, projects the sum back to `C` channels and adds it to
//! `F_m`:
//!
//! ```text
//! x_m = Linear^x_m(Norm_m(F_m))           y_m = SSM_m(SiLU(Conv_m(x_m)))
//! z_m = Linear^z_m(Norm_m(F_m))
//! F̃_m = F_m + Linear^out_m(y_rgb ⊙ SiLU(z_m) + y_event ⊙ SiLU(z_m))
//! ```

use crate::blocks::tokens::TokenSeq;
use crate::blocks::vim::BlockDims;
use crate::error::{Error, Result};
use crate::numerics::ops::silu_scalar;
use crate::numerics::{
    layer_norm, layer_norm_backward, silu_backward, DenseArray, LayerNorm, LayerNormCache, Linear,
    ParamTree, Real, Rng, LAYER_NORM_EPS,
};
use crate::ssm::{path_backward, path_forward, PathCache, ScanConfig, SsmParams};

/// Parameters owned by one modality inside the fusion block.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionBranch<T> {
    pub norm: LayerNorm<T>,
    pub proj_x: Linear<T>,
    pub proj_z: Linear<T>,
    pub path: SsmParams<T>,
    pub proj_out: Linear<T>,
}

impl<T: Real> FusionBranch<T> {
    pub fn init(dims: BlockDims, rng: &mut Rng) -> Self {
        let (c, e) = (dims.channels, dims.expanded);
        Self {
            norm: LayerNorm::new(c),
            proj_x: Linear::init(c, e, 0.02, rng),
            proj_z: Linear::init(c, e, 0.02, rng),
            path: SsmParams::init(e, dims.state, dims.conv_width, dims.dt_rank, rng),
            proj_out: Linear::init(e, c, 0.02, rng),
        }
    }

    pub fn zeros(dims: BlockDims) -> Self {
        let (c, e) = (dims.channels, dims.expanded);
        Self {
            norm: LayerNorm {
                scale: DenseArray::zeros(&[c]),
                bias: DenseArray::zeros(&[c]),
            },
            proj_x: Linear::zeros(c, e),
            proj_z: Linear::zeros(c, e),
            path: SsmParams::zeros(e, dims.state, dims.conv_width, dims.dt_rank),
            proj_out: Linear::zeros(e, c),
        }
    }
}

impl<T: Real> ParamTree<T> for FusionBranch<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        self.norm.visit(&format!("{prefix}.norm"), out);
        self.proj_x.visit(&format!("{prefix}.proj_x"), out);
        self.proj_z.visit(&format!("{prefix}.proj_z"), out);
        self.path.visit(&format!("{prefix}.ssm"), out);
        self.proj_out.visit(&format!("{prefix}.proj_out"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        self.norm.visit_mut(&format!("{prefix}.norm"), out);
        self.proj_x.visit_mut(&format!("{prefix}.proj_x"), out);
        self.proj_z.visit_mut(&format!("{prefix}.proj_z"), out);
        self.path.visit_mut(&format!("{prefix}.ssm"), out);
        self.proj_out.visit_mut(&format!("{prefix}.proj_out"), out);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<T> {
    pub rgb: FusionBranch<T>,
    pub event: FusionBranch<T>,
}

impl<T: Real> FusionParams<T> {
    pub fn init(dims: BlockDims, rng: &mut Rng) -> Self {
        Self {
            rgb: FusionBranch::init(dims, rng),
            event: FusionBranch::init(dims, rng),
        }
    }

    pub fn zeros(dims: BlockDims) -> Self {
        Self {
            rgb: FusionBranch::zeros(dims),
            event: FusionBranch::zeros(dims),
        }
    }
}

impl<T: Real> ParamTree<T> for FusionParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        self.rgb.visit(&format!("{prefix}.rgb"), out);
        self.event.visit(&format!("{prefix}.event"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        self.rgb.visit_mut(&format!("{prefix}.rgb"), out);
        self.event.visit_mut(&format!("{prefix}.event"), out);
    }
}

#[derive(Clone, Debug)]
struct BranchCache<T> {
    ln: LayerNormCache<T>,
    normed: DenseArray<T>,
    z: DenseArray<T>,
    /// `[B × T × E]` scan output of this modality
    y: DenseArray<T>,
    paths: Vec<PathCache<T>>,
    /// gated sum fed to `proj_out`
    mixed: DenseArray<T>,
}

#[derive(Clone, Debug)]
pub struct FusionCache<T> {
    rgb: BranchCache<T>,
    event: BranchCache<T>,
}

fn branch_scan<T: Real>(
    f: &DenseArray<T>,
    br: &FusionBranch<T>,
    cfg: ScanConfig,
) -> Result<BranchCache<T>> {
    let (b, t) = (f.dim(0), f.dim(1));
    let e = br.proj_x.output_dim();
    let (normed, ln) = layer_norm(f, &br.norm.scale, &br.norm.bias, T::lit(LAYER_NORM_EPS))?;
    let x = br.proj_x.forward(&normed)?;
    let z = br.proj_z.forward(&normed)?;
    let mut y = DenseArray::zeros(&[b, t, e]);
    let mut paths = Vec::with_capacity(b);
    for i in 0..b {
        let xi = DenseArray::new(&[t, e], x.data()[i * t * e..(i + 1) * t * e].to_vec())?;
        let (yi, pc) = path_forward(&br.path, &xi, cfg)?;
        y.data_mut()[i * t * e..(i + 1) * t * e].copy_from_slice(yi.data());
        paths.push(pc);
    }
    Ok(BranchCache {
        ln,
        normed,
        z,
        y,
        paths,
        mixed: DenseArray::zeros(&[0]),
    })
}

fn gate_mix<T: Real>(z: &DenseArray<T>, y_rgb: &DenseArray<T>, y_event: &DenseArray<T>) -> DenseArray<T> {
    let data = z
        .data()
        .iter()
        .zip(y_rgb.data().iter().zip(y_event.data()))
        .map(|(&z, (&a, &b))| {
            let g = silu_scalar(z);
            a * g + b * g
        })
        .collect();
    DenseArray::new(z.shape(), data).expect("gate shape")
}

pub fn fusion_mamba<T: Real>(
    f_rgb: &TokenSeq<T>,
    f_event: &TokenSeq<T>,
    params: &FusionParams<T>,
    cfg: ScanConfig,
) -> Result<(TokenSeq<T>, TokenSeq<T>, FusionCache<T>)> {
    if f_rgb.shape() != f_event.shape() || f_rgb.split() != f_event.split() {
        return Err(Error::dim(format!(
            "fusion inputs disagree: rgb {:?} vs event {:?}",
            f_rgb.shape(),
            f_event.shape()
        )));
    }
    if f_rgb.channels() != params.rgb.norm.width() {
        return Err(Error::dim(format!(
            "fusion expects {} channels, got {}",
            params.rgb.norm.width(),
            f_rgb.channels()
        )));
    }
    let mut rgb = branch_scan(f_rgb.data(), &params.rgb, cfg)?;
    let mut event = branch_scan(f_event.data(), &params.event, cfg)?;
    rgb.mixed = gate_mix(&rgb.z, &rgb.y, &event.y);
    event.mixed = gate_mix(&event.z, &rgb.y, &event.y);

    let mut out_rgb = params.rgb.proj_out.forward(&rgb.mixed)?;
    out_rgb.add_assign(f_rgb.data())?;
    let mut out_event = params.event.proj_out.forward(&event.mixed)?;
    out_event.add_assign(f_event.data())?;
    out_rgb.ensure_finite("fused rgb features")?;
    out_event.ensure_finite("fused event features")?;
    Ok((
        f_rgb.with_data(out_rgb)?,
        f_event.with_data(out_event)?,
        FusionCache { rgb, event },
    ))
}

/// Gradient of one branch's gated sum with respect to its gate input and
/// both scan outputs (accumulated into `g_y_rgb`, `g_y_event`).
fn gate_backward<T: Real>(
    cache: &BranchCache<T>,
    y_rgb: &DenseArray<T>,
    y_event: &DenseArray<T>,
    g_mixed: &DenseArray<T>,
    g_y_rgb: &mut DenseArray<T>,
    g_y_event: &mut DenseArray<T>,
) -> DenseArray<T> {
    let mut g_gate = DenseArray::zeros(cache.z.shape());
    for j in 0..g_mixed.len() {
        let g = g_mixed.data()[j];
        let gate = silu_scalar(cache.z.data()[j]);
        g_y_rgb.data_mut()[j] += g * gate;
        g_y_event.data_mut()[j] += g * gate;
        g_gate.data_mut()[j] = g * (y_rgb.data()[j] + y_event.data()[j]);
    }
    silu_backward(&cache.z, &g_gate)
}

fn branch_backward<T: Real>(
    br: &FusionBranch<T>,
    cache: &BranchCache<T>,
    g_z: &DenseArray<T>,
    g_y: &DenseArray<T>,
    cfg: ScanConfig,
    grads: &mut FusionBranch<T>,
) -> Result<DenseArray<T>> {
    let (b, t, e) = (g_y.dim(0), g_y.dim(1), g_y.dim(2));
    let mut g_x = DenseArray::zeros(&[b, t, e]);
    for (i, pc) in cache.paths.iter().enumerate() {
        let gy = DenseArray::new(&[t, e], g_y.data()[i * t * e..(i + 1) * t * e].to_vec())?;
        let gx = path_backward(&br.path, pc, &gy, cfg, &mut grads.path)?;
        g_x.data_mut()[i * t * e..(i + 1) * t * e].copy_from_slice(gx.data());
    }
    let mut g_normed = br.proj_x.backward(&cache.normed, &g_x, &mut grads.proj_x)?;
    g_normed.add_assign(&br.proj_z.backward(&cache.normed, g_z, &mut grads.proj_z)?)?;
    Ok(layer_norm_backward(
        &cache.ln,
        &br.norm.scale,
        &g_normed,
        &mut grads.norm,
    ))
}

/// Returns `(dL/dF_rgb, dL/dF_event)`.
pub fn fusion_backward<T: Real>(
    params: &FusionParams<T>,
    cache: &FusionCache<T>,
    grad_rgb: &DenseArray<T>,
    grad_event: &DenseArray<T>,
    cfg: ScanConfig,
    grads: &mut FusionParams<T>,
) -> Result<(DenseArray<T>, DenseArray<T>)> {
    let (rc, ec) = (&cache.rgb, &cache.event);
    let gm_rgb = params
        .rgb
        .proj_out
        .backward(&rc.mixed, grad_rgb, &mut grads.rgb.proj_out)?;
    let gm_event = params
        .event
        .proj_out
        .backward(&ec.mixed, grad_event, &mut grads.event.proj_out)?;

    let mut g_y_rgb = DenseArray::zeros(rc.y.shape());
    let mut g_y_event = DenseArray::zeros(ec.y.shape());
    let gz_rgb = gate_backward(rc, &rc.y, &ec.y, &gm_rgb, &mut g_y_rgb, &mut g_y_event);
    let gz_event = gate_backward(ec, &rc.y, &ec.y, &gm_event, &mut g_y_rgb, &mut g_y_event);

    let mut d_rgb = branch_backward(&params.rgb, rc, &gz_rgb, &g_y_rgb, cfg, &mut grads.rgb)?;
    let mut d_event =
        branch_backward(&params.event, ec, &gz_event, &g_y_event, cfg, &mut grads.event)?;
    d_rgb.add_assign(grad_rgb)?;
    d_event.add_assign(grad_event)?;
    Ok((d_rgb, d_event))
}
