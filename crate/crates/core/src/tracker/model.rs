//! The end-to-end tracker: per-modality patch embedding and block stack,
//! cross-modal fusion, and the prediction head.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::blocks::{
    backbone_backward, backbone_forward, fusion_backward, fusion_mamba, BackboneCache, BlockDims,
    Checkpoint, Embedding, FusionCache, FusionParams, TokenSeq, VimBlockParams,
};
use crate::error::{Error, Result};
use crate::numerics::{DenseArray, ParamTree, Real, Rng};
use crate::ssm::{Discretization, ScanConfig};
use crate::tracker::bbox::{centre_cell, make_cls_target, BBox, ScoreMapOutput};
use crate::tracker::head::{
    head_backward, head_forward, update_running_stats, BnMode, HeadBuffers, HeadCache, HeadParams,
};
use crate::tracker::loss::{total_loss_grad, LossBreakdown, LossWeights};

pub const IMAGE_CHANNELS: usize = 3;

/// Which inputs the model consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Fused,
    Rgb,
    Event,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Rgb, Modality::Event, Modality::Fused];

    pub fn uses_rgb(self) -> bool {
        self != Modality::Event
    }

    pub fn uses_event(self) -> bool {
        self != Modality::Rgb
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Fused => "fused",
            Modality::Rgb => "rgb",
            Modality::Event => "event",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Modality::Fused),
            "rgb" => Ok(Modality::Rgb),
            "event" => Ok(Modality::Event),
            other => Err(Error::config(format!(
                "unknown modality `{other}` (expected fused|rgb|event)"
            ))),
        }
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub channels: usize,
    pub depth: usize,
    pub state: usize,
    pub conv_width: usize,
    pub patch: usize,
    pub template_size: usize,
    pub search_size: usize,
    pub mode: Discretization,
    pub modality: Modality,
}

impl ModelConfig {
    /// Desk-scale model used for synthetic training.
    pub fn toy() -> Self {
        Self {
            channels: 32,
            depth: 2,
            state: 8,
            conv_width: 4,
            patch: 8,
            template_size: 24,
            search_size: 48,
            mode: Discretization::Exact,
            modality: Modality::Fused,
        }
    }

    /// Full-size configuration used only for the parameter and FLOP audit.
    pub fn full_scale() -> Self {
        Self {
            channels: 192,
            depth: 12,
            state: 16,
            conv_width: 4,
            patch: 16,
            template_size: 128,
            search_size: 256,
            mode: Discretization::Exact,
            modality: Modality::Fused,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("channels", self.channels),
            ("depth", self.depth),
            ("state", self.state),
            ("conv_width", self.conv_width),
            ("patch", self.patch),
        ];
        for (k, v) in nonzero {
            if v == 0 {
                return Err(Error::config(format!("{k} must be positive")));
            }
        }
        for (k, v) in [("template_size", self.template_size), ("search_size", self.search_size)] {
            if v == 0 || v % self.patch != 0 {
                return Err(Error::config(format!(
                    "{k} = {v} must be a positive multiple of patch = {}",
                    self.patch
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> BlockDims {
        BlockDims::standard(self.channels, self.state, self.conv_width)
    }

    pub fn scan(&self) -> ScanConfig {
        ScanConfig::new(self.mode)
    }

    /// Score-map side `S`.
    pub fn grid(&self) -> usize {
        self.search_size / self.patch
    }

    pub fn template_tokens(&self) -> usize {
        (self.template_size / self.patch).pow(2)
    }

    pub fn search_tokens(&self) -> usize {
        self.grid().pow(2)
    }

    pub fn head_input(&self) -> usize {
        match self.modality {
            Modality::Fused => 2 * self.channels,
            _ => self.channels,
        }
    }

    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        for (k, v) in [
            ("channels", self.channels),
            ("depth", self.depth),
            ("state", self.state),
            ("conv_width", self.conv_width),
            ("patch", self.patch),
            ("template_size", self.template_size),
            ("search_size", self.search_size),
        ] {
            m.insert(k.to_string(), v.to_string());
        }
        m.insert("ssm_mode".into(), self.mode.as_str().into());
        m.insert("modality".into(), self.modality.to_string());
        m
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        let num = |k: &str| -> Result<usize> {
            meta.get(k)
                .ok_or_else(|| Error::format(format!("checkpoint metadata lacks `{k}`")))?
                .parse()
                .map_err(|_| Error::format(format!("checkpoint metadata `{k}` is not an integer")))
        };
        let text = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::format(format!("checkpoint metadata lacks `{k}`")))
        };
        let cfg = Self {
            channels: num("channels")?,
            depth: num("depth")?,
            state: num("state")?,
            conv_width: num("conv_width")?,
            patch: num("patch")?,
            template_size: num("template_size")?,
            search_size: num("search_size")?,
            mode: text("ssm_mode")?.parse()?,
            modality: text("modality")?.parse()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Patch embedding plus block stack for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch<T> {
    pub embed: Embedding<T>,
    pub blocks: Vec<VimBlockParams<T>>,
}

impl<T: Real> Branch<T> {
    fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let embed = Embedding::init(
            cfg.patch,
            IMAGE_CHANNELS,
            cfg.channels,
            cfg.template_tokens(),
            cfg.search_tokens(),
            rng,
        );
        let blocks = (0..cfg.depth)
            .map(|_| VimBlockParams::init(cfg.dims(), rng))
            .collect();
        Self { embed, blocks }
    }
}

impl<T: Real> ParamTree<T> for Branch<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        self.embed.visit(&format!("{prefix}.embed"), out);
        self.blocks.visit(&format!("{prefix}.blocks"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        self.embed.visit_mut(&format!("{prefix}.embed"), out);
        self.blocks.visit_mut(&format!("{prefix}.blocks"), out);
    }
}

/// Every trainable array. Absent branches contribute nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerParams<T> {
    pub rgb: Option<Branch<T>>,
    pub event: Option<Branch<T>>,
    pub fusion: Option<FusionParams<T>>,
    pub head: HeadParams<T>,
}

impl<T: Real> TrackerParams<T> {
    /// Each component draws from its own stream so that a single-modality
    /// model shares its initial weights with the fused model of the same seed.
    pub fn init(cfg: &ModelConfig, rng: &Rng) -> Self {
        let m = cfg.modality;
        Self {
            rgb: m.uses_rgb().then(|| Branch::init(cfg, &mut rng.fork(10))),
            event: m.uses_event().then(|| Branch::init(cfg, &mut rng.fork(11))),
            fusion: (m == Modality::Fused).then(|| FusionParams::init(cfg.dims(), &mut rng.fork(12))),
            head: HeadParams::init(cfg.head_input(), &mut rng.fork(13)),
        }
    }
}

impl<T: Real> ParamTree<T> for TrackerParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        self.rgb.visit(&format!("{prefix}.rgb"), out);
        self.event.visit(&format!("{prefix}.event"), out);
        self.fusion.visit(&format!("{prefix}.fusion"), out);
        self.head.visit(&format!("{prefix}.head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        self.rgb.visit_mut(&format!("{prefix}.rgb"), out);
        self.event.visit_mut(&format!("{prefix}.event"), out);
        self.fusion.visit_mut(&format!("{prefix}.fusion"), out);
        self.head.visit_mut(&format!("{prefix}.head"), out);
    }
}

/// A batch of normalised crops, each `[B × size × size × 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<T> {
    pub rgb_template: DenseArray<T>,
    pub rgb_search: DenseArray<T>,
    pub event_template: DenseArray<T>,
    pub event_search: DenseArray<T>,
}

impl<T: Real> ModelInput<T> {
    pub fn batch(&self) -> usize {
        self.rgb_search.dim(0)
    }
}

#[derive(Clone, Debug)]
struct BranchCache<T> {
    template_tiles: DenseArray<T>,
    search_tiles: DenseArray<T>,
    backbone: BackboneCache<T>,
}

/// Final token features of each modality, after fusion when it is present.
#[derive(Clone, Debug)]
pub struct Features<T> {
    pub rgb: Option<TokenSeq<T>>,
    pub event: Option<TokenSeq<T>>,
}

#[derive(Clone, Debug)]
pub struct ModelCache<T> {
    pub features: Features<T>,
    rgb: Option<BranchCache<T>>,
    event: Option<BranchCache<T>>,
    fusion: Option<FusionCache<T>>,
    head: HeadCache<T>,
}

/// Parameters, batch-norm running statistics and the configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerModel<T> {
    pub config: ModelConfig,
    pub params: TrackerParams<T>,
    pub buffers: HeadBuffers<T>,
}

fn branch_forward<T: Real>(
    branch: &Branch<T>,
    template: &DenseArray<T>,
    search: &DenseArray<T>,
    cfg: &ModelConfig,
) -> Result<(TokenSeq<T>, BranchCache<T>)> {
    let (zt, template_tiles) = branch.embed.forward(template, cfg.patch, true)?;
    let (xs, search_tiles) = branch.embed.forward(search, cfg.patch, false)?;
    let (f, backbone) = backbone_forward(&zt, &xs, &branch.blocks, cfg.scan())?;
    Ok((
        f,
        BranchCache {
            template_tiles,
            search_tiles,
            backbone,
        },
    ))
}

fn branch_backward<T: Real>(
    branch: &Branch<T>,
    cache: &BranchCache<T>,
    grad: &DenseArray<T>,
    cfg: &ModelConfig,
    grads: &mut Branch<T>,
) -> Result<()> {
    let (gt, gs) = backbone_backward(&branch.blocks, &cache.backbone, grad, cfg.scan(), &mut grads.blocks)?;
    branch.embed.backward(&cache.template_tiles, &gt, true, &mut grads.embed)?;
    branch.embed.backward(&cache.search_tiles, &gs, false, &mut grads.embed)?;
    Ok(())
}

/// Channel-concatenates the search tokens of the present modalities into
/// `[B × N2 × Σ C]`.
fn head_features<T: Real>(parts: &[&TokenSeq<T>]) -> Result<DenseArray<T>> {
    let first = parts[0];
    let (b, t, split) = (first.batch(), first.tokens(), first.split());
    let n2 = t - split;
    let widths: Vec<usize> = parts.iter().map(|p| p.channels()).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(b * n2 * total);
    for i in 0..b {
        for tok in split..t {
            for (p, &c) in parts.iter().zip(&widths) {
                let start = (i * t + tok) * c;
                data.extend_from_slice(&p.data().data()[start..start + c]);
            }
        }
    }
    DenseArray::new(&[b, n2, total], data)
}

/// Inverse of [`head_features`]: scatters `[B × N2 × Σ C]` back onto
/// full-length token gradients, zero at template positions.
fn scatter_head_grad<T: Real>(
    g: &DenseArray<T>,
    shapes: &[([usize; 3], usize)],
) -> Result<Vec<DenseArray<T>>> {
    let total = g.dim(2);
    let mut outs: Vec<DenseArray<T>> = shapes.iter().map(|(s, _)| DenseArray::zeros(s)).collect();
    let mut offset = 0;
    for (out, &([b, t, c], split)) in outs.iter_mut().zip(shapes) {
        let n2 = t - split;
        for i in 0..b {
            for k in 0..n2 {
                let src = (i * n2 + k) * total + offset;
                let dst = (i * t + split + k) * c;
                out.data_mut()[dst..dst + c].copy_from_slice(&g.data()[src..src + c]);
            }
        }
        offset += c;
    }
    Ok(outs)
}

impl<T: Real> TrackerModel<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = TrackerParams::init(&config, &Rng::new(seed));
        let buffers = HeadBuffers::new(&params.head);
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    pub fn forward(
        &self,
        input: &ModelInput<T>,
        mode: BnMode,
    ) -> Result<(Vec<ScoreMapOutput<T>>, ModelCache<T>)> {
        let cfg = &self.config;
        let p = &self.params;
        let mut rgb = None;
        let mut event = None;
        let mut f_rgb = None;
        let mut f_event = None;
        if let Some(br) = &p.rgb {
            let (f, c) = branch_forward(br, &input.rgb_template, &input.rgb_search, cfg)?;
            f_rgb = Some(f);
            rgb = Some(c);
        }
        if let Some(br) = &p.event {
            let (f, c) = branch_forward(br, &input.event_template, &input.event_search, cfg)?;
            f_event = Some(f);
            event = Some(c);
        }
        let mut fusion = None;
        if let (Some(fp), Some(a), Some(b)) = (&p.fusion, &f_rgb, &f_event) {
            let (ra, eb, fc) = fusion_mamba(a, b, fp, cfg.scan())?;
            f_rgb = Some(ra);
            f_event = Some(eb);
            fusion = Some(fc);
        }
        let parts: Vec<&TokenSeq<T>> = f_rgb.iter().chain(f_event.iter()).collect();
        if parts.is_empty() {
            return Err(Error::config("model has no input branch"));
        }
        let x = head_features(&parts)?;
        let (outs, head) = head_forward(&p.head, &self.buffers, &x, mode)?;
        Ok((
            outs,
            ModelCache {
                features: Features {
                    rgb: f_rgb,
                    event: f_event,
                },
                rgb,
                event,
                fusion,
                head,
            },
        ))
    }

    /// Gradients of every parameter given `dL/d(outputs)`.
    pub fn backward(
        &self,
        cache: &ModelCache<T>,
        grads_out: &[ScoreMapOutput<T>],
    ) -> Result<TrackerParams<T>> {
        let p = &self.params;
        let cfg = &self.config;
        let mut grads = p.zeros_like();
        let dx = head_backward(&p.head, &cache.head, grads_out, &mut grads.head)?;
        let feats = &cache.features;
        let shapes: Vec<([usize; 3], usize)> = feats
            .rgb
            .iter()
            .chain(feats.event.iter())
            .map(|f| (f.shape(), f.split()))
            .collect();
        let mut scattered = scatter_head_grad(&dx, &shapes)?.into_iter();
        let mut g_rgb = feats.rgb.as_ref().and_then(|_| scattered.next());
        let mut g_event = feats.event.as_ref().and_then(|_| scattered.next());
        if let (Some(fp), Some(fc), Some(gr), Some(ge)) = (&p.fusion, &cache.fusion, &g_rgb, &g_event) {
            let fg = grads.fusion.as_mut().expect("fusion grads");
            let (dr, de) = fusion_backward(fp, fc, gr, ge, cfg.scan(), fg)?;
            g_rgb = Some(dr);
            g_event = Some(de);
        }
        if let (Some(br), Some(c), Some(g), Some(gb)) = (&p.rgb, &cache.rgb, &g_rgb, grads.rgb.as_mut()) {
            branch_backward(br, c, g, cfg, gb)?;
        }
        if let (Some(br), Some(c), Some(g), Some(gb)) =
            (&p.event, &cache.event, &g_event, grads.event.as_mut())
        {
            branch_backward(br, c, g, cfg, gb)?;
        }
        Ok(grads)
    }

    /// Forward pass, batch-mean loss and gradients. Batch-norm runs on batch
    /// statistics; the running buffers are updated afterwards.
    pub fn train_step_grads(
        &mut self,
        input: &ModelInput<T>,
        targets: &[BBox],
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, TrackerParams<T>)> {
        let (outs, cache) = self.forward(input, BnMode::Train)?;
        let (loss, g_out) = score_map_loss(&outs, targets, weights)?;
        let grads = self.backward(&cache, &g_out)?;
        update_running_stats(&mut self.buffers, &cache.head);
        Ok((loss, grads))
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = self.config.to_meta();
        meta.insert("precision".into(), (8 * T::WIDTH as usize).to_string());
        Checkpoint::from_params(self, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_meta(&ck.meta)?;
        let mut model = Self::init(config, 0)?;
        ck.load_into(&mut model)?;
        Ok(model)
    }
}

/// Parameters first, then the head's running statistics under `buffers.`.
impl<T: Real> ParamTree<T> for TrackerModel<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        self.params.visit(prefix, out);
        self.buffers.visit(&format!("{prefix}.buffers"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        self.params.visit_mut(prefix, out);
        self.buffers.visit_mut(&format!("{prefix}.buffers"), out);
    }
}

/// Batch-mean training loss. The box is read at the cell holding the target
/// centre. Returns the loss and `dL/d(outputs)`.
pub fn score_map_loss<T: Real>(
    outs: &[ScoreMapOutput<T>],
    targets: &[BBox],
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<ScoreMapOutput<T>>)> {
    if outs.len() != targets.len() || outs.is_empty() {
        return Err(Error::dim(format!(
            "{} score maps for {} targets",
            outs.len(),
            targets.len()
        )));
    }
    let inv_b = 1.0 / outs.len() as f64;
    let mut sum = LossBreakdown::default();
    let mut grads = Vec::with_capacity(outs.len());
    for (out, gt) in outs.iter().zip(targets) {
        let s = out.grid();
        let target: DenseArray<T> = make_cls_target(gt, s);
        let (ci, cj) = centre_cell(gt, s);
        let pred = out.box_at(ci, cj);
        let (l, g) = total_loss_grad(&out.cls, &target, &pred, gt, weights)?;
        sum.focal += l.focal * inv_b;
        sum.l1 += l.l1 * inv_b;
        sum.giou += l.giou * inv_b;
        sum.total += l.total * inv_b;
        let mut cls = g.cls;
        cls.scale(T::lit(inv_b));
        let mut offset = DenseArray::zeros(out.offset.shape());
        let mut size = DenseArray::zeros(out.size.shape());
        let k = ci * s + cj;
        let sf = s as f64;
        offset.data_mut()[2 * k] = T::lit(g.bbox[0] / sf * inv_b);
        offset.data_mut()[2 * k + 1] = T::lit(g.bbox[1] / sf * inv_b);
        size.data_mut()[2 * k] = T::lit(g.bbox[2] * inv_b);
        size.data_mut()[2 * k + 1] = T::lit(g.bbox[3] * inv_b);
        grads.push(ScoreMapOutput { cls, offset, size });
    }
    if !sum.total.is_finite() {
        return Err(Error::numeric("training loss", None));
    }
    Ok((sum, grads))
}
