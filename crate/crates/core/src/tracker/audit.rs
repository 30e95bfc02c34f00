//! Parameter counting and an analytic FLOP estimate for one forward pass.

use crate::blocks::Checkpoint;
use crate::tracker::model::{ModelConfig, Modality, IMAGE_CHANNELS};

/// Output channels of the score, offset and size branches.
const HEAD_OUTPUTS: [usize; 3] = [1, 2, 2];
const HEAD_LAYERS: usize = 4;

/// Trainable parameters stored in a checkpoint (running statistics excluded).
pub fn count_params(ck: &Checkpoint) -> usize {
    ck.arrays
        .iter()
        .filter(|(name, _)| !name.starts_with("buffers."))
        .map(|(_, a)| a.data.len())
        .sum()
}

/// Bytes needed to store the trainable parameters at the given width.
pub fn param_bytes(params: usize, width_bytes: usize) -> usize {
    params * width_bytes
}

fn modalities(cfg: &ModelConfig) -> usize {
    if cfg.modality == Modality::Fused {
        2
    } else {
        1
    }
}

/// Per-layer widths of a head branch, halving from the input.
fn head_widths(input: usize) -> [usize; HEAD_LAYERS + 1] {
    let mut w = [input; HEAD_LAYERS + 1];
    for k in 1..=HEAD_LAYERS {
        w[k] = (input >> k).max(1);
    }
    w
}

/// Parameters of one selective-scan path of inner width `e`.
fn path_params(cfg: &ModelConfig) -> usize {
    let d = cfg.dims();
    let (e, n, k, r) = (d.expanded, d.state, d.conv_width, d.dt_rank);
    e * n + e + k * e + e + e * (2 * n + r) + r * e + e
}

/// Parameters of one bidirectional block.
pub fn block_params(cfg: &ModelConfig) -> usize {
    let (c, e) = (cfg.channels, cfg.dims().expanded);
    2 * c + 2 * (c * e + e) + 2 * path_params(cfg) + e * c + c
}

/// Closed-form parameter count from the configuration alone.
pub fn closed_form_params(cfg: &ModelConfig) -> usize {
    let c = cfg.channels;
    let e = cfg.dims().expanded;
    let tokens = cfg.template_tokens() + cfg.search_tokens();
    let embed = cfg.patch * cfg.patch * IMAGE_CHANNELS * c + c + tokens * c;
    let per_modality = embed + cfg.depth * block_params(cfg);
    let fusion = if cfg.modality == Modality::Fused {
        2 * (2 * c + 2 * (c * e + e) + path_params(cfg) + e * c + c)
    } else {
        0
    };
    let w = head_widths(cfg.head_input());
    let mut head = 0;
    for out in HEAD_OUTPUTS {
        for k in 0..HEAD_LAYERS {
            head += 9 * w[k] * w[k + 1] + 2 * w[k + 1];
        }
        head += w[HEAD_LAYERS] * out + out;
    }
    modalities(cfg) * per_modality + fusion + head
}

/// FLOPs (2 × multiply-accumulates) by component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopBreakdown {
    pub embed: u64,
    pub backbone: u64,
    pub fusion: u64,
    pub head: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.embed + self.backbone + self.fusion + self.head
    }
}

/// Multiply-accumulates of one scan path over `t` tokens: depthwise conv,
/// the B/C/Δ projection, the Δ up-projection, and per state element the
/// decay, input and readout products.
fn path_macs(cfg: &ModelConfig, t: u64) -> u64 {
    let d = cfg.dims();
    let (e, n, k, r) = (
        d.expanded as u64,
        d.state as u64,
        d.conv_width as u64,
        d.dt_rank as u64,
    );
    t * e * k + t * e * (2 * n + r) + t * r * e + 3 * t * e * n
}

/// Analytic FLOP count for one forward pass on a single template/search pair.
/// Only linear maps, convolutions and scan steps are counted.
pub fn estimate_flops(cfg: &ModelConfig) -> FlopBreakdown {
    let m = modalities(cfg) as u64;
    let c = cfg.channels as u64;
    let e = cfg.dims().expanded as u64;
    let t = (cfg.template_tokens() + cfg.search_tokens()) as u64;
    let p2 = (cfg.patch * cfg.patch * IMAGE_CHANNELS) as u64;
    let embed = m * t * p2 * c;
    let block = 2 * t * c * e + 2 * path_macs(cfg, t) + t * e * c;
    let backbone = m * cfg.depth as u64 * block;
    let fusion = if cfg.modality == Modality::Fused {
        2 * (2 * t * c * e + path_macs(cfg, t) + t * e * c)
    } else {
        0
    };
    let s2 = cfg.search_tokens() as u64;
    let w = head_widths(cfg.head_input());
    let mut head = 0u64;
    for out in HEAD_OUTPUTS {
        for k in 0..HEAD_LAYERS {
            head += s2 * 9 * (w[k] * w[k + 1]) as u64;
        }
        head += s2 * (w[HEAD_LAYERS] * out) as u64;
    }
    FlopBreakdown {
        embed: 2 * embed,
        backbone: 2 * backbone,
        fusion: 2 * fusion,
        head: 2 * head,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::model::TrackerModel;

    #[test]
    fn closed_form_matches_model_for_every_modality() {
        for m in Modality::ALL {
            let cfg = ModelConfig {
                modality: m,
                ..ModelConfig::toy()
            };
            let model = TrackerModel::<f32>::init(cfg, 0).unwrap();
            assert_eq!(count_params(&model.to_checkpoint()), closed_form_params(&cfg), "{m}");
            assert_eq!(model.num_params(), closed_form_params(&cfg));
        }
    }

    #[test]
    fn backbone_params_linear_in_depth() {
        let a = ModelConfig::toy();
        let b = ModelConfig { depth: 2 * a.depth, ..a };
        let base = ModelConfig { depth: 0, ..a };
        let pa = closed_form_params(&a) - closed_form_params(&base);
        let pb = closed_form_params(&b) - closed_form_params(&base);
        assert_eq!(pb, 2 * pa);
    }

    #[test]
    fn backbone_flops_linear_in_depth() {
        let six = ModelConfig { depth: 6, ..ModelConfig::full_scale() };
        let twelve = ModelConfig::full_scale();
        let (a, b) = (estimate_flops(&six), estimate_flops(&twelve));
        assert_eq!(b.backbone, 2 * a.backbone);
        assert_eq!(a.head, b.head);
    }

    #[test]
    fn full_scale_is_in_range() {
        let n = closed_form_params(&ModelConfig::full_scale());
        assert!((4_000_000..=14_000_000).contains(&n), "{n}");
    }
}
