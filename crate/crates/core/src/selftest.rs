//! Built-in invariant checks run by `ssmtrack selftest`, all in 64-bit.

use crate::blocks::{fusion_mamba, vim_block_forward, BlockDims, FusionParams, TokenSeq, VimBlockParams};
use crate::error::Result;
use crate::numerics::gradcheck::check_tree;
use crate::numerics::{DenseArray, ParamTree, Rng};
use crate::ssm::{
    selective_scan_parallel, selective_scan_seq, state_matrix, zoh_discretize, Discretization,
    ScanConfig, ScanInputs, SsmParams,
};
use crate::tracker::head::BnMode;
use crate::tracker::loss::{focal_loss, LossWeights};
use crate::tracker::{
    closed_form_params, eval_metrics, giou_loss, make_cls_target, score_map_loss, BBox, Modality,
    ModelConfig, ModelInput, TrackRecord, TrackerModel, TrackerParams,
};
use crate::events::GroundTruthBox;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, worst: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: worst <= tol,
        detail: format!("worst {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn random_scan(rng: &mut Rng, l: usize, d: usize, n: usize) -> (SsmParams<f64>, ScanInputs<f64>) {
    let mut p = SsmParams::zeros(d, n, 1, 1);
    p.a_log = DenseArray::uniform(&[d, n], -1.0, 1.5, rng);
    p.d_skip = DenseArray::randn(&[d], 1.0, rng);
    let inputs = ScanInputs {
        x: DenseArray::randn(&[l, d], 1.0, rng),
        b: DenseArray::randn(&[l, n], 1.0, rng),
        c: DenseArray::randn(&[l, n], 1.0, rng),
        delta: DenseArray::uniform(&[l, d], 1e-3, 0.5, rng),
    };
    (p, inputs)
}

/// `y_t = Σ_{s≤t} C_t · (Π_{s<r≤t} Ā_r) · B̄_s x_s + D x_t`, summed term by term.
fn unrolled(p: &SsmParams<f64>, inp: &ScanInputs<f64>, mode: Discretization) -> Result<Vec<f64>> {
    let (l, d, n) = (inp.x.dim(0), inp.x.dim(1), inp.b.dim(1));
    let (a_bar, b_bar) = zoh_discretize(&state_matrix(p), &inp.b, &inp.delta, mode)?;
    let idx = |t: usize, ch: usize, s: usize| (t * d + ch) * n + s;
    let mut y = vec![0.0; l * d];
    for t in 0..l {
        for ch in 0..d {
            let mut acc = p.d_skip.data()[ch] * inp.x.data()[t * d + ch];
            for s in 0..n {
                for src in 0..=t {
                    let mut decay = 1.0;
                    for r in src + 1..=t {
                        decay *= a_bar.data()[idx(r, ch, s)];
                    }
                    acc += inp.c.data()[t * n + s]
                        * decay
                        * b_bar.data()[idx(src, ch, s)]
                        * inp.x.data()[src * d + ch];
                }
            }
            y[t * d + ch] = acc;
        }
    }
    Ok(y)
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn check_scans() -> Result<CheckResult> {
    let mut rng = Rng::new(1);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (l, d, n) = (1 + rng.below(24), 1 + rng.below(4), 1 + rng.below(6));
        let (p, inp) = random_scan(&mut rng, l, d, n);
        let mode = if i % 2 == 0 { Discretization::Exact } else { Discretization::Simplified };
        let cfg = ScanConfig::new(mode);
        let seq = selective_scan_seq(&p, &inp, cfg)?;
        let par = selective_scan_parallel(&p, &inp, cfg)?;
        let oracle = unrolled(&p, &inp, mode)?;
        worst = worst
            .max(rel_diff(seq.y.data(), &oracle))
            .max(rel_diff(par.y.data(), &oracle));
    }
    Ok(result("scan kernels agree with the unrolled sum", worst, 1e-12))
}

fn check_zoh() -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for &a in &[-10.0f64, -3.0, -1.0, -0.1, -1e-4, -1e-8] {
        for &dt in &[1e-6f64, 1e-3, 0.1, 1.0] {
            let (_, bb) = zoh_discretize::<f64>(
                &DenseArray::from_f64(&[1, 1], &[a])?,
                &DenseArray::from_f64(&[1, 1], &[1.0])?,
                &DenseArray::from_f64(&[1, 1], &[dt])?,
                Discretization::Exact,
            )?;
            let z: f64 = a * dt;
            let expect = dt * z.exp_m1() / z;
            worst = worst.max((bb.data()[0] - expect).abs() / expect.abs());
        }
    }
    Ok(result("exact ZOH input factor", worst, 1e-12))
}

fn check_identities() -> Result<CheckResult> {
    let mut rng = Rng::new(2);
    let dims = BlockDims::standard(6, 3, 3);
    let x: TokenSeq<f64> = TokenSeq::new(DenseArray::randn(&[2, 7, 6], 1.0, &mut rng), 3)?;
    let y: TokenSeq<f64> = TokenSeq::new(DenseArray::randn(&[2, 7, 6], 1.0, &mut rng), 3)?;
    let cfg = ScanConfig::default();
    let (out, _) = vim_block_forward(&x, &VimBlockParams::<f64>::zeros(dims), cfg)?;
    let (fr, fe, _) = fusion_mamba(&x, &y, &FusionParams::zeros(dims), cfg)?;
    let exact = out == x && fr == x && fe == y;
    Ok(CheckResult {
        name: "zero-weight blocks are identities",
        passed: exact,
        detail: if exact { "bitwise".into() } else { "outputs differ".into() },
    })
}

fn tiny_config(modality: Modality) -> ModelConfig {
    ModelConfig {
        channels: 8,
        depth: 1,
        state: 2,
        conv_width: 3,
        patch: 4,
        template_size: 8,
        search_size: 16,
        mode: Discretization::Exact,
        modality,
    }
}

fn check_model_gradients() -> Result<CheckResult> {
    let mut worst = 0.0f64;
    let targets = [BBox::new(0.45, 0.55, 0.3, 0.25), BBox::new(0.6, 0.3, 0.2, 0.35)];
    for m in Modality::ALL {
        let cfg = tiny_config(m);
        let mut model = TrackerModel::<f64>::init(cfg, 5)?;
        let mut rng = Rng::new(6);
        for (name, a) in model.params.named_mut() {
            if name.ends_with("dt_bias") {
                a.fill(0.5);
            } else if !name.contains("norm.scale") {
                for v in a.data_mut() {
                    *v += 0.2 * rng.normal();
                }
            }
        }
        let (ts, ss) = ([2, 8, 8, 3], [2, 16, 16, 3]);
        let x = ModelInput {
            rgb_template: DenseArray::randn(&ts, 1.0, &mut rng),
            rgb_search: DenseArray::randn(&ss, 1.0, &mut rng),
            event_template: DenseArray::randn(&ts, 1.0, &mut rng),
            event_search: DenseArray::randn(&ss, 1.0, &mut rng),
        };
        let w = LossWeights::default();
        let (_, grads) = model.clone().train_step_grads(&x, &targets, &w)?;
        let buffers = model.buffers.clone();
        let loss = |p: &TrackerParams<f64>| {
            let probe = TrackerModel {
                config: cfg,
                params: p.clone(),
                buffers: buffers.clone(),
            };
            probe
                .forward(&x, BnMode::Train)
                .and_then(|(outs, _)| score_map_loss(&outs, &targets, &w))
                .map_or(f64::NAN, |(l, _)| l.total)
        };
        for c in check_tree(&model.params, &grads, loss, 1e-4, 4)? {
            worst = worst.max(c.rel_error);
        }
    }
    Ok(result("model gradients match central differences", worst, 1e-4))
}

fn check_losses() -> Result<CheckResult> {
    let unit = BBox::from_xywh(0.0, 0.0, 1.0, 1.0);
    let mut worst = 0.0f64;
    for (other, expect) in [
        (unit, 0.0),
        (BBox::from_xywh(1.0, 0.0, 1.0, 1.0), 1.0),
        (BBox::from_xywh(2.0, 0.0, 1.0, 1.0), 4.0 / 3.0),
    ] {
        worst = worst.max((giou_loss(&unit, &other)? - expect).abs());
    }
    let target: DenseArray<f64> = make_cls_target(&BBox::new(0.5, 0.5, 0.2, 0.2), 8);
    let perfect = target.map(|v| if v == 1.0 { 1.0 } else { 0.0 });
    worst = worst.max((focal_loss(&perfect, &target)? - 1e-5).max(0.0));
    Ok(result("GIoU hand cases and perfect focal loss", worst, 1e-9))
}

fn check_metrics() -> Result<CheckResult> {
    let records: Vec<TrackRecord> = (1..6)
        .map(|k| -> Result<TrackRecord> {
            let gt = GroundTruthBox::new(k, 20.0 + k as f64, 30.0, 10.0, 8.0)?;
            Ok(TrackRecord {
                frame_index: k,
                pred: BBox::new(gt.cx, gt.cy, gt.w, gt.h),
                gt,
                seconds: 0.0,
            })
        })
        .collect::<Result<_>>()?;
    let m = eval_metrics(&records)?;
    let worst = [m.sr, m.pr, m.npr].iter().map(|v| (v - 100.0).abs()).fold(0.0, f64::max);
    Ok(result("perfect tracking scores 100", worst, 1e-9))
}

fn check_param_audit() -> Result<CheckResult> {
    let mut mismatches = 0;
    for m in Modality::ALL {
        let cfg = ModelConfig {
            modality: m,
            ..ModelConfig::toy()
        };
        if TrackerModel::<f64>::init(cfg, 0)?.num_params() != closed_form_params(&cfg) {
            mismatches += 1;
        }
    }
    Ok(CheckResult {
        name: "parameter count matches the closed form",
        passed: mismatches == 0,
        detail: format!("{mismatches} mismatching modalities"),
    })
}

/// Runs every check. An error inside a check is reported as a failure.
pub fn run_all() -> Vec<CheckResult> {
    let checks: [(&'static str, fn() -> Result<CheckResult>); 7] = [
        ("scan kernels", check_scans),
        ("zoh", check_zoh),
        ("identities", check_identities),
        ("gradients", check_model_gradients),
        ("losses", check_losses),
        ("metrics", check_metrics),
        ("audit", check_param_audit),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            f().unwrap_or_else(|e| CheckResult {
                name,
                passed: false,
                detail: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
