//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ssmtrack_core::blocks::{
    fusion_backward, fusion_mamba, vim_block_backward, vim_block_forward, BlockDims, FusionParams,
    TokenSeq, VimBlockParams,
};
use ssmtrack_core::events::{synth_generate, SequenceData, SynthConfig};
use ssmtrack_core::numerics::gradcheck::max_rel_error;
use ssmtrack_core::ssm::{
    selective_scan_backward, selective_scan_parallel, selective_scan_seq, zoh_discretize,
    Discretization, ScanConfig, ScanInputs, SsmParams,
};
use ssmtrack_core::tracker::{
    closed_form_params, count_params, estimate_flops, eval_metrics, focal_loss, giou_loss,
    head_backward, head_forward, make_cls_target, mean_iou, score_map_loss, total_loss,
    track_sequence, train_toy, BBox, BnMode, HeadBuffers, HeadParams, LossWeights, Modality,
    ModelConfig, ModelInput, ScoreMapOutput, TrackOptions, TrackRecord, TrackerModel,
    TrackerParams, TrainConfig,
};
use ssmtrack_core::events::GroundTruthBox;
use ssmtrack_core::{DenseArray, ParamTree, Rng};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------------------
// dense oracle for the scan

type Mat = Vec<Vec<f64>>;

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let m = b[0].len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for k in 0..b.len() {
            for j in 0..m {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Matrix exponential by scaling and squaring with a 24-term Taylor series.
fn expm(m: &Mat) -> Mat {
    let n = m.len();
    let norm = m
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let a: Mat = m.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
    let mut result: Mat = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut term = result.clone();
    for k in 1..=24 {
        term = mat_mul(&term, &a);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = mat_mul(&result, &result);
    }
    result
}

/// Runs the recurrence with a full `N × N` state matrix per channel. The
/// exact step comes from the exponential of the augmented matrix
/// `[[ΔA, ΔB], [0, 0]]`, whose top-right column is `A⁻¹(e^{ΔA} − I)B`.
fn dense_oracle(p: &SsmParams<f64>, inp: &ScanInputs<f64>, mode: Discretization) -> Vec<f64> {
    let (l, d, n) = (inp.x.dim(0), inp.x.dim(1), inp.b.dim(1));
    let mut y = vec![0.0; l * d];
    for ch in 0..d {
        let a: Vec<f64> = (0..n).map(|s| -p.a_log.data()[ch * n + s].exp()).collect();
        let mut h = vec![0.0; n];
        for t in 0..l {
            let dt = inp.delta.data()[t * d + ch];
            let x = inp.x.data()[t * d + ch];
            let b = &inp.b.data()[t * n..(t + 1) * n];
            let mut aug = vec![vec![0.0; n + 1]; n + 1];
            for i in 0..n {
                // the state matrix is stored densely; only the diagonal is non-zero
                for j in 0..n {
                    aug[i][j] = if i == j { dt * a[i] } else { 0.0 };
                }
                aug[i][n] = dt * b[i];
            }
            let e = expm(&aug);
            let mut next = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += e[i][j] * h[j];
                }
                let input = match mode {
                    Discretization::Exact => e[i][n],
                    Discretization::Simplified => dt * b[i],
                };
                next[i] = acc + input * x;
            }
            h = next;
            let c = &inp.c.data()[t * n..(t + 1) * n];
            y[t * d + ch] = c.iter().zip(&h).map(|(c, h)| c * h).sum::<f64>() + p.d_skip.data()[ch] * x;
        }
    }
    y
}

fn random_scan(rng: &mut Rng, l: usize, d: usize, n: usize) -> (SsmParams<f64>, ScanInputs<f64>) {
    let mut p = SsmParams::zeros(d, n, 1, 1);
    p.a_log = DenseArray::uniform(&[d, n], -2.0, 1.5, rng);
    p.d_skip = DenseArray::randn(&[d], 1.0, rng);
    let inputs = ScanInputs {
        x: DenseArray::randn(&[l, d], 1.0, rng),
        b: DenseArray::randn(&[l, n], 1.0, rng),
        c: DenseArray::randn(&[l, n], 1.0, rng),
        delta: DenseArray::uniform(&[l, d], 1e-3, 1.0, rng),
    };
    (p, inputs)
}

fn cast_params(p: &SsmParams<f64>) -> SsmParams<f32> {
    SsmParams {
        a_log: p.a_log.cast(),
        d_skip: p.d_skip.cast(),
        conv_kernel: p.conv_kernel.cast(),
        conv_bias: p.conv_bias.cast(),
        proj_bcdt: p.proj_bcdt.cast(),
        dt_proj: p.dt_proj.cast(),
        dt_bias: p.dt_bias.cast(),
    }
}

fn cast_inputs(i: &ScanInputs<f64>) -> ScanInputs<f32> {
    ScanInputs {
        x: i.x.cast(),
        b: i.b.cast(),
        c: i.c.cast(),
        delta: i.delta.cast(),
    }
}

/// Largest absolute difference over the larger of 1 and the oracle's largest magnitude.
fn scaled_diff(got: &[f64], oracle: &[f64]) -> f64 {
    let scale = oracle.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    got.iter().zip(oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

fn scan_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    let (mut worst64, mut worst32) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let (l, d, n) = (1 + rng.below(64), 1 + rng.below(8), 1 + rng.below(8));
        let (p, inp) = random_scan(&mut rng, l, d, n);
        let mode = if i % 4 == 3 { Discretization::Simplified } else { Discretization::Exact };
        let cfg = ScanConfig::new(mode);
        let oracle = dense_oracle(&p, &inp, mode);
        let seq = selective_scan_seq(&p, &inp, cfg).unwrap();
        let par = selective_scan_parallel(&p, &inp, cfg).unwrap();
        worst64 = worst64
            .max(scaled_diff(seq.y.data(), &oracle))
            .max(scaled_diff(par.y.data(), &oracle));
        let (p32, i32_) = (cast_params(&p), cast_inputs(&inp));
        let seq32 = selective_scan_seq(&p32, &i32_, cfg).unwrap().y.to_f64_vec();
        let par32 = selective_scan_parallel(&p32, &i32_, cfg).unwrap().y.to_f64_vec();
        let oracle32 = dense_oracle(
            &SsmParams { a_log: p32.a_log.cast(), d_skip: p32.d_skip.cast(), ..p.clone() },
            &ScanInputs { x: i32_.x.cast(), b: i32_.b.cast(), c: i32_.c.cast(), delta: i32_.delta.cast() },
            mode,
        );
        worst32 = worst32
            .max(scaled_diff(&seq32, &oracle32))
            .max(scaled_diff(&par32, &oracle32))
            .max(scaled_diff(&par32, &seq32));
    }
    let t = secs(start.elapsed());
    outcome(
        worst64 <= 1e-12 && worst32 <= 1e-5 && t < 10.0,
        format!("100 instances; 64-bit {worst64:.2e} (≤1e-12), 32-bit {worst32:.2e} (≤1e-5), {t:.2} s (<10 s)"),
    )
}

// ---------------------------------------------------------------------------
// double-double reference for the ZOH input factor

#[derive(Clone, Copy)]
struct Dd(f64, f64);

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd(s, (a - (s - bb)) + (b - bb))
}

impl Dd {
    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.0, o.0);
        let e = s.1 + self.1 + o.1;
        let r = two_sum(s.0, e);
        Dd(r.0, r.1)
    }

    fn mul_f(self, f: f64) -> Dd {
        let p = self.0 * f;
        let e = self.0.mul_add(f, -p) + self.1 * f;
        let r = two_sum(p, e);
        Dd(r.0, r.1)
    }

    fn div_f(self, f: f64) -> Dd {
        let q = self.0 / f;
        let r = self.add(Dd(-q * f, -q.mul_add(f, -q * f)));
        let q2 = (r.0 + r.1) / f;
        let s = two_sum(q, q2);
        Dd(s.0, s.1)
    }
}

/// `(e^z − 1)/z = Σ_{k≥0} z^k/(k+1)!` summed in double-double until the
/// terms vanish.
fn phi_reference(z: f64) -> f64 {
    let mut term = Dd(1.0, 0.0);
    let mut sum = Dd(1.0, 0.0);
    for k in 1..200 {
        term = term.mul_f(z).div_f((k + 1) as f64);
        sum = sum.add(term);
        if term.0.abs() < 1e-40 {
            break;
        }
    }
    sum.0 + sum.1
}

fn zoh_factor(a: f64, dt: f64, mode: Discretization) -> f64 {
    let one = |v: f64| DenseArray::from_f64(&[1, 1], &[v]).unwrap();
    let (_, bb) = zoh_discretize::<f64>(&one(a), &one(1.0), &one(dt), mode).unwrap();
    bb.data()[0]
}

fn zoh_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut taylor_points = 0;
    let mut count = 0;
    for i in 0..=80 {
        let a = -(10f64.powf(1.0 - 9.0 * i as f64 / 80.0));
        for j in 0..=60 {
            let dt = 10f64.powf(-6.0 + 6.0 * j as f64 / 60.0);
            let z = a * dt;
            if z.abs() < 1e-4 {
                taylor_points += 1;
            }
            let expect = dt * phi_reference(z);
            let got = zoh_factor(a, dt, Discretization::Exact);
            worst = worst.max((got - expect).abs() / expect.abs());
            count += 1;
        }
    }
    // exact and simplified differ by ~|a|Δ²/2; fit the log-log slope
    let mut slopes = Vec::new();
    for a in [-0.5, -2.0, -8.0] {
        let pts: Vec<(f64, f64)> = (0..10)
            .map(|k| {
                let dt = 10f64.powf(-5.0 + 0.3 * k as f64);
                let err = (zoh_factor(a, dt, Discretization::Exact)
                    - zoh_factor(a, dt, Discretization::Simplified))
                .abs();
                (dt.ln(), err.ln())
            })
            .collect();
        let n = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let cov: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let var: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        slopes.push(cov / var);
    }
    let slope_ok = slopes.iter().all(|s| (s - 2.0).abs() < 0.05);
    let t = secs(start.elapsed());
    outcome(
        worst <= 1e-12 && taylor_points > 0 && slope_ok && t < 5.0,
        format!(
            "{count} (a, Δ) points incl. {taylor_points} Taylor-region, worst rel {worst:.2e} (≤1e-12); \
             exact−simplified slopes {:.3}/{:.3}/{:.3} (≈2); {t:.2} s (<5 s)",
            slopes[0], slopes[1], slopes[2]
        ),
    )
}

// ---------------------------------------------------------------------------
// gradient suite

/// Central difference of `f` at `x0` over a ladder of steps. Each estimate
/// is scored by its disagreement with the next coarser one plus the rounding
/// bound `ε·|f|/h`, and the best-scoring estimate is returned. This avoids
/// both rounding noise on tiny gradients and non-smooth points (ReLU, |·|)
/// straddled by a coarse step.
fn ladder_derivative(mut f: impl FnMut(f64) -> f64, x0: f64) -> f64 {
    let steps = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let mut d = Vec::with_capacity(steps.len());
    let mut noise = Vec::with_capacity(steps.len());
    for &h in &steps {
        let (plus, minus) = (f(x0 + h), f(x0 - h));
        d.push((plus - minus) / (2.0 * h));
        noise.push(4.0 * f64::EPSILON * plus.abs().max(minus.abs()) / h);
    }
    let score = |i: usize| (d[i] - d[i - 1]).abs() + noise[i];
    let best = (1..d.len()).min_by(|&i, &j| score(i).total_cmp(&score(j))).unwrap();
    d[best]
}

fn ladder_grad(mut f: impl FnMut(&DenseArray<f64>) -> f64, x: &DenseArray<f64>) -> DenseArray<f64> {
    let mut probe = x.clone();
    let mut out = DenseArray::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        out.data_mut()[i] = ladder_derivative(
            |v| {
                probe.data_mut()[i] = v;
                let r = f(&probe);
                probe.data_mut()[i] = orig;
                r
            },
            orig,
        );
    }
    out
}

/// Worst per-group relative error over up to `per_group` evenly strided
/// entries of every parameter array.
fn ladder_tree<P: ParamTree<f64> + Clone>(
    params: &P,
    analytic: &P,
    mut loss: impl FnMut(&P) -> f64,
    per_group: usize,
) -> f64 {
    let mut probe = params.clone();
    let grads: Vec<DenseArray<f64>> = analytic.named().into_iter().map(|(_, a)| a.clone()).collect();
    let mut worst = 0.0f64;
    for (gi, g) in grads.iter().enumerate() {
        let stride = g.len().div_ceil(per_group).max(1);
        let idx: Vec<usize> = (0..g.len()).step_by(stride).collect();
        let (mut num, mut ana) = (Vec::new(), Vec::new());
        for &i in &idx {
            let orig = params.named()[gi].1.data()[i];
            num.push(ladder_derivative(
                |v| {
                    probe.named_mut()[gi].1.data_mut()[i] = v;
                    let r = loss(&probe);
                    probe.named_mut()[gi].1.data_mut()[i] = orig;
                    r
                },
                orig,
            ));
            ana.push(g.data()[i]);
        }
        let n = DenseArray::new(&[idx.len()], num).unwrap();
        let a = DenseArray::new(&[idx.len()], ana).unwrap();
        worst = worst.max(max_rel_error(&a, &n));
    }
    worst
}

fn perturb<P: ParamTree<f64>>(p: &mut P, rng: &mut Rng) {
    for (name, a) in p.named_mut() {
        if name.ends_with("dt_bias") {
            a.fill(0.5);
        } else if name.ends_with("norm.scale") {
            for v in a.data_mut() {
                *v = 1.0 + 0.2 * rng.normal();
            }
        } else {
            for v in a.data_mut() {
                *v += 0.2 * rng.normal();
            }
        }
    }
}

fn weighted_sum(a: &DenseArray<f64>, w: &DenseArray<f64>) -> f64 {
    a.data().iter().zip(w.data()).map(|(x, y)| x * y).sum()
}

fn grad_scan(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (l, d, n) = (2 + rng.below(12), 1 + rng.below(4), 1 + rng.below(4));
    let (p, mut inp) = random_scan(&mut rng, l, d, n);
    inp.delta = DenseArray::uniform(&[l, d], 0.05, 0.8, &mut rng);
    let mode = if seed % 2 == 0 { Discretization::Exact } else { Discretization::Simplified };
    let cfg = ScanConfig::new(mode);
    let w = DenseArray::randn(&[l, d], 1.0, &mut rng);
    let g = selective_scan_backward(&p, &inp, &w, cfg).unwrap();
    let loss = |p: &SsmParams<f64>, i: &ScanInputs<f64>| weighted_sum(&selective_scan_seq(p, i, cfg).unwrap().y, &w);
    let mut worst = 0.0f64;
    let fd_x = ladder_grad(|x| loss(&p, &ScanInputs { x: x.clone(), ..inp.clone() }), &inp.x);
    let fd_b = ladder_grad(|b| loss(&p, &ScanInputs { b: b.clone(), ..inp.clone() }), &inp.b);
    let fd_c = ladder_grad(|c| loss(&p, &ScanInputs { c: c.clone(), ..inp.clone() }), &inp.c);
    let fd_dt = ladder_grad(|t| loss(&p, &ScanInputs { delta: t.clone(), ..inp.clone() }), &inp.delta);
    let fd_a = ladder_grad(|a| loss(&SsmParams { a_log: a.clone(), ..p.clone() }, &inp), &p.a_log);
    let fd_d = ladder_grad(|s| loss(&SsmParams { d_skip: s.clone(), ..p.clone() }, &inp), &p.d_skip);
    for (a, n) in [(&g.x, fd_x), (&g.b, fd_b), (&g.c, fd_c), (&g.delta, fd_dt), (&g.a_log, fd_a), (&g.d_skip, fd_d)] {
        worst = worst.max(max_rel_error(a, &n));
    }
    worst
}

fn grad_vim(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let dims = BlockDims::standard(6, 3, 3);
    let mut p = VimBlockParams::<f64>::init(dims, &mut rng);
    perturb(&mut p, &mut rng);
    let cfg = ScanConfig::new(Discretization::Exact);
    let x = TokenSeq::new(DenseArray::randn(&[2, 7, 6], 1.0, &mut rng), 2).unwrap();
    let w = DenseArray::randn(&[2, 7, 6], 1.0, &mut rng);
    let (_, cache) = vim_block_forward(&x, &p, cfg).unwrap();
    let mut grads = VimBlockParams::zeros(dims);
    let gx = vim_block_backward(&p, &cache, &w, cfg, &mut grads).unwrap();
    let fwd = |p: &VimBlockParams<f64>, x: &TokenSeq<f64>| weighted_sum(vim_block_forward(x, p, cfg).unwrap().0.data(), &w);
    let mut worst = ladder_tree(&p, &grads, |q| fwd(q, &x), 8);
    let fd = ladder_grad(|d| fwd(&p, &x.with_data(d.clone()).unwrap()), x.data());
    worst = worst.max(max_rel_error(&gx, &fd));
    worst
}

fn grad_fusion(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let dims = BlockDims::standard(6, 3, 3);
    let mut p = FusionParams::<f64>::init(dims, &mut rng);
    perturb(&mut p, &mut rng);
    let cfg = ScanConfig::new(Discretization::Exact);
    let r = TokenSeq::new(DenseArray::randn(&[2, 6, 6], 1.0, &mut rng), 2).unwrap();
    let e = TokenSeq::new(DenseArray::randn(&[2, 6, 6], 1.0, &mut rng), 2).unwrap();
    let (w1, w2) = (DenseArray::randn(&[2, 6, 6], 1.0, &mut rng), DenseArray::randn(&[2, 6, 6], 1.0, &mut rng));
    let fwd = |p: &FusionParams<f64>, r: &TokenSeq<f64>, e: &TokenSeq<f64>| {
        let (a, b, _) = fusion_mamba(r, e, p, cfg).unwrap();
        weighted_sum(a.data(), &w1) + weighted_sum(b.data(), &w2)
    };
    let (_, _, cache) = fusion_mamba(&r, &e, &p, cfg).unwrap();
    let mut grads = FusionParams::zeros(dims);
    let (gr, ge) = fusion_backward(&p, &cache, &w1, &w2, cfg, &mut grads).unwrap();
    let mut worst = ladder_tree(&p, &grads, |q| fwd(q, &r, &e), 8);
    let fr = ladder_grad(|d| fwd(&p, &r.with_data(d.clone()).unwrap(), &e), r.data());
    let fe = ladder_grad(|d| fwd(&p, &r, &e.with_data(d.clone()).unwrap()), e.data());
    worst = worst.max(max_rel_error(&gr, &fr)).max(max_rel_error(&ge, &fe));
    worst
}

fn grad_head(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (c, s) = (8, 4);
    let mut p = HeadParams::<f64>::init(c, &mut rng);
    perturb(&mut p, &mut rng);
    let buffers = HeadBuffers::new(&p);
    let x = DenseArray::randn(&[2, s * s, c], 1.0, &mut rng);
    let ws: Vec<ScoreMapOutput<f64>> = (0..2)
        .map(|_| ScoreMapOutput {
            cls: DenseArray::randn(&[s, s], 1.0, &mut rng),
            offset: DenseArray::randn(&[s, s, 2], 1.0, &mut rng),
            size: DenseArray::randn(&[s, s, 2], 1.0, &mut rng),
        })
        .collect();
    let fwd = |p: &HeadParams<f64>, x: &DenseArray<f64>| {
        let (outs, _) = head_forward(p, &buffers, x, BnMode::Train).unwrap();
        outs.iter()
            .zip(&ws)
            .map(|(o, w)| weighted_sum(&o.cls, &w.cls) + weighted_sum(&o.offset, &w.offset) + weighted_sum(&o.size, &w.size))
            .sum::<f64>()
    };
    let (_, cache) = head_forward(&p, &buffers, &x, BnMode::Train).unwrap();
    let mut grads = p.zeros_like();
    let gx = head_backward(&p, &cache, &ws, &mut grads).unwrap();
    let mut worst = ladder_tree(&p, &grads, |q| fwd(q, &x), 8);
    worst = worst.max(max_rel_error(&gx, &ladder_grad(|d| fwd(&p, d), &x)));
    worst
}

fn model_input(cfg: &ModelConfig, b: usize, rng: &mut Rng) -> ModelInput<f64> {
    let t = [b, cfg.template_size, cfg.template_size, 3];
    let s = [b, cfg.search_size, cfg.search_size, 3];
    ModelInput {
        rgb_template: DenseArray::randn(&t, 1.0, rng),
        rgb_search: DenseArray::randn(&s, 1.0, rng),
        event_template: DenseArray::randn(&t, 1.0, rng),
        event_search: DenseArray::randn(&s, 1.0, rng),
    }
}

fn grad_model(cfg: ModelConfig, seed: u64, per_group: usize) -> f64 {
    let mut rng = Rng::new(seed);
    let mut model = TrackerModel::<f64>::init(cfg, seed).unwrap();
    perturb(&mut model.params, &mut rng);
    let x = model_input(&cfg, 2, &mut rng);
    let targets = [
        BBox::new(rng.uniform_in(0.3, 0.7), rng.uniform_in(0.3, 0.7), 0.3, 0.25),
        BBox::new(rng.uniform_in(0.3, 0.7), rng.uniform_in(0.3, 0.7), 0.2, 0.35),
    ];
    let w = LossWeights::default();
    let (_, grads) = model.clone().train_step_grads(&x, &targets, &w).unwrap();
    let buffers = model.buffers.clone();
    let loss = |p: &TrackerParams<f64>| {
        let probe = TrackerModel { config: cfg, params: p.clone(), buffers: buffers.clone() };
        let (outs, _) = probe.forward(&x, BnMode::Train).unwrap();
        score_map_loss(&outs, &targets, &w).unwrap().0.total
    };
    ladder_tree(&model.params, &grads, loss, per_group)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let tiny = |m| ModelConfig {
        channels: 8,
        depth: 1,
        state: 2,
        conv_width: 3,
        patch: 4,
        template_size: 8,
        search_size: 16,
        mode: Discretization::Exact,
        modality: m,
    };
    let mut worst = [0.0f64; 5];
    let mut spent = [0.0f64; 6];
    let mut timed = |k: usize, f: &mut dyn FnMut() -> f64| {
        let t0 = Instant::now();
        let v = f();
        spent[k] += secs(t0.elapsed());
        v
    };
    for seed in 0..20u64 {
        worst[0] = worst[0].max(timed(0, &mut || grad_scan(seed)));
        worst[1] = worst[1].max(timed(1, &mut || grad_vim(seed)));
        worst[2] = worst[2].max(timed(2, &mut || grad_fusion(seed)));
        worst[3] = worst[3].max(timed(3, &mut || grad_head(seed)));
        let m = Modality::ALL[seed as usize % 3];
        worst[4] = worst[4].max(timed(4, &mut || grad_model(tiny(m), seed, 4)));
    }
    // the actual toy configuration, fused, one entry per parameter group
    let toy = timed(5, &mut || grad_model(ModelConfig::toy(), 99, 1));
    let t = secs(start.elapsed());
    let all = worst.iter().chain([&toy]).all(|&w| w <= 1e-4);
    outcome(
        all && t < 120.0,
        format!(
            "20 seeds, max rel: scan {:.1e}, block {:.1e}, fusion {:.1e}, head {:.1e}, model {:.1e}, toy-size model {toy:.1e} (≤1e-4); \
             {t:.1} s (<120 s; scan {:.0}, block {:.0}, fusion {:.0}, head {:.0}, model {:.0}, toy-size {:.0})",
            worst[0], worst[1], worst[2], worst[3], worst[4], spent[0], spent[1], spent[2], spent[3], spent[4], spent[5]
        ),
    )
}

// ---------------------------------------------------------------------------

fn residual_identities() -> Outcome {
    let mut exact = true;
    for seed in 0..5 {
        let mut rng = Rng::new(seed);
        let dims = BlockDims::standard(8, 4, 4);
        let x = TokenSeq::new(DenseArray::<f64>::randn(&[2, 9, 8], 3.0, &mut rng), 4).unwrap();
        let y = TokenSeq::new(DenseArray::<f64>::randn(&[2, 9, 8], 3.0, &mut rng), 4).unwrap();
        for mode in [Discretization::Exact, Discretization::Simplified] {
            let cfg = ScanConfig::new(mode);
            let (out, _) = vim_block_forward(&x, &VimBlockParams::zeros(dims), cfg).unwrap();
            let (a, b, _) = fusion_mamba(&x, &y, &FusionParams::zeros(dims), cfg).unwrap();
            let bits = |p: &TokenSeq<f64>, q: &TokenSeq<f64>| {
                p.data().data().iter().zip(q.data().data()).all(|(u, v)| u.to_bits() == v.to_bits())
            };
            exact &= bits(&out, &x) && bits(&a, &x) && bits(&b, &y);
        }
    }
    outcome(exact, "zero-weight block and fusion block, 5 seeds × 2 modes, 64-bit bit patterns")
}

fn loss_contracts() -> Outcome {
    let unit = BBox::from_xywh(0.0, 0.0, 1.0, 1.0);
    let cases = [
        (unit, 0.0),
        (BBox::from_xywh(1.0, 0.0, 1.0, 1.0), 1.0),
        (BBox::from_xywh(2.0, 0.0, 1.0, 1.0), 4.0 / 3.0),
    ];
    let giou_err = cases
        .iter()
        .map(|(b, e)| (giou_loss(&unit, b).unwrap() - e).abs())
        .fold(0.0, f64::max);
    let mut rng = Rng::new(5);
    let gt = BBox::new(0.4, 0.6, 0.2, 0.3);
    let pred = BBox::new(0.45, 0.5, 0.25, 0.2);
    let target: DenseArray<f64> = make_cls_target(&gt, 8);
    let cls = DenseArray::uniform(&[8, 8], 0.01, 0.99, &mut rng);
    let w = LossWeights::default();
    let l = total_loss(&cls, &target, &pred, &gt, &w).unwrap();
    let weights_exact = (w.focal, w.l1, w.giou) == (1.0, 14.0, 1.0)
        && l.total == 1.0 * l.focal + 14.0 * l.l1 + 1.0 * l.giou;
    let perfect = target.map(|v| if v == 1.0 { 1.0 } else { 0.0 });
    let focal = focal_loss(&perfect, &target).unwrap();
    outcome(
        giou_err <= 1e-9 && weights_exact && focal <= 1e-5,
        format!("GIoU cases max err {giou_err:.1e} (≤1e-9); weighted sum exact: {weights_exact}; perfect focal {focal:.1e} (≤1e-5)"),
    )
}

fn metric_oracle() -> Outcome {
    // gt 20×20 at (50, 50); prediction shifted by dx along x, same size
    let shifts = [0.0, 2.0, 4.0, 6.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0];
    let records: Vec<TrackRecord> = shifts
        .iter()
        .enumerate()
        .map(|(k, &dx)| TrackRecord {
            frame_index: k + 1,
            pred: BBox::new(50.0 + dx, 50.0, 20.0, 20.0),
            gt: GroundTruthBox::new(k + 1, 50.0, 50.0, 20.0, 20.0).unwrap(),
            seconds: 0.0,
        })
        .collect();
    // IoU = (20−dx)/(20+dx): 1, .818, .667, .538, .333, .143, then 0.
    // Frames with IoU > τ over τ = 0, .05, …, .95: 6,6,6,5,5,5,5,4,4,4,4,3,3,3,2,2,2,1,1,1 → 72/200
    let sr = 36.0;
    // centre errors ≤ 20 px: 7 of 10
    let pr = 70.0;
    // normalised errors 0,.1,.2,.3,.5,… ; counts ≤ t for t = 0..0.5 step .01 sum to 145 → 14.5/51
    let npr = 100.0 * 14.5 / 51.0;
    let m = eval_metrics(&records).unwrap();
    let err = (m.sr - sr).abs().max((m.pr - pr).abs()).max((m.npr - npr).abs());
    outcome(
        err <= 1e-9,
        format!("10-frame fixture: sr {:.6} pr {:.6} npr {:.6}, max err {err:.1e} (≤1e-9)", m.sr, m.pr, m.npr),
    )
}

// ---------------------------------------------------------------------------
// toy training

fn synth_set(seeds: std::ops::Range<u64>, prefix: &str) -> Vec<SequenceData> {
    seeds
        .map(|s| {
            let cfg = SynthConfig {
                frames: 50,
                hdr_every: 2,
                ..SynthConfig::default()
            };
            SequenceData::from((format!("{prefix}{s}"), synth_generate(&cfg, s).unwrap()))
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn toy_training() -> (Outcome, Outcome) {
    let start = Instant::now();
    let train = synth_set(0..4, "train");
    let test = synth_set(1000..1003, "test");
    let hdr = train.iter().map(|s| s.frames.len()).sum::<usize>();
    let mut ious: [Vec<f64>; 3] = Default::default();
    let mut ratios = Vec::new();
    for seed in 0..3u64 {
        for (mi, m) in Modality::ALL.iter().enumerate() {
            let cfg = ModelConfig { modality: *m, ..ModelConfig::toy() };
            let tc = TrainConfig { seed, ..TrainConfig::default() };
            let out = train_toy::<f32>(cfg, &tc, &train, None).unwrap();
            let l = &out.losses;
            if *m == Modality::Fused {
                ratios.push(mean(&l[l.len() - 100..]) / mean(&l[..100]));
            }
            let mut recs = Vec::new();
            for s in &test {
                recs.extend(track_sequence(&out.model, s, &s.gts[0], TrackOptions::default()).unwrap().records);
            }
            let v = mean_iou(&recs);
            println!("    toy run: seed {seed} {m:<6} test mean-IoU {v:.3}");
            ious[mi].push(v);
        }
    }
    let t = secs(start.elapsed());
    let (rgb, event, fused) = (median(ious[0].clone()), median(ious[1].clone()), median(ious[2].clone()));
    let best_single = rgb.max(event);
    let passed = fused >= 0.5 && fused >= best_single - 0.02 && t <= 1800.0;
    let main = outcome(
        passed,
        format!(
            "{hdr} training frames (half clipped), 3 held-out sequences; median mean-IoU fused {fused:.3} (≥0.5), \
             rgb {rgb:.3}, event {event:.3} (fused ≥ max − 0.02); {:.1} min (≤30 min)",
            t / 60.0
        ),
    );
    let ratio = median(ratios);
    let halving = outcome(ratio <= 0.5, format!("median fused last-100/first-100 loss ratio {ratio:.3} (≤0.5)"));
    (main, halving)
}

// ---------------------------------------------------------------------------

fn run_cli(args: &[&str], dir: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_ssmtrack"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.cfg"), "steps = 30\nsequences = 2\nframes = 20\nseed = 7\n").unwrap();
    let mut ok = true;
    for run in ["a", "b"] {
        ok &= run_cli(&["--workers", "1", "synth", "--config", "run.cfg", "--out", &format!("data_{run}")], d);
        ok &= run_cli(
            &["--workers", "1", "train", "--config", "run.cfg", "--data", "data_a", "--out", &format!("{run}.ckpt")],
            d,
        );
    }
    let synth_same = ok && files(&d.join("data_a")) == files(&d.join("data_b"));
    let read = |f: &str| fs::read(d.join(f)).unwrap_or_default();
    let train_same = ok
        && !read("a.ckpt").is_empty()
        && read("a.ckpt") == read("b.ckpt")
        && read("a.loss.txt") == read("b.loss.txt");
    outcome(
        synth_same && train_same,
        format!("synth tree identical: {synth_same}; checkpoint and loss log identical: {train_same}"),
    )
}

fn bench_report() -> Outcome {
    let full = ModelConfig::full_scale();
    let params = count_params(&TrackerModel::<f32>::init(full, 0).unwrap().to_checkpoint());
    let closed = closed_form_params(&full);
    let six = estimate_flops(&ModelConfig { depth: 6, ..full });
    let twelve = estimate_flops(&full);
    let linear = twelve.backbone == 2 * six.backbone
        && twelve.embed == six.embed
        && twelve.fusion == six.fusion
        && twelve.head == six.head
        && twelve.total() - six.total() == six.backbone;
    let in_range = (4_000_000..=14_000_000).contains(&params);
    outcome(
        in_range && linear && params == closed,
        format!(
            "full-scale params {params} ({:.2}M vs reference 7; {:.1} MB at 32-bit) in [4M, 14M]: {in_range}; \
             backbone FLOPs L=12/L=6 = {}/{} exact 2×: {linear}",
            params as f64 / 1e6,
            4.0 * params as f64 / 1e6,
            twelve.backbone,
            six.backbone
        ),
    )
}

fn toy_criteria() -> Vec<(&'static str, Outcome)> {
    let (toy, halving) = toy_training();
    vec![("toy training", toy), ("toy training loss halving (supplementary)", halving)]
}

fn single(name: &'static str, f: fn() -> Outcome) -> impl Fn() -> Vec<(&'static str, Outcome)> {
    move || vec![(name, f())]
}

/// An optional argument restricts the run to criteria whose name contains it.
fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: Vec<(&str, Box<dyn Fn() -> Vec<(&'static str, Outcome)>>)> = vec![
        ("scan oracle equivalence", Box::new(single("scan oracle equivalence", scan_oracle))),
        ("ZOH correctness", Box::new(single("ZOH correctness", zoh_correctness))),
        ("gradient suite", Box::new(single("gradient suite", gradient_suite))),
        ("residual identities", Box::new(single("residual identities", residual_identities))),
        ("loss contracts", Box::new(single("loss contracts", loss_contracts))),
        ("metric oracle", Box::new(single("metric oracle", metric_oracle))),
        ("determinism", Box::new(single("determinism", determinism))),
        ("bench report", Box::new(single("bench report", bench_report))),
        ("toy training", Box::new(toy_criteria)),
    ];
    let mut failures = 0;
    for (name, run) in &criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        for (label, o) in run() {
            if !o.passed {
                failures += 1;
            }
            println!("{} {label}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
