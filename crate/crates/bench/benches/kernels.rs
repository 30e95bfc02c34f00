use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ssmtrack_bench::{block_problem, scan_problem};
use ssmtrack_core::blocks::{vim_block_backward, vim_block_forward, BlockDims, VimBlockParams};
use ssmtrack_core::events::{synth_generate, SequenceData, SynthConfig};
use ssmtrack_core::ssm::{
    selective_scan_backward, selective_scan_parallel, selective_scan_seq, Discretization, ScanConfig,
};
use ssmtrack_core::tracker::{train_toy, ModelConfig, TrainConfig};
use ssmtrack_core::DenseArray;

fn scans(c: &mut Criterion) {
    let cfg = ScanConfig::new(Discretization::Exact);
    let mut g = c.benchmark_group("scan");
    for len in [64, 256, 1024] {
        let (p, x) = scan_problem::<f32>(len, 64, 16, 1);
        g.bench_with_input(BenchmarkId::new("sequential", len), &len, |b, _| {
            b.iter(|| selective_scan_seq(&p, &x, cfg).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("parallel", len), &len, |b, _| {
            b.iter(|| selective_scan_parallel(&p, &x, cfg).unwrap())
        });
        let gy = DenseArray::full(&[len, 64], 1.0f32);
        g.bench_with_input(BenchmarkId::new("backward", len), &len, |b, _| {
            b.iter(|| selective_scan_backward(&p, &x, &gy, cfg).unwrap())
        });
    }
    g.finish();
}

fn block(c: &mut Criterion) {
    let cfg = ScanConfig::new(Discretization::Exact);
    let (p, x) = block_problem::<f32>(8, 45, 32, 8, 2);
    let mut g = c.benchmark_group("vim_block");
    g.bench_function("forward", |b| b.iter(|| vim_block_forward(&x, &p, cfg).unwrap()));
    let (out, cache) = vim_block_forward(&x, &p, cfg).unwrap();
    g.bench_function("backward", |b| {
        b.iter(|| {
            let mut grads = VimBlockParams::zeros(BlockDims::standard(32, 8, 4));
            vim_block_backward(&p, &cache, out.data(), cfg, &mut grads).unwrap()
        })
    });
    g.finish();
}

fn train_steps(c: &mut Criterion) {
    let data: Vec<SequenceData> = (0..2)
        .map(|i| {
            let s = SynthConfig { frames: 10, ..Default::default() };
            SequenceData::from((format!("s{i}"), synth_generate(&s, i).unwrap()))
        })
        .collect();
    let tc = TrainConfig { steps: 5, ..Default::default() };
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("toy_fused_5_steps", |b| {
        b.iter(|| train_toy::<f32>(ModelConfig::toy(), &tc, &data, None).unwrap())
    });
    g.finish();
}

criterion_group!(benches, scans, block, train_steps);
criterion_main!(benches);
