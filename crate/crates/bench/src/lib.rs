//! Input builders shared by the benchmarks.

use ssmtrack_core::blocks::{BlockDims, TokenSeq, VimBlockParams};
use ssmtrack_core::ssm::{ScanInputs, SsmParams};
use ssmtrack_core::{DenseArray, Real, Rng};

/// A random scan problem of `len` steps, `channels` channels and state size `state`.
pub fn scan_problem<T: Real>(len: usize, channels: usize, state: usize, seed: u64) -> (SsmParams<T>, ScanInputs<T>) {
    let mut rng = Rng::new(seed);
    let params = SsmParams::init(channels, state, 4, 1, &mut rng);
    let inputs = ScanInputs {
        x: DenseArray::randn(&[len, channels], 1.0, &mut rng),
        b: DenseArray::randn(&[len, state], 1.0, &mut rng),
        c: DenseArray::randn(&[len, state], 1.0, &mut rng),
        delta: DenseArray::uniform(&[len, channels], 1e-3, 0.1, &mut rng),
    };
    (params, inputs)
}

/// Block parameters and a token batch of the given shape.
pub fn block_problem<T: Real>(
    batch: usize,
    tokens: usize,
    channels: usize,
    state: usize,
    seed: u64,
) -> (VimBlockParams<T>, TokenSeq<T>) {
    let mut rng = Rng::new(seed);
    let params = VimBlockParams::init(BlockDims::standard(channels, state, 4), &mut rng);
    let x = DenseArray::randn(&[batch, tokens, channels], 1.0, &mut rng);
    (params, TokenSeq::new(x, tokens / 5).expect("token split"))
}
