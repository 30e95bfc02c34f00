use crate::numerics::{DenseArray, ParamTree, Real, Rng};
use crate::numerics::ops::softplus_scalar;

/// Parameters of one selective-SSM path: causal depthwise conv, the
/// input-dependent `B`/`C`/`Δ` projections, and the diagonal state matrix.
///
/// `A = −exp(a_log)` so every diagonal entry is strictly negative. `Δ` comes
/// from a low-rank map: `Δ = softplus(r · dt_proj + dt_bias)` where `r` is the
/// last `R` columns of `x' · proj_bcdt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams<T> {
    /// `[D × N]`
    pub a_log: DenseArray<T>,
    /// `[D]`
    pub d_skip: DenseArray<T>,
    /// `[K × D]`
    pub conv_kernel: DenseArray<T>,
    /// `[D]`
    pub conv_bias: DenseArray<T>,
    /// `[D × (2N + R)]`, columns ordered `B | C | r`.
    pub proj_bcdt: DenseArray<T>,
    /// `[R × D]`
    pub dt_proj: DenseArray<T>,
    /// `[D]`
    pub dt_bias: DenseArray<T>,
}

/// Range of `Δ` at initialisation.
pub const DT_INIT_MIN: f64 = 1e-3;
pub const DT_INIT_MAX: f64 = 1e-1;

impl<T: Real> SsmParams<T> {
    /// All-zero parameters (`A = −1`, no skip).
    pub fn zeros(channels: usize, state: usize, conv_width: usize, dt_rank: usize) -> Self {
        Self {
            a_log: DenseArray::zeros(&[channels, state]),
            d_skip: DenseArray::zeros(&[channels]),
            conv_kernel: DenseArray::zeros(&[conv_width, channels]),
            conv_bias: DenseArray::zeros(&[channels]),
            proj_bcdt: DenseArray::zeros(&[channels, 2 * state + dt_rank]),
            dt_proj: DenseArray::zeros(&[dt_rank, channels]),
            dt_bias: DenseArray::zeros(&[channels]),
        }
    }

    /// Seeded initialisation: `−A` geometric over `[1, N]` per channel,
    /// `Δ` log-uniform in `[1e-3, 1e-1]`, unit skip.
    pub fn init(
        channels: usize,
        state: usize,
        conv_width: usize,
        dt_rank: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut p = Self::zeros(channels, state, conv_width, dt_rank);
        let ln_n = (state as f64).ln();
        for ch in 0..channels {
            for s in 0..state {
                let frac = if state > 1 {
                    s as f64 / (state - 1) as f64
                } else {
                    0.0
                };
                p.a_log.data_mut()[ch * state + s] = T::lit(frac * ln_n);
            }
        }
        p.d_skip.fill(T::one());
        let bound = 1.0 / (conv_width as f64).sqrt();
        p.conv_kernel = DenseArray::uniform(&[conv_width, channels], -bound, bound, rng);
        p.proj_bcdt = DenseArray::randn(&[channels, 2 * state + dt_rank], 0.02, rng);
        let dt_std = 1.0 / (dt_rank as f64).sqrt();
        p.dt_proj = DenseArray::uniform(&[dt_rank, channels], -dt_std, dt_std, rng);
        let (lo, hi) = (DT_INIT_MIN.ln(), DT_INIT_MAX.ln());
        p.dt_bias = DenseArray::from_fn(&[channels], |_| {
            let dt = rng.uniform_in(lo, hi).exp();
            // inverse softplus
            T::lit(dt + (-(-dt).exp_m1()).ln())
        });
        debug_assert!(p
            .dt_bias
            .data()
            .iter()
            .all(|&b| softplus_scalar(b).as_f64() <= DT_INIT_MAX * (1.0 + 1e-4)));
        p
    }

    pub fn channels(&self) -> usize {
        self.a_log.dim(0)
    }

    pub fn state_size(&self) -> usize {
        self.a_log.dim(1)
    }

    pub fn conv_width(&self) -> usize {
        self.conv_kernel.dim(0)
    }

    pub fn dt_rank(&self) -> usize {
        self.dt_proj.dim(0)
    }
}

impl<T: Real> ParamTree<T> for SsmParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        out.push((format!("{prefix}.a_log"), &self.a_log));
        out.push((format!("{prefix}.d_skip"), &self.d_skip));
        out.push((format!("{prefix}.conv_kernel"), &self.conv_kernel));
        out.push((format!("{prefix}.conv_bias"), &self.conv_bias));
        out.push((format!("{prefix}.proj_bcdt"), &self.proj_bcdt));
        out.push((format!("{prefix}.dt_proj"), &self.dt_proj));
        out.push((format!("{prefix}.dt_bias"), &self.dt_bias));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        out.push((format!("{prefix}.a_log"), &mut self.a_log));
        out.push((format!("{prefix}.d_skip"), &mut self.d_skip));
        out.push((format!("{prefix}.conv_kernel"), &mut self.conv_kernel));
        out.push((format!("{prefix}.conv_bias"), &mut self.conv_bias));
        out.push((format!("{prefix}.proj_bcdt"), &mut self.proj_bcdt));
        out.push((format!("{prefix}.dt_proj"), &mut self.dt_proj));
        out.push((format!("{prefix}.dt_bias"), &mut self.dt_bias));
    }
}
