use crate::error::{Error, Result};
use crate::numerics::{DenseArray, ParamTree, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every parameter array, in `named()` order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new<T: Real, P: ParamTree<T>>(params: &P, config: AdamWConfig) -> Self {
        let sizes: Vec<usize> = params.named().iter().map(|(_, a)| a.len()).collect();
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One decoupled-weight-decay Adam update. Decay is applied to the weights
/// first, then the bias-corrected adaptive step.
pub fn adamw_step<T: Real, P: ParamTree<T>>(
    params: &mut P,
    grads: &P,
    state: &mut OptimState,
) -> Result<()> {
    let g_named = grads.named();
    let mut p_named = params.named_mut();
    if p_named.len() != g_named.len() || p_named.len() != state.m.len() {
        return Err(Error::dim("optimiser state does not match the parameter tree"));
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let decay = 1.0 - c.lr * c.weight_decay;
    for (k, ((name, p), (_, g))) in p_named.iter_mut().zip(&g_named).enumerate() {
        if p.shape() != g.shape() || state.m[k].len() != p.len() {
            return Err(Error::dim(format!(
                "{name}: parameter {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        update(p, g, &mut state.m[k], &mut state.v[k], c, decay, bc1, bc2);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update<T: Real>(
    p: &mut DenseArray<T>,
    g: &DenseArray<T>,
    m: &mut [f64],
    v: &mut [f64],
    c: AdamWConfig,
    decay: f64,
    bc1: f64,
    bc2: f64,
) {
    for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
        let g = g.as_f64();
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        let x = w.as_f64() * decay - c.lr * mhat / (vhat.sqrt() + c.eps);
        *w = T::lit(x);
    }
}
