use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Real};

/// How the input matrix is discretized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Discretization {
    /// `B̄ = (ΔA)⁻¹(exp(ΔA) − I)·ΔB`, the exact zero-order hold.
    #[default]
    Exact,
    /// `B̄ = ΔB`, the first-order form used by most selective-SSM code.
    Simplified,
}

impl Discretization {
    pub fn as_str(self) -> &'static str {
        match self {
            Discretization::Exact => "exact",
            Discretization::Simplified => "simplified",
        }
    }
}

impl std::str::FromStr for Discretization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Discretization::Exact),
            "simplified" => Ok(Discretization::Simplified),
            other => Err(Error::config(format!(
                "unknown discretization `{other}` (expected exact|simplified)"
            ))),
        }
    }
}

/// Below this |Δa| the Taylor series replaces `expm1(x)/x`.
pub const TAYLOR_THRESHOLD: f64 = 1e-4;

/// `(eˣ − 1)/x`, with the 4-term Taylor series near zero.
#[inline]
pub fn expm1_over_x<T: Real>(x: T) -> T {
    if x.abs() < T::lit(TAYLOR_THRESHOLD) {
        T::one() + x * (T::lit(0.5) + x * (T::lit(1.0 / 6.0) + x * T::lit(1.0 / 24.0)))
    } else {
        x.exp_m1() / x
    }
}

/// Below this `z = Δa` the input factor is formed from `eᶻ` directly.
const EXPM1_REUSE_BELOW: f64 = -0.35;

/// `k/(k+1)!` for `k = 1..=10`.
const SERIES_GRAD: [f64; 10] = [
    1.0 / 2.0,
    2.0 / 6.0,
    3.0 / 24.0,
    4.0 / 120.0,
    5.0 / 720.0,
    6.0 / 5040.0,
    7.0 / 40320.0,
    8.0 / 362880.0,
    9.0 / 3628800.0,
    10.0 / 39916800.0,
];

/// Derivative of [`expm1_over_x`], `(x·eˣ − eˣ + 1)/x²`.
#[inline]
pub fn expm1_over_x_grad<T: Real>(x: T) -> T {
    // the closed form cancels badly for small x, so use the series
    // Σ_{k≥1} k·x^{k−1}/(k+1)! there
    if x.abs() < T::lit(0.1) {
        let mut acc = T::zero();
        for &c in SERIES_GRAD.iter().rev() {
            acc = acc * x + T::lit(c);
        }
        acc
    } else {
        (x * x.exp() - x.exp_m1()) / (x * x)
    }
}

/// Per-element discretization factors for a diagonal entry `a` and step `dt`:
/// returns `(ā, φ)` with `B̄ = φ·B`.
#[inline]
pub fn discretize_scalar<T: Real>(a: T, dt: T, mode: Discretization) -> (T, T) {
    let z = dt * a;
    match mode {
        // far from zero `eᶻ − 1` loses under 6 ulp, so reuse `ā`
        Discretization::Exact if z < T::lit(EXPM1_REUSE_BELOW) => {
            let a_bar = z.exp();
            (a_bar, dt * (a_bar - T::one()) / z)
        }
        // near zero `1 + (eᶻ − 1)` is as accurate as `eᶻ`
        Discretization::Exact => {
            let r = expm1_over_x(z);
            (T::one() + z * r, dt * r)
        }
        Discretization::Simplified => (z.exp(), dt),
    }
}

/// Partial derivatives `(∂φ/∂Δ, ∂φ/∂a)` of the input factor.
#[inline]
pub fn phi_partials<T: Real>(a: T, dt: T, mode: Discretization) -> (T, T) {
    match mode {
        Discretization::Exact => {
            let z = dt * a;
            (z.exp(), dt * dt * expm1_over_x_grad(z))
        }
        Discretization::Simplified => (T::one(), T::zero()),
    }
}

/// `∂φ/∂a` from already computed `ā` and `φ`, avoiding further exponentials.
#[inline]
pub fn phi_grad_a<T: Real>(a: T, dt: T, a_bar: T, phi: T, mode: Discretization) -> T {
    match mode {
        Discretization::Exact => {
            let z = dt * a;
            if z.abs() < T::lit(0.1) {
                dt * dt * expm1_over_x_grad(z)
            } else {
                (dt * a_bar - phi) / a
            }
        }
        Discretization::Simplified => T::zero(),
    }
}

/// Discretizes a diagonal state matrix against per-step `B` and `Δ`.
///
/// `a_diag` is `[D × N]` (negative entries), `b` is `[L × N]`, `delta` is
/// `[L × D]`. Returns `(Ā, B̄)`, each `[L × D × N]`.
pub fn zoh_discretize<T: Real>(
    a_diag: &DenseArray<T>,
    b: &DenseArray<T>,
    delta: &DenseArray<T>,
    mode: Discretization,
) -> Result<(DenseArray<T>, DenseArray<T>)> {
    if a_diag.ndim() != 2 || b.ndim() != 2 || delta.ndim() != 2 {
        return Err(Error::dim("zoh_discretize expects 2-D operands"));
    }
    let (d, n) = (a_diag.dim(0), a_diag.dim(1));
    let l = b.dim(0);
    if b.dim(1) != n || delta.dim(0) != l || delta.dim(1) != d {
        return Err(Error::dim(format!(
            "zoh_discretize: A {:?}, B {:?}, delta {:?}",
            a_diag.shape(),
            b.shape(),
            delta.shape()
        )));
    }
    if let Some(i) = delta.data().iter().position(|&v| !(v > T::zero())) {
        return Err(Error::domain(format!(
            "delta must be positive (step {}, channel {})",
            i / d,
            i % d
        )));
    }
    let mut a_bar = DenseArray::zeros(&[l, d, n]);
    let mut b_bar = DenseArray::zeros(&[l, d, n]);
    for t in 0..l {
        for ch in 0..d {
            let dt = delta.data()[t * d + ch];
            for s in 0..n {
                let (ab, phi) = discretize_scalar(a_diag.data()[ch * n + s], dt, mode);
                let idx = (t * d + ch) * n + s;
                a_bar.data_mut()[idx] = ab;
                b_bar.data_mut()[idx] = phi * b.data()[t * n + s];
            }
        }
    }
    Ok((a_bar, b_bar))
}
