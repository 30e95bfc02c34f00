//! Central finite differences, the reference for every hand-written backward
//! pass. Always evaluated in 64-bit.

use crate::error::{Error, Result};
use crate::numerics::array::DenseArray;
use crate::numerics::params::ParamTree;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every element of `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &DenseArray<f64>, h: f64) -> Result<DenseArray<f64>>
where
    F: FnMut(&DenseArray<f64>) -> f64,
{
    let mut probe = x.clone();
    let mut grad = DenseArray::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::numeric("finite difference evaluation", Some(i)));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Group relative error `max|a − n| / max(max|a|, max|n|, 1e-8)`.
///
/// Normalising by the group's largest magnitude keeps entries whose true
/// gradient is ~0 from dominating the measure.
pub fn max_rel_error(analytic: &DenseArray<f64>, numeric: &DenseArray<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic.max_abs().max(numeric.max_abs()).max(1e-8);
    diff / scale
}

/// Result of checking one named parameter array.
#[derive(Clone, Debug)]
pub struct GroupCheck {
    pub name: String,
    pub rel_error: f64,
    pub checked: usize,
}

/// Compares analytic gradients of a parameter tree against central
/// differences of `loss`, group by group.
///
/// `max_per_group` caps how many entries of each array are probed; the probed
/// entries are evenly strided so every region of large arrays is covered.
pub fn check_tree<P, F>(
    params: &P,
    analytic: &P,
    mut loss: F,
    h: f64,
    max_per_group: usize,
) -> Result<Vec<GroupCheck>>
where
    P: ParamTree<f64> + Clone,
    F: FnMut(&P) -> f64,
{
    let mut probe = params.clone();
    let names: Vec<(String, usize)> = params
        .named()
        .into_iter()
        .map(|(n, a)| (n, a.len()))
        .collect();
    let grads = analytic.named();
    let mut results = Vec::with_capacity(names.len());
    for (gi, (name, len)) in names.iter().enumerate() {
        let stride = len.div_ceil(max_per_group.max(1)).max(1);
        let idx: Vec<usize> = (0..*len).step_by(stride).collect();
        let mut num = Vec::with_capacity(idx.len());
        let mut ana = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = probe.named()[gi].1.data()[i];
            set_entry(&mut probe, gi, i, orig + h);
            let plus = loss(&probe);
            set_entry(&mut probe, gi, i, orig - h);
            let minus = loss(&probe);
            set_entry(&mut probe, gi, i, orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::numeric(format!("finite difference of {name}"), Some(i)));
            }
            num.push((plus - minus) / (2.0 * h));
            ana.push(grads[gi].1.data()[i]);
        }
        let n = DenseArray::new(&[idx.len()], num)?;
        let a = DenseArray::new(&[idx.len()], ana)?;
        results.push(GroupCheck {
            name: name.clone(),
            rel_error: max_rel_error(&a, &n),
            checked: idx.len(),
        });
    }
    Ok(results)
}

fn set_entry<P: ParamTree<f64>>(tree: &mut P, group: usize, index: usize, value: f64) {
    let mut named = tree.named_mut();
    named[group].1.data_mut()[index] = value;
}
