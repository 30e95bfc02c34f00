use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Real};
use crate::tracker::bbox::{giou_loss_grad, BBox};

pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_BETA: i32 = 4;
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub focal: f64,
    pub l1: f64,
    pub giou: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            focal: 1.0,
            l1: 14.0,
            giou: 1.0,
        }
    }
}

/// Penalty-reduced focal loss on a Gaussian heat map, normalised by the
/// number of peak cells. Returns the loss and `dL/dpred`.
pub fn focal_loss_grad<T: Real>(
    pred: &DenseArray<T>,
    target: &DenseArray<T>,
) -> Result<(f64, DenseArray<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!(
            "focal loss: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let peaks = target.data().iter().filter(|&&t| t.as_f64() == 1.0).count().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let raw = p.as_f64();
        let t = t.as_f64();
        let p = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let live = p == raw;
        let (l, g) = if t == 1.0 {
            let q = 1.0 - p;
            (
                -q.powi(FOCAL_ALPHA) * p.ln(),
                FOCAL_ALPHA as f64 * q.powi(FOCAL_ALPHA - 1) * p.ln() - q.powi(FOCAL_ALPHA) / p,
            )
        } else {
            let wt = (1.0 - t).powi(FOCAL_BETA);
            let q = 1.0 - p;
            (
                -wt * p.powi(FOCAL_ALPHA) * q.ln(),
                -wt * (FOCAL_ALPHA as f64 * p.powi(FOCAL_ALPHA - 1) * q.ln() - p.powi(FOCAL_ALPHA) / q),
            )
        };
        loss += l;
        grad.push(T::lit(if live { g / peaks } else { 0.0 }));
    }
    Ok((loss / peaks, DenseArray::new(pred.shape(), grad)?))
}

pub fn focal_loss<T: Real>(pred: &DenseArray<T>, target: &DenseArray<T>) -> Result<f64> {
    focal_loss_grad(pred, target).map(|(l, _)| l)
}

/// Mean absolute difference over `(cx, cy, w, h)` and its gradient.
pub fn l1_loss_grad(pred: &BBox, gt: &BBox) -> (f64, [f64; 4]) {
    let (p, g) = (pred.to_array(), gt.to_array());
    let mut grad = [0.0; 4];
    let mut loss = 0.0;
    for k in 0..4 {
        let d = p[k] - g[k];
        loss += d.abs() / 4.0;
        grad[k] = d.signum() * if d == 0.0 { 0.0 } else { 0.25 };
    }
    (loss, grad)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub focal: f64,
    pub l1: f64,
    pub giou: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(focal: f64, l1: f64, giou: f64, w: &LossWeights) -> Self {
        Self {
            focal,
            l1,
            giou,
            total: w.focal * focal + w.l1 * l1 + w.giou * giou,
        }
    }
}

/// Gradients of the weighted total with respect to the score map and the
/// regressed box.
#[derive(Clone, Debug)]
pub struct LossGrads<T> {
    pub cls: DenseArray<T>,
    pub bbox: [f64; 4],
}

pub fn total_loss_grad<T: Real>(
    cls_pred: &DenseArray<T>,
    cls_target: &DenseArray<T>,
    pred: &BBox,
    gt: &BBox,
    w: &LossWeights,
) -> Result<(LossBreakdown, LossGrads<T>)> {
    let (focal, mut g_cls) = focal_loss_grad(cls_pred, cls_target)?;
    let (l1, g_l1) = l1_loss_grad(pred, gt);
    let (giou, g_giou) = giou_loss_grad(pred, gt)?;
    g_cls.scale(T::lit(w.focal));
    let mut g_box = [0.0; 4];
    for k in 0..4 {
        g_box[k] = w.l1 * g_l1[k] + w.giou * g_giou[k];
    }
    Ok((
        LossBreakdown::combine(focal, l1, giou, w),
        LossGrads {
            cls: g_cls,
            bbox: g_box,
        },
    ))
}

pub fn total_loss<T: Real>(
    cls_pred: &DenseArray<T>,
    cls_target: &DenseArray<T>,
    pred: &BBox,
    gt: &BBox,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    total_loss_grad(cls_pred, cls_target, pred, gt, w).map(|(l, _)| l)
}
