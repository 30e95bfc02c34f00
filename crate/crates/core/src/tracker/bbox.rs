//! Boxes, score-map decoding and classification targets.

use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Real};

/// Centre-format box. Inside the model the units are fractions of the search
/// region; at the pipeline boundary they are pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// From the top-left corner and size.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x + w / 2.0, y + h / 2.0, w, h)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cx + self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cy + self.h / 2.0,
        ]
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let [ax1, ax2, ay1, ay2] = a.corners();
    let [bx1, bx2, by1, by2] = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// `1 − GIoU` and its gradient with respect to `pred` as `[cx, cy, w, h]`.
pub fn giou_loss_grad(pred: &BBox, gt: &BBox) -> Result<(f64, [f64; 4])> {
    if !(gt.w > 0.0 && gt.h > 0.0) {
        return Err(Error::domain(format!("ground-truth box has zero area: {gt:?}")));
    }
    if !(pred.w > 0.0 && pred.h > 0.0) {
        return Err(Error::domain(format!("predicted box has non-positive extent: {pred:?}")));
    }
    let [px1, px2, py1, py2] = pred.corners();
    let [gx1, gx2, gy1, gy2] = gt.corners();

    let iw_raw = px2.min(gx2) - px1.max(gx1);
    let ih_raw = py2.min(gy2) - py1.max(gy1);
    let (iw, ih) = (iw_raw.max(0.0), ih_raw.max(0.0));
    let inter = iw * ih;
    let union = pred.area() + gt.area() - inter;
    let cw = px2.max(gx2) - px1.min(gx1);
    let ch = py2.max(gy2) - py1.min(gy1);
    let enclosing = cw * ch;
    let loss = 2.0 - inter / union - union / enclosing;

    // L = 2 − I/U − U/C with U = A_p + A_g − I
    let dl_du = inter / (union * union) - 1.0 / enclosing;
    let dl_di = -1.0 / union - dl_du;
    let dl_dc = union / (enclosing * enclosing);

    let d_iw = dl_di * ih;
    let d_ih = dl_di * iw;
    let d_cw = dl_dc * ch;
    let d_ch = dl_dc * cw;
    // corner gradients [x1, x2, y1, y2]
    let mut g = [0.0; 4];
    if iw_raw > 0.0 {
        if px2 <= gx2 {
            g[1] += d_iw;
        }
        if px1 >= gx1 {
            g[0] -= d_iw;
        }
    }
    if ih_raw > 0.0 {
        if py2 <= gy2 {
            g[3] += d_ih;
        }
        if py1 >= gy1 {
            g[2] -= d_ih;
        }
    }
    if px2 >= gx2 {
        g[1] += d_cw;
    }
    if px1 <= gx1 {
        g[0] -= d_cw;
    }
    if py2 >= gy2 {
        g[3] += d_ch;
    }
    if py1 <= gy1 {
        g[2] -= d_ch;
    }
    let d_area = dl_du;
    Ok((
        loss,
        [
            g[0] + g[1],
            g[2] + g[3],
            (g[1] - g[0]) / 2.0 + d_area * pred.h,
            (g[3] - g[2]) / 2.0 + d_area * pred.w,
        ],
    ))
}

pub fn giou_loss(pred: &BBox, gt: &BBox) -> Result<f64> {
    giou_loss_grad(pred, gt).map(|(l, _)| l)
}

/// Network outputs on the `S × S` search grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMapOutput<T> {
    /// `[S × S]` in (0, 1)
    pub cls: DenseArray<T>,
    /// `[S × S × 2]` sub-cell offset (x, y)
    pub offset: DenseArray<T>,
    /// `[S × S × 2]` normalised (w, h)
    pub size: DenseArray<T>,
}

impl<T: Real> ScoreMapOutput<T> {
    pub fn grid(&self) -> usize {
        self.cls.dim(0)
    }

    /// Box predicted at cell `(i, j)` (row, column).
    pub fn box_at(&self, i: usize, j: usize) -> BBox {
        let s = self.grid();
        let k = i * s + j;
        let off = &self.offset.data()[2 * k..2 * k + 2];
        let sz = &self.size.data()[2 * k..2 * k + 2];
        BBox::new(
            (j as f64 + off[0].as_f64()) / s as f64,
            (i as f64 + off[1].as_f64()) / s as f64,
            sz[0].as_f64(),
            sz[1].as_f64(),
        )
    }
}

/// Separable Hann window on an `S × S` grid, row-major.
pub fn hann_window(s: usize) -> Vec<f64> {
    let w: Vec<f64> = if s == 1 {
        vec![1.0]
    } else {
        (0..s)
            .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / (s - 1) as f64).cos())
            .collect()
    };
    let mut out = Vec::with_capacity(s * s);
    for &a in &w {
        for &b in &w {
            out.push(a * b);
        }
    }
    out
}

/// Row-major index of the largest value; the first one wins ties.
pub fn argmax_cell<T: Real>(cls: &DenseArray<T>, window: Option<&[f64]>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, &v) in cls.data().iter().enumerate() {
        let v = v.as_f64() * window.map_or(1.0, |w| w[k]);
        if v > best_v {
            best_v = v;
            best = k;
        }
    }
    best
}

pub fn decode_bbox<T: Real>(out: &ScoreMapOutput<T>, window: Option<&[f64]>) -> BBox {
    let s = out.grid();
    let k = argmax_cell(&out.cls, window);
    out.box_at(k / s, k % s)
}

/// Cell `(row, col)` containing the centre of a normalised box.
pub fn centre_cell(gt: &BBox, s: usize) -> (usize, usize) {
    let clampi = |v: f64| ((v * s as f64).floor().max(0.0) as usize).min(s - 1);
    (clampi(gt.cy), clampi(gt.cx))
}

/// Gaussian heat-map target with peak 1 at the centre cell.
pub fn make_cls_target<T: Real>(gt: &BBox, s: usize) -> DenseArray<T> {
    let (ci, cj) = centre_cell(gt, s);
    let sigma = (s as f64 * gt.w.min(gt.h) / 6.0).max(1.0);
    DenseArray::from_fn(&[s, s], |k| {
        let (i, j) = ((k / s) as f64, (k % s) as f64);
        let d2 = (i - ci as f64).powi(2) + (j - cj as f64).powi(2);
        T::lit((-d2 / (2.0 * sigma * sigma)).exp())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn giou_hand_cases() {
        let a = BBox::from_xywh(0.0, 0.0, 1.0, 1.0);
        assert_eq!(giou_loss(&a, &a).unwrap(), 0.0);
        assert!((giou_loss(&a, &BBox::from_xywh(1.0, 0.0, 1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(
            (giou_loss(&a, &BBox::from_xywh(2.0, 0.0, 1.0, 1.0)).unwrap() - 4.0 / 3.0).abs() < 1e-12
        );
        assert!(giou_loss(&a, &BBox::new(0.0, 0.0, 0.0, 1.0)).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-2.0..2.0f64, -2.0..2.0f64, 0.05..3.0f64, 0.05..3.0f64)
            .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h))
    }

    proptest! {
        #[test]
        fn giou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let l = giou_loss(&a, &b).unwrap();
            prop_assert!((l - giou_loss(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&l));
        }

        #[test]
        fn giou_gradient_matches_differences(a in arb_box(), b in arb_box()) {
            let (_, g) = giou_loss_grad(&a, &b).unwrap();
            let h = 1e-6;
            for k in 0..4 {
                let mut p = a.to_array();
                let mut m = a.to_array();
                p[k] += h;
                m[k] -= h;
                let f = |v: [f64; 4]| giou_loss(&BBox::new(v[0], v[1], v[2], v[3]), &b).unwrap();
                let num = (f(p) - f(m)) / (2.0 * h);
                // kinks where two edges coincide are measure-zero; skip them
                let kink = (f(p) - 2.0 * giou_loss(&a, &b).unwrap() + f(m)).abs() > 1e-8;
                prop_assume!(!kink);
                prop_assert!((num - g[k]).abs() < 1e-5, "{k}: {num} vs {}", g[k]);
            }
        }

        #[test]
        fn decode_is_invariant_under_monotone_maps(vals in prop::collection::vec(0.01..0.99f64, 16), c in 0.1..10.0f64) {
            let out = ScoreMapOutput {
                cls: DenseArray::new(&[4, 4], vals.clone()).unwrap(),
                offset: DenseArray::full(&[4, 4, 2], 0.3),
                size: DenseArray::full(&[4, 4, 2], 0.2),
            };
            let scaled = ScoreMapOutput { cls: out.cls.map(|v| v * c), ..out.clone() };
            let squashed = ScoreMapOutput { cls: out.cls.map(|v| (v * 3.0).exp()), ..out.clone() };
            prop_assert_eq!(decode_bbox(&out, None), decode_bbox(&scaled, None));
            prop_assert_eq!(decode_bbox(&out, None), decode_bbox(&squashed, None));
        }
    }

    #[test]
    fn decode_single_peak() {
        let mut cls = DenseArray::<f64>::zeros(&[16, 16]);
        cls.data_mut()[4 * 16 + 7] = 1.0;
        let out = ScoreMapOutput {
            cls,
            offset: DenseArray::zeros(&[16, 16, 2]),
            size: DenseArray::full(&[16, 16, 2], 0.25),
        };
        assert_eq!(decode_bbox(&out, None), BBox::new(0.4375, 0.25, 0.25, 0.25));
    }

    #[test]
    fn uniform_map_picks_first_cell() {
        let out = ScoreMapOutput {
            cls: DenseArray::<f32>::full(&[5, 5], 0.5),
            offset: DenseArray::zeros(&[5, 5, 2]),
            size: DenseArray::full(&[5, 5, 2], 0.1),
        };
        assert_eq!(argmax_cell(&out.cls, None), 0);
        let b = decode_bbox(&out, None);
        assert_eq!((b.cx, b.cy), (0.0, 0.0));
    }

    #[test]
    fn window_suppresses_border_peaks() {
        let mut cls = DenseArray::<f64>::full(&[5, 5], 0.5);
        cls.data_mut()[0] = 0.9;
        assert_eq!(argmax_cell(&cls, None), 0);
        assert_eq!(argmax_cell(&cls, Some(&hann_window(5))), 12);
    }

    #[test]
    fn cls_target_shape_and_values() {
        let gt = BBox::new(0.5, 0.5, 0.1, 0.1);
        let t: DenseArray<f64> = make_cls_target(&gt, 8);
        assert_eq!(t.data()[4 * 8 + 4], 1.0);
        // sigma = max(1, 0.8/6) = 1, neighbour at distance 1
        assert!((t.data()[4 * 8 + 5] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((t.data()[4 * 8 + 5] - 0.6065306597126334).abs() < 1e-15);
        // grid centre of an odd grid: 90° rotation symmetry
        let t: DenseArray<f64> = make_cls_target(&BBox::new(0.5, 0.5, 0.4, 0.4), 9);
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(t.data()[i * 9 + j], t.data()[j * 9 + (8 - i)]);
            }
        }
    }
}
