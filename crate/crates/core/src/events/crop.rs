//! Square template/search crops with mean padding and bilinear resampling.
//!
//! Coordinates are continuous: pixel `i` covers `[i, i + 1)`, so a box centre
//! `cx` in pixels maps to the crop centre `out / 2` exactly.

use crate::error::{Error, Result};
use crate::events::types::GroundTruthBox;
use crate::numerics::{DenseArray, Real};

pub const TEMPLATE_CONTEXT: f64 = 2.0;
pub const SEARCH_CONTEXT: f64 = 4.0;

/// Affine map between crop coordinates and image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropTransform {
    /// image position of the crop's left/top edge
    pub x0: f64,
    pub y0: f64,
    /// image pixels per crop pixel
    pub scale: f64,
    pub out: usize,
}

impl CropTransform {
    pub fn to_image(&self, u: f64, v: f64) -> (f64, f64) {
        (self.x0 + u * self.scale, self.y0 + v * self.scale)
    }

    pub fn to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.x0) / self.scale, (y - self.y0) / self.scale)
    }

    /// Box in normalised crop units `[0, 1]` to an image-pixel box.
    pub fn box_to_image(&self, cx: f64, cy: f64, w: f64, h: f64) -> (f64, f64, f64, f64) {
        let n = self.out as f64;
        let (x, y) = self.to_image(cx * n, cy * n);
        (x, y, w * n * self.scale, h * n * self.scale)
    }

    /// Image-pixel box to normalised crop units.
    pub fn box_to_crop(&self, cx: f64, cy: f64, w: f64, h: f64) -> (f64, f64, f64, f64) {
        let n = self.out as f64;
        let (u, v) = self.to_crop(cx, cy);
        (u / n, v / n, w / self.scale / n, h / self.scale / n)
    }
}

/// Crop side length for a box and context factor.
pub fn crop_side(w: f64, h: f64, context: f64) -> f64 {
    (w * h).sqrt() * context
}

/// Crops an `[H × W × ch]` frame around `box` with side `sqrt(w·h)·context`
/// and resamples it to `out × out`.
pub fn crop_patch<T: Real>(
    frame: &DenseArray<T>,
    bbox: &GroundTruthBox,
    context: f64,
    out: usize,
) -> Result<(DenseArray<T>, CropTransform)> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(Error::domain(format!(
            "cannot crop around a degenerate box ({} × {})",
            bbox.w, bbox.h
        )));
    }
    if !(context > 0.0) || out == 0 {
        return Err(Error::domain("crop context and output size must be positive"));
    }
    crop_square(frame, bbox.cx, bbox.cy, crop_side(bbox.w, bbox.h, context), out)
}

/// Crops the square of side `side` centred at `(cx, cy)`.
pub fn crop_square<T: Real>(
    frame: &DenseArray<T>,
    cx: f64,
    cy: f64,
    side: f64,
    out: usize,
) -> Result<(DenseArray<T>, CropTransform)> {
    if frame.ndim() != 3 {
        return Err(Error::dim("frame must be [H × W × ch]"));
    }
    if !(side > 0.0) || !side.is_finite() || out == 0 {
        return Err(Error::domain(format!("invalid crop side {side} or size {out}")));
    }
    let (h, w, ch) = (frame.dim(0), frame.dim(1), frame.dim(2));
    let tf = CropTransform {
        x0: cx - side / 2.0,
        y0: cy - side / 2.0,
        scale: side / out as f64,
        out,
    };
    let fill = valid_mean(frame, &tf, side);
    let src = frame.data();
    let mut data = Vec::with_capacity(out * out * ch);
    for v in 0..out {
        // pixel-index coordinate of the sample (centre of pixel i is i)
        let fy = tf.y0 + (v as f64 + 0.5) * tf.scale - 0.5;
        for u in 0..out {
            let fx = tf.x0 + (u as f64 + 0.5) * tf.scale - 0.5;
            let inside = fx >= -0.5 && fx <= w as f64 - 0.5 && fy >= -0.5 && fy <= h as f64 - 0.5;
            if !inside {
                data.extend_from_slice(&fill);
                continue;
            }
            let (xa, xb, tx) = taps(fx, w);
            let (ya, yb, ty) = taps(fy, h);
            for c in 0..ch {
                let p = |y: usize, x: usize| src[(y * w + x) * ch + c].as_f64();
                let top = p(ya, xa) * (1.0 - tx) + p(ya, xb) * tx;
                let bot = p(yb, xa) * (1.0 - tx) + p(yb, xb) * tx;
                data.push(T::lit(top * (1.0 - ty) + bot * ty));
            }
        }
    }
    Ok((DenseArray::new(&[out, out, ch], data)?, tf))
}

fn taps(f: f64, n: usize) -> (usize, usize, f64) {
    let f = f.clamp(0.0, (n - 1) as f64);
    let a = f.floor() as usize;
    let b = (a + 1).min(n - 1);
    (a, b, f - a as f64)
}

/// Per-channel mean of the image pixels covered by the crop square, or of the
/// whole frame when the square misses the image.
fn valid_mean<T: Real>(frame: &DenseArray<T>, tf: &CropTransform, side: f64) -> Vec<T> {
    let (h, w, ch) = (frame.dim(0), frame.dim(1), frame.dim(2));
    let range = |lo: f64, n: usize| {
        let a = lo.max(0.0).floor() as usize;
        let b = ((lo + side).min(n as f64).ceil().max(0.0) as usize).min(n);
        (a.min(n), b)
    };
    let (mut xa, mut xb) = range(tf.x0, w);
    let (mut ya, mut yb) = range(tf.y0, h);
    if xa >= xb || ya >= yb {
        (xa, xb, ya, yb) = (0, w, 0, h);
    }
    let mut sums = vec![0.0f64; ch];
    for y in ya..yb {
        for x in xa..xb {
            for (c, s) in sums.iter_mut().enumerate() {
                *s += frame.data()[(y * w + x) * ch + c].as_f64();
            }
        }
    }
    let n = ((xb - xa) * (yb - ya)) as f64;
    sums.into_iter().map(|s| T::lit(s / n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn gt(cx: f64, cy: f64, w: f64, h: f64) -> GroundTruthBox {
        GroundTruthBox::new(0, cx, cy, w, h).unwrap()
    }

    #[test]
    fn identity_resize_copies_pixels() {
        let mut rng = Rng::new(0);
        let frame = DenseArray::<f64>::uniform(&[20, 20, 3], 0.0, 255.0, &mut rng);
        // side = sqrt(4·4)·2 = 8 = out, left/top edge at pixel 6
        let (p, _) = crop_patch(&frame, &gt(10.0, 10.0, 4.0, 4.0), 2.0, 8).unwrap();
        for v in 0..8 {
            for u in 0..8 {
                for c in 0..3 {
                    assert_eq!(
                        p.data()[(v * 8 + u) * 3 + c],
                        frame.data()[((6 + v) * 20 + 6 + u) * 3 + c]
                    );
                }
            }
        }
    }

    #[test]
    fn corner_box_fills_three_quadrants() {
        let mut rng = Rng::new(1);
        let frame = DenseArray::<f64>::uniform(&[8, 8, 3], 0.0, 255.0, &mut rng);
        // crop square [-2, 2)², samples at pixel indices -2, -1, 0, 1
        let (p, _) = crop_patch(&frame, &gt(0.0, 0.0, 2.0, 2.0), 2.0, 4).unwrap();
        let mut fill = [0.0; 3];
        for y in 0..2 {
            for x in 0..2 {
                for c in 0..3 {
                    fill[c] += frame.data()[(y * 8 + x) * 3 + c] / 4.0;
                }
            }
        }
        for v in 0..4 {
            for u in 0..4 {
                let got = &p.data()[(v * 4 + u) * 3..(v * 4 + u) * 3 + 3];
                if u < 2 || v < 2 {
                    for c in 0..3 {
                        assert!((got[c] - fill[c]).abs() < 1e-12);
                    }
                } else {
                    let src = &frame.data()[((v - 2) * 8 + u - 2) * 3..][..3];
                    assert_eq!(got, src);
                }
            }
        }
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let frame = DenseArray::<f32>::zeros(&[8, 8, 3]);
        let b = GroundTruthBox {
            frame_index: 0,
            cx: 4.0,
            cy: 4.0,
            w: 0.0,
            h: 3.0,
        };
        assert!(matches!(crop_patch(&frame, &b, 2.0, 4), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn constant_frame_gives_constant_patch(
            cx in -20.0..40.0f64, cy in -20.0..40.0f64,
            w in 0.5..30.0f64, h in 0.5..30.0f64, out in 1usize..20, val in 0.0..255.0f64,
        ) {
            let frame = DenseArray::<f64>::full(&[16, 24, 3], val);
            let (p, _) = crop_patch(&frame, &gt(cx, cy, w, h), 4.0, out).unwrap();
            for &v in p.data() {
                prop_assert!((v - val).abs() < 1e-9);
            }
        }

        #[test]
        fn centre_maps_to_patch_centre(
            cx in -10.0..50.0f64, cy in -10.0..50.0f64,
            w in 0.5..30.0f64, h in 0.5..30.0f64, out in 1usize..64, ctx in 0.5..5.0f64,
        ) {
            let frame = DenseArray::<f32>::zeros(&[4, 4, 3]);
            let (_, tf) = crop_patch(&frame, &gt(cx, cy, w, h), ctx, out).unwrap();
            let (u, v) = tf.to_crop(cx, cy);
            prop_assert!((u - out as f64 / 2.0).abs() < 0.5);
            prop_assert!((v - out as f64 / 2.0).abs() < 0.5);
            let (x, y) = tf.to_image(u, v);
            prop_assert!((x - cx).abs() < 1e-9 && (y - cy).abs() < 1e-9);
        }
    }
}
