use crate::error::{Error, Result};
use crate::events::types::{EventStream, ExposureWindow};
use crate::numerics::{DenseArray, Real};

pub const NEUTRAL: f64 = 128.0;

/// Grey level for a signed event count `s`: neutral 128, saturating at
/// `|s| = 2` to 64 or 192.
pub fn encode_count(s: i64) -> f64 {
    let mag = (s.unsigned_abs().min(2)) as f64;
    let v = NEUTRAL + 64.0 * (s.signum() as f64) * mag / 2.0;
    v.clamp(0.0, 255.0)
}

/// Per-pixel signed event count within `window`, row-major `[H × W]`.
pub fn signed_counts(stream: &EventStream, window: ExposureWindow) -> Vec<i64> {
    let w = stream.width() as usize;
    let mut counts = vec![0i64; w * stream.height() as usize];
    for e in stream.in_window(window) {
        counts[e.y as usize * w + e.x as usize] += e.p as i64;
    }
    counts
}

/// Renders the events of one exposure window as a 3-channel grey image
/// `[H × W × 3]` in the same 0..255 range as the RGB frames.
pub fn stack_events_to_frame<T: Real>(
    stream: &EventStream,
    window: ExposureWindow,
) -> Result<DenseArray<T>> {
    if window.t_end > stream.duration() {
        return Err(Error::domain(format!(
            "window [{}, {}) extends past the stream duration {}",
            window.t_start,
            window.t_end,
            stream.duration()
        )));
    }
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    let counts = signed_counts(stream, window);
    let mut data = Vec::with_capacity(w * h * 3);
    for s in counts {
        let v = T::lit(encode_count(s));
        data.extend_from_slice(&[v, v, v]);
    }
    DenseArray::new(&[h, w, 3], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::types::EventPoint;
    use proptest::prelude::*;

    fn stream(events: Vec<EventPoint>) -> EventStream {
        EventStream::new(events, 8, 8, 100).unwrap()
    }

    fn px(img: &DenseArray<f64>, x: usize, y: usize) -> [f64; 3] {
        let i = (y * 8 + x) * 3;
        [img.data()[i], img.data()[i + 1], img.data()[i + 2]]
    }

    #[test]
    fn empty_window_is_neutral() {
        let img: DenseArray<f64> =
            stack_events_to_frame(&stream(vec![]), ExposureWindow::new(0, 50).unwrap()).unwrap();
        assert!(img.data().iter().all(|&v| v == 128.0));
    }

    #[test]
    fn single_positive_event() {
        // 128 + 64 · 1 · min(1, 2) / 2
        let expect = 128.0 + 64.0 * 0.5;
        let s = stream(vec![EventPoint { t: 3, x: 3, y: 5, p: 1 }]);
        let img: DenseArray<f64> = stack_events_to_frame(&s, ExposureWindow::new(0, 10).unwrap()).unwrap();
        assert_eq!(px(&img, 3, 5), [expect; 3]);
        assert_eq!(img.data().iter().filter(|&&v| v != 128.0).count(), 3);
    }

    #[test]
    fn three_negative_events_saturate() {
        let s = stream((0..3).map(|t| EventPoint { t, x: 1, y: 1, p: -1 }).collect());
        let img: DenseArray<f64> = stack_events_to_frame(&s, ExposureWindow::new(0, 10).unwrap()).unwrap();
        assert_eq!(px(&img, 1, 1), [64.0; 3]);
    }

    #[test]
    fn window_past_duration_is_rejected() {
        let r: Result<DenseArray<f32>> =
            stack_events_to_frame(&stream(vec![]), ExposureWindow::new(90, 110).unwrap());
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    fn arb_events() -> impl Strategy<Value = Vec<(u32, u32, bool)>> {
        prop::collection::vec((0u32..8, 0u32..8, any::<bool>()), 0..60)
    }

    proptest! {
        #[test]
        fn permutation_invariant(raw in arb_events(), seed in any::<u64>()) {
            let make = |order: &[(u32, u32, bool)]| {
                let ev = order.iter().map(|&(x, y, p)| EventPoint { t: 7, x, y, p: if p { 1 } else { -1 } }).collect();
                let img: DenseArray<f64> = stack_events_to_frame(&stream(ev), ExposureWindow::new(0, 10).unwrap()).unwrap();
                img
            };
            let mut shuffled = raw.clone();
            let mut rng = crate::numerics::rng::Rng::new(seed);
            for i in (1..shuffled.len()).rev() {
                let j = rng.below(i + 1);
                shuffled.swap(i, j);
            }
            prop_assert_eq!(make(&raw), make(&shuffled));
        }

        #[test]
        fn counts_are_conserved(ts in prop::collection::vec(0u64..100, 0..80)) {
            let mut ts = ts;
            ts.sort();
            let ev: Vec<_> = ts.iter().map(|&t| EventPoint { t, x: (t % 8) as u32, y: 0, p: 1 }).collect();
            let s = stream(ev);
            let total: usize = (0..10).map(|k| s.in_window(ExposureWindow::for_frame(k, 10)).len()).sum();
            prop_assert_eq!(total, s.len());
        }
    }
}
