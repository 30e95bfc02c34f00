//! Online tracking with a fixed first-frame template.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::events::{crop_side, GroundTruthBox, SequenceData, SEARCH_CONTEXT};
use crate::numerics::Real;
use crate::tracker::bbox::{decode_bbox, hann_window, BBox};
use crate::tracker::data::PreparedSequence;
use crate::tracker::head::BnMode;
use crate::tracker::model::{ModelInput, TrackerModel};

/// Smallest box side, in pixels, that the tracker will report.
pub const MIN_SIDE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackRecord {
    pub frame_index: usize,
    /// predicted box in image pixels
    pub pred: BBox,
    pub gt: GroundTruthBox,
    /// wall time of the forward pass and decoding
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrackOptions {
    /// multiply the score map by a Hann window before the argmax
    pub window: bool,
    /// keep each frame's score map
    pub keep_maps: bool,
}

#[derive(Clone, Debug, Default)]
pub struct TrackOutput {
    pub records: Vec<TrackRecord>,
    /// row-major `S × S` score maps, one per record when requested
    pub maps: Vec<Vec<f64>>,
}

fn batch1<T: Real>(a: crate::numerics::DenseArray<T>) -> Result<crate::numerics::DenseArray<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(a.shape());
    a.reshape(&shape)
}

/// Tracks from `init` in frame 0 through the rest of the sequence. The
/// search region of frame `k` is centred on the prediction for frame `k-1`
/// and sized from its extent.
pub fn track_sequence<T: Real>(
    model: &TrackerModel<T>,
    seq: &SequenceData,
    init: &GroundTruthBox,
    opts: TrackOptions,
) -> Result<TrackOutput> {
    init.check_extent()?;
    let prepared = PreparedSequence::<T>::new(seq)?;
    let cfg = &model.config;
    let (rgb_t, ev_t) = prepared.templates(0, init, cfg)?;
    let rgb_template = batch1(rgb_t)?;
    let event_template = batch1(ev_t)?;
    let window = opts.window.then(|| hann_window(cfg.grid()));
    let (w_img, h_img) = (prepared.width as f64, prepared.height as f64);
    let mut prev = BBox::new(init.cx, init.cy, init.w, init.h);
    let mut out = TrackOutput::default();
    for k in 1..prepared.len() {
        let start = Instant::now();
        let side = crop_side(prev.w, prev.h, SEARCH_CONTEXT);
        let (rgb_s, ev_s, tf) = prepared.searches(k, prev.cx, prev.cy, side, cfg)?;
        let input = ModelInput {
            rgb_template: rgb_template.clone(),
            rgb_search: batch1(rgb_s)?,
            event_template: event_template.clone(),
            event_search: batch1(ev_s)?,
        };
        let (maps, _) = model.forward(&input, BnMode::Eval)?;
        let map = &maps[0];
        let b = decode_bbox(map, window.as_deref());
        let (cx, cy, w, h) = tf.box_to_image(b.cx, b.cy, b.w, b.h);
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("decoded box", Some(k)));
        }
        let pred = BBox::new(
            cx.clamp(0.0, w_img),
            cy.clamp(0.0, h_img),
            w.clamp(MIN_SIDE, w_img),
            h.clamp(MIN_SIDE, h_img),
        );
        let seconds = start.elapsed().as_secs_f64();
        out.records.push(TrackRecord {
            frame_index: k,
            pred,
            gt: prepared.gts[k],
            seconds,
        });
        if opts.keep_maps {
            out.maps.push(map.cls.to_f64_vec());
        }
        prev = pred;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{synth_generate, SynthConfig};
    use crate::tracker::model::{ModelConfig, Modality};

    #[test]
    fn one_record_per_later_frame_with_positive_extent() {
        let scfg = SynthConfig {
            frames: 5,
            ..Default::default()
        };
        let seq = SequenceData::from(("s".to_string(), synth_generate(&scfg, 2).unwrap()));
        let cfg = ModelConfig {
            channels: 8,
            depth: 1,
            modality: Modality::Fused,
            ..ModelConfig::toy()
        };
        let model = TrackerModel::<f32>::init(cfg, 1).unwrap();
        let opts = TrackOptions {
            window: true,
            keep_maps: true,
        };
        let out = track_sequence(&model, &seq, &seq.gts[0], opts).unwrap();
        assert_eq!(out.records.len(), 4);
        assert_eq!(out.maps.len(), 4);
        assert_eq!(out.maps[0].len(), cfg.search_tokens());
        for (i, r) in out.records.iter().enumerate() {
            assert_eq!(r.frame_index, i + 1);
            assert!(r.pred.w > 0.0 && r.pred.h > 0.0);
        }
    }
}
