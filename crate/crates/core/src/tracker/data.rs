//! Turning sequences into normalised template/search crop pairs.

use crate::error::{Error, Result};
use crate::events::{
    crop_patch, crop_square, stack_events_to_frame, CropTransform, GroundTruthBox, SequenceData,
    SEARCH_CONTEXT, TEMPLATE_CONTEXT,
};
use crate::numerics::{DenseArray, Real, Rng};
use crate::tracker::bbox::BBox;
use crate::tracker::model::{ModelConfig, ModelInput};

pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// Maps 0..255 grey levels to roughly unit scale.
pub fn normalize_pixels<T: Real>(img: &DenseArray<f32>) -> DenseArray<T> {
    let data = img
        .data()
        .iter()
        .map(|&v| T::lit((v as f64 / 255.0 - PIXEL_MEAN) / PIXEL_STD))
        .collect();
    DenseArray::new(img.shape(), data).expect("same shape")
}

/// A sequence with every RGB frame and event image normalised up front.
#[derive(Clone, Debug)]
pub struct PreparedSequence<T> {
    pub name: String,
    pub rgb: Vec<DenseArray<T>>,
    pub events: Vec<DenseArray<T>>,
    pub gts: Vec<GroundTruthBox>,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> PreparedSequence<T> {
    pub fn new(seq: &SequenceData) -> Result<Self> {
        if seq.frames.is_empty() || seq.gts.len() != seq.frames.len() {
            return Err(Error::dim(format!(
                "sequence {}: {} frames, {} boxes",
                seq.name,
                seq.frames.len(),
                seq.gts.len()
            )));
        }
        let events = seq
            .windows
            .iter()
            .map(|&w| stack_events_to_frame::<f32>(&seq.stream, w).map(|f| normalize_pixels(&f)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: seq.name.clone(),
            rgb: seq.frames.iter().map(normalize_pixels).collect(),
            events,
            gts: seq.gts.clone(),
            width: seq.width(),
            height: seq.height(),
        })
    }

    pub fn len(&self) -> usize {
        self.rgb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rgb.is_empty()
    }

    /// RGB and event template crops around `bbox` in frame `k`.
    pub fn templates(
        &self,
        k: usize,
        bbox: &GroundTruthBox,
        cfg: &ModelConfig,
    ) -> Result<(DenseArray<T>, DenseArray<T>)> {
        let (rgb, _) = crop_patch(&self.rgb[k], bbox, TEMPLATE_CONTEXT, cfg.template_size)?;
        let (ev, _) = crop_patch(&self.events[k], bbox, TEMPLATE_CONTEXT, cfg.template_size)?;
        Ok((rgb, ev))
    }

    /// RGB and event search crops of side `side` centred at `(cx, cy)`.
    pub fn searches(
        &self,
        k: usize,
        cx: f64,
        cy: f64,
        side: f64,
        cfg: &ModelConfig,
    ) -> Result<(DenseArray<T>, DenseArray<T>, CropTransform)> {
        let (rgb, tf) = crop_square(&self.rgb[k], cx, cy, side, cfg.search_size)?;
        let (ev, _) = crop_square(&self.events[k], cx, cy, side, cfg.search_size)?;
        Ok((rgb, ev, tf))
    }
}

/// Random perturbation of the search region during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    /// maximum centre shift in units of `sqrt(w·h)`
    pub centre: f64,
    /// maximum log-scale change of the crop side
    pub scale: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            centre: 0.5,
            scale: 0.15,
        }
    }
}

/// One training example.
#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub rgb_template: DenseArray<T>,
    pub rgb_search: DenseArray<T>,
    pub event_template: DenseArray<T>,
    pub event_search: DenseArray<T>,
    /// search-frame box in normalised search-crop units
    pub target: BBox,
}

pub fn make_sample<T: Real>(
    seq: &PreparedSequence<T>,
    template_frame: usize,
    search_frame: usize,
    cfg: &ModelConfig,
    jitter: Jitter,
    rng: &mut Rng,
) -> Result<Sample<T>> {
    let tb = &seq.gts[template_frame];
    let (rgb_template, event_template) = seq.templates(template_frame, tb, cfg)?;
    let sb = &seq.gts[search_frame];
    let extent = (sb.w * sb.h).sqrt();
    let cx = sb.cx + rng.uniform_in(-jitter.centre, jitter.centre) * extent;
    let cy = sb.cy + rng.uniform_in(-jitter.centre, jitter.centre) * extent;
    let side = extent * SEARCH_CONTEXT * rng.uniform_in(-jitter.scale, jitter.scale).exp();
    let (rgb_search, event_search, tf) = seq.searches(search_frame, cx, cy, side, cfg)?;
    let (ncx, ncy, nw, nh) = tf.box_to_crop(sb.cx, sb.cy, sb.w, sb.h);
    Ok(Sample {
        rgb_template,
        rgb_search,
        event_template,
        event_search,
        target: BBox::new(ncx, ncy, nw, nh),
    })
}

fn stack<T: Real>(items: &[&DenseArray<T>]) -> Result<DenseArray<T>> {
    let first = items.first().ok_or_else(|| Error::dim("empty batch"))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(items.len() * first.len());
    for it in items {
        it.expect_shape(first.shape(), "batch item")?;
        data.extend_from_slice(it.data());
    }
    DenseArray::new(&shape, data)
}

pub fn collate<T: Real>(samples: &[Sample<T>]) -> Result<(ModelInput<T>, Vec<BBox>)> {
    let pick = |f: fn(&Sample<T>) -> &DenseArray<T>| stack(&samples.iter().map(f).collect::<Vec<_>>());
    Ok((
        ModelInput {
            rgb_template: pick(|s| &s.rgb_template)?,
            rgb_search: pick(|s| &s.rgb_search)?,
            event_template: pick(|s| &s.event_template)?,
            event_search: pick(|s| &s.event_search)?,
        },
        samples.iter().map(|s| s.target).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{synth_generate, SynthConfig};

    fn prepared() -> PreparedSequence<f64> {
        let cfg = SynthConfig {
            frames: 6,
            ..Default::default()
        };
        let seq = synth_generate(&cfg, 3).unwrap();
        PreparedSequence::new(&SequenceData::from(("s".to_string(), seq))).unwrap()
    }

    #[test]
    fn normalisation_range() {
        let img = DenseArray::from_f64(&[1, 3, 1], &[0.0, 127.5, 255.0]).unwrap();
        let n: DenseArray<f64> = normalize_pixels(&img);
        assert_eq!(n.data(), &[-2.0, 0.0, 2.0]);
    }

    #[test]
    fn unjittered_target_is_centred() {
        let seq = prepared();
        let cfg = ModelConfig::toy();
        let mut rng = Rng::new(0);
        let s = make_sample(&seq, 0, 3, &cfg, Jitter { centre: 0.0, scale: 0.0 }, &mut rng).unwrap();
        assert!((s.target.cx - 0.5).abs() < 1e-12 && (s.target.cy - 0.5).abs() < 1e-12);
        assert!((s.target.w - 0.25).abs() < 1e-12);
        assert_eq!(s.rgb_search.shape(), &[48, 48, 3]);
        assert_eq!(s.event_template.shape(), &[24, 24, 3]);
    }

    #[test]
    fn jittered_target_stays_inside_the_crop() {
        let seq = prepared();
        let cfg = ModelConfig::toy();
        let mut rng = Rng::new(1);
        for k in 0..50 {
            let s = make_sample(&seq, 0, k % 6, &cfg, Jitter::default(), &mut rng).unwrap();
            let t = s.target;
            assert!(t.cx - t.w / 2.0 > 0.0 && t.cx + t.w / 2.0 < 1.0);
            assert!(t.cy - t.h / 2.0 > 0.0 && t.cy + t.h / 2.0 < 1.0);
        }
    }

    #[test]
    fn collate_stacks_items() {
        let seq = prepared();
        let cfg = ModelConfig::toy();
        let mut rng = Rng::new(2);
        let a = make_sample(&seq, 0, 1, &cfg, Jitter::default(), &mut rng).unwrap();
        let b = make_sample(&seq, 2, 4, &cfg, Jitter::default(), &mut rng).unwrap();
        let (x, t) = collate(&[a.clone(), b]).unwrap();
        assert_eq!(x.rgb_search.shape(), &[2, 48, 48, 3]);
        assert_eq!(&x.event_template.data()[..a.event_template.len()], a.event_template.data());
        assert_eq!(t[0], a.target);
    }
}
