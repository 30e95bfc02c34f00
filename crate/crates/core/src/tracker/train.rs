use std::io::Write;

use log::info;

use crate::error::{Error, Result};
use crate::events::SequenceData;
use crate::numerics::{Real, Rng};
use crate::tracker::data::{collate, make_sample, Jitter, PreparedSequence};
use crate::tracker::loss::LossWeights;
use crate::tracker::model::{ModelConfig, TrackerModel};
use crate::tracker::optim::{adamw_step, AdamWConfig, OptimState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub optim: AdamWConfig,
    pub weights: LossWeights,
    pub jitter: Jitter,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            optim: AdamWConfig::default(),
            weights: LossWeights::default(),
            jitter: Jitter::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: TrackerModel<T>,
    /// batch-mean total loss per step
    pub losses: Vec<f64>,
}

/// Trains from scratch on `dataset`. Template and search frames are drawn
/// uniformly from one sequence per batch entry. When `log` is given, one
/// `step loss` line is written per step.
pub fn train_toy<T: Real>(
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    dataset: &[SequenceData],
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome<T>> {
    if dataset.is_empty() {
        return Err(Error::config("training needs at least one sequence"));
    }
    if cfg.batch == 0 {
        return Err(Error::config("batch must be positive"));
    }
    let prepared = dataset
        .iter()
        .map(PreparedSequence::<T>::new)
        .collect::<Result<Vec<_>>>()?;
    let root = Rng::new(cfg.seed);
    let mut model = TrackerModel::init(model_cfg, cfg.seed)?;
    let mut state = OptimState::new(&model.params, cfg.optim);
    let mut rng = root.fork(100);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let mut samples = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let seq = &prepared[rng.below(prepared.len())];
            let tf = rng.below(seq.len());
            let sf = rng.below(seq.len());
            samples.push(make_sample(seq, tf, sf, &model_cfg, cfg.jitter, &mut rng)?);
        }
        let (input, targets) = collate(&samples)?;
        let (loss, grads) = model.train_step_grads(&input, &targets, &cfg.weights)?;
        adamw_step(&mut model.params, &grads, &mut state)?;
        if let Some(w) = log.as_mut() {
            writeln!(w, "{step} {}", loss.total)?;
        }
        if step % 100 == 0 {
            info!(
                "step {step}: loss {:.4} (focal {:.4}, l1 {:.4}, giou {:.4})",
                loss.total, loss.focal, loss.l1, loss.giou
            );
        }
        losses.push(loss.total);
    }
    Ok(TrainOutcome { model, losses })
}
