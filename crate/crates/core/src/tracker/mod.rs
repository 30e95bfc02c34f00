//! Tracking head, losses, optimiser, the end-to-end model, training and
//! online tracking loops, metrics and the parameter/FLOP audit.

pub mod audit;
pub mod bbox;
pub mod data;
pub mod head;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod track;
pub mod train;

pub use audit::{closed_form_params, count_params, estimate_flops, FlopBreakdown};
pub use bbox::{decode_bbox, giou_loss, hann_window, iou, make_cls_target, BBox, ScoreMapOutput};
pub use head::{head_backward, head_forward, BnMode, HeadBuffers, HeadParams};
pub use loss::{focal_loss, total_loss, total_loss_grad, LossBreakdown, LossWeights};
pub use model::{score_map_loss, ModelConfig, ModelInput, Modality, TrackerModel, TrackerParams};
pub use metrics::{eval_metrics, mean_iou, Metrics, Report};
pub use optim::{adamw_step, AdamWConfig, OptimState};
pub use track::{track_sequence, TrackOptions, TrackOutput, TrackRecord};
pub use train::{train_toy, TrainConfig, TrainOutcome};
