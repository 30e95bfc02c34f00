//! Event streams, exposure-aligned event images, template/search cropping,
//! the synthetic sequence generator and the text/pixmap sequence format.

pub mod crop;
pub mod io;
pub mod stack;
pub mod synth;
pub mod types;

pub use crop::{crop_patch, crop_side, crop_square, CropTransform, SEARCH_CONTEXT, TEMPLATE_CONTEXT};
pub use io::{list_sequences, read_dataset, read_sequence, write_gray_ppm, write_sequence, SequenceData};
pub use stack::stack_events_to_frame;
pub use synth::{synth_generate, Motion, SynthConfig, SynthSequence};
pub use types::{EventPoint, EventStream, ExposureWindow, GroundTruthBox};
