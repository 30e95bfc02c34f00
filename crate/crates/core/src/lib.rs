//! Frame/event single-object tracking on selective state-space models.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`] – dense arrays, kernels with hand-written backward passes,
//!   seeded RNG and the finite-difference checker.
//! * [`ssm`] – zero-order-hold discretization and the selective scan
//!   (sequential, parallel associative, and reverse-mode).
//! * [`blocks`] – patch embedding, the bidirectional block, the modality
//!   backbone, cross-modal fusion and the checkpoint container.
//! * [`events`] – event streams, event-frame stacking, template/search
//!   cropping, the synthetic sequence generator and the on-disk formats.
//! * [`tracker`] – head, box decoding, losses, AdamW, training, online
//!   tracking, metrics and the parameter/FLOP audit.
//! * [`config`] – the `key = value` run configuration.
//! * [`selftest`] – the built-in invariant checks.

pub mod blocks;
pub mod config;
pub mod error;
pub mod events;
pub mod numerics;
pub mod selftest;
pub mod ssm;
pub mod tracker;

pub use error::{Error, Result};
pub use numerics::{DenseArray, ParamTree, Real, Rng};
