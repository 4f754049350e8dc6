//! Learning-based procedural content generation.
//!
//! The pipeline learns, in order:
//!
//! * an acceptability filter over the content space by uncertainty-sampling
//!   active learning ([`icq`]),
//! * per-feature content categorizers with confidence-based rejection
//!   ([`cc`]),
//! * public consensus and annotator reliability from noisy beta-tester
//!   surveys with a two-coin EM model ([`gpe`]),
//! * a reliability-threshold ensemble that predicts a player's enjoyment from
//!   their play-log ([`pdc`]),
//!
//! and then drives an online three-state controller ([`ip`]) that picks the
//! next game for each target player. [`simworld`] provides planted ground
//! truth for all of it and [`harness`] wires the stages into a CLI.

pub mod artifact;
pub mod cc;
pub mod clustering;
pub mod content;
pub mod error;
pub mod gpe;
pub mod harness;
pub mod icq;
pub mod ip;
pub mod learners;
pub mod pdc;
pub mod rng;
pub mod simworld;

pub use error::{Error, Result};
