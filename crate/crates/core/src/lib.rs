//! Acoustic event analysis for multichannel squash-court recordings.
//!
//! The crate turns synchronized microphone streams into a list of ball-impact
//! events, each carrying a 3-D position, an event time, and an impact-surface
//! label. The stages are:
//!
//! 1. per-channel impact detection on raw amplitude streams (`detect`),
//! 2. grouping of per-channel detections into candidate events (`pipeline`),
//! 3. maximum-likelihood inversion of time-differences-of-arrival into a
//!    court position (`localize`),
//! 4. per-surface binary classification of the waveform around each
//!    detection, fused into a single label (`classify`).
//!
//! A synthetic-court simulator (`simulate`) generates ground-truth scenes for
//! calibration and for the numerical experiments exercised by the test suite.

// Guards written as `!(x > 0.0)` are deliberate: they reject NaN along with
// the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod detect;
pub mod geometry;
pub mod localize;
pub mod pipeline;
pub mod signal;
pub mod simulate;
