//! Microscopy pathogen detection from bounding-box annotations.
//!
//! The pipeline turns annotated fields of view into balanced, augmented patch
//! datasets ([`patchset`]), trains a small convolutional network on them
//! ([`model`], built on the [`neural`] engine), localizes objects in whole
//! images with sliding-window scoring and non-maximum suppression
//! ([`detector`]), and compares the network against a shape-feature +
//! extremely-randomized-trees baseline ([`eval`]). [`synth`] generates a
//! deterministic synthetic corpus so every stage can be exercised offline.

pub mod neural;
pub mod patchset;
pub mod seed;
pub mod model;
pub mod detector;
pub mod eval;
pub mod synth;
