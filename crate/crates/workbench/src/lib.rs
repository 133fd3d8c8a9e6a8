//! Workbench: the `pathoscope` command-line pipeline and the review API.
//!
//! Every command reads its inputs, writes artifacts into an output directory
//! and records a `<command>.manifest.json` there with the resolved config,
//! its hash, and SHA-256 digests of every input and artifact. Nothing in a
//! run directory depends on wall-clock time, so identical inputs and seeds
//! reproduce identical bytes.

pub mod commands;
pub mod config;
pub mod detection;
pub mod run;
pub mod server;
