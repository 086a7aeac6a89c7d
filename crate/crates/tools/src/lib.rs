//! File formats, dataset tooling, and the command-line pipeline around
//! `quadtrack-core`: PPM/PGM codecs, benchmark-style sequence directories,
//! the synthetic-video generator, key-value configs, model files, report
//! rendering, and the `quadtrack` binary's command implementations.

pub mod bench;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod logging;
pub mod model;
pub mod parallel;
pub mod pnm;
pub mod report;
pub mod synth;
#[doc(hidden)]
pub mod testutil;

pub use error::{Error, Result};
