//! ResUnet speaker embeddings with semi-supervised domain adaptation: audio
//! front end, network, losses and schedules, pseudo-labeling by clustering,
//! cosine scoring with calibration and fusion, and the adaptation loop.

pub mod backend;
pub mod clustering;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod resunet;
pub mod schedule;
pub mod seed;

pub use error::{Error, Result};
