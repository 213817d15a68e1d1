//! Audio-caption dataset construction and reward scoring.
//!
//! The library mines sound-description captions from subtitle files, plans
//! media acquisition, orchestrates multimodal annotation backends, filters
//! samples by embedding agreement, synthesizes structured captions through a
//! judged retry loop, and packages the result into fixed-size tar shards.
//! Alongside the pipeline it provides the reward stack (accuracy, format,
//! length) with group-relative advantages, and an answer-matching evaluation
//! harness for multiple-choice benchmarks.
//!
//! Modules are layered bottom-up: `error` and `util` underpin everything;
//! `backend` defines the service traits with HTTP and stub implementations;
//! the pipeline stages live in `mining`, `media`, `annotate`, `embedding`,
//! and `synth`; scoring lives in `tagparse` and `reward`; `manifest`,
//! `shard`, `eval`, `stats`, `config`, and `pipeline` form the run harness.

pub mod annotate;
pub mod backend;
pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod media;
pub mod mining;
pub mod pipeline;
pub mod prompts;
pub mod reward;
pub mod shard;
pub mod stats;
pub mod synth;
pub mod tagparse;
pub mod util;

pub use error::{Error, Result};
