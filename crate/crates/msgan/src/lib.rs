//! File formats, image IO and experiment orchestration for `msgan-core`.
//!
//! The `msgan` binary wraps these modules: [`config`] merges a TOML file,
//! `MSGAN_*` environment variables and flags; [`folders`] reads and writes
//! image-folder datasets; [`checkpoint`] stores verified parameter archives;
//! [`run`] executes jobs and [`record`] and [`report`] describe what they
//! produced.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod folders;
pub mod record;
pub mod report;
pub mod run;

pub use error::{Error, Result};
