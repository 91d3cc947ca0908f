//! Token-level uncertainty scoring for vision-language generation traces.
//!
//! The crate reads recorded generation traces (per-token next-token
//! distributions with and without the image, visual attention mass, hidden
//! states) and computes:
//!
//! - language-only token uncertainty baselines ([`scores`]),
//! - visual grounding weights from distribution shift and attention ([`grounding`]),
//! - the grounding-weighted entropy score and its grid search ([`vigtuq`]),
//! - AUROC / ECE, token-selection curves and benchmark reports ([`eval`]),
//! - layer-wise representation analyses ([`repr`]),
//!
//! plus a seeded synthetic corpus generator ([`synth`]) with planted structure
//! for end-to-end checks, and the command-line driver ([`cli`]).

pub mod cli;
pub mod error;
pub mod eval;
pub mod grounding;
pub mod repr;
pub mod rng;
pub mod scores;
pub mod synth;
pub mod trace;
pub mod vigtuq;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
