//! Semi-supervised in-context learning engine.
//!
//! A small ground-truth demonstration set and a large unlabeled pool go in;
//! confidence-filtered pseudo-demonstrations come out, ready to be mixed into
//! many-shot prompts. The crate covers the whole pipeline:
//!
//! * [`prompt`] and [`parse`]: template rendering and response parsing,
//! * [`confidence`]: verbalized, entropy, self-consistency and back-translation
//!   scorers plus percentile thresholding,
//! * [`embed`]: embedding providers, cosine similarity and k-means,
//! * [`annotate`]: single-pass annotation, the iterative curriculum loop and
//!   the epsilon-random chunk sampler,
//! * [`select`]: diverse demonstration selection and final inference,
//! * [`metrics`]: accuracy and chrF++,
//! * [`backend`]: the language-model interface, an OpenAI-compatible client
//!   and a deterministic simulator,
//! * [`store`], [`manifest`], [`fixture`], [`config`] and [`runner`]: the
//!   persistence and experiment plumbing used by the `semicl` binary.

pub mod annotate;
pub mod backend;
pub mod config;
pub mod confidence;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod fixture;
pub mod manifest;
pub mod metrics;
pub mod parse;
pub mod prompt;
pub mod runner;
pub mod select;
pub mod store;
pub mod task;
pub mod types;
mod util;

pub use error::{Error, Result};
pub use task::{Equivalence, TaskFamily, TaskSpec};
pub use types::{Demo, DemoSet, Example, LmResponse, Origin, PseudoDemonstration, ScorerKind};
