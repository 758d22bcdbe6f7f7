//! Self-boosting preference-data engine.
//!
//! The pipeline turns a small seed SFT set into an ever-growing synthetic
//! preference dataset:
//!
//! 1. keyword lists are sampled from corpus paragraphs ([`keywords`]) and fed
//!    to a prompt generator through the question-generation template
//!    ([`templates`]);
//! 2. the current policy answers each synthetic prompt, a response improver
//!    rewrites that answer, and the initial policy's answer is kept as the
//!    rejected side ([`synthesis`]);
//! 3. candidates are filtered on score gap, repetition and identity, then
//!    accumulated with a per-iteration cap;
//! 4. the accumulated data drives SimPO preference optimization, realized
//!    here on a trainable toy policy with closed-form gradients ([`simpo`]).
//!
//! [`orchestrator`] runs the loop end to end with crash-safe artifacts, and
//! [`analysis`] reports prompt diversity and topic/intent distributions.
//! Models are reached through [`backend`], either over an OpenAI-compatible
//! HTTP API or through a deterministic seeded mock.

pub mod analysis;
pub mod backend;
pub mod cli;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod keywords;
pub mod orchestrator;
pub mod rng;
pub mod simpo;
pub mod synthesis;
pub mod templates;

pub use error::{Error, Result};
