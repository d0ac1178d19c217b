//! Stitching a frozen feature encoder to a frozen decoder-only language
//! model through a single trained linear projection, at desk scale.
//!
//! The crate provides:
//! - a small dense-tensor engine with reverse-mode gradients ([`tensor`]),
//! - a miniature GPT-style LM that accepts mixed soft-prompt/token input ([`lm`]),
//! - a synthetic two-modality world with a controllable taxonomy ([`world`]),
//! - four feature encoders spanning a supervision spectrum ([`encoders`]),
//! - the projection and its caption-loss trainer ([`projection`]),
//! - captioning / VQA harnesses ([`tasks`]) and the full metric suite ([`metrics`]).

pub mod encoders;
pub mod error;
pub mod io;
pub mod lm;
pub mod metrics;
pub mod projection;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod world;

pub use error::{Error, Result};
pub use tensor::{ParamStore, Tape, Tensor, Var};
