//! Online emotion recognition for dyadic conversations.
//!
//! The pipeline encodes a sliding window of past utterances plus the target
//! with per-modality bidirectional GRUs, propagates over a relational
//! speaker graph, scores the six emotions with a dueling Q-network, and
//! revises the scores with domain-knowledge tables of label transitions.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod config;
pub mod corpus;
pub mod dk;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod inference;
pub mod labels;
pub mod ndiff;
pub mod rng;

pub use agent::{NetworkConfig, QNetwork, TrainerConfig};
pub use config::RunConfig;
pub use corpus::{Conversation, Manifest, Speaker, SynthSpec, Utterance};
pub use dk::{build_dk, DkTable, LabelPair};
pub use error::{Error, Result};
pub use inference::{Model, Revision};
pub use labels::{EmotionLabel, N_CLASSES};
