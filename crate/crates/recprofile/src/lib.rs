//! Attribute inference from recommendation lists.
//!
//! The pipeline trains an original recommender, confirms a surrogate model by
//! recommendation-list similarity, aligns content embeddings into the surrogate
//! latent space, augments each user's list with the most similar unseen items,
//! and infers user attributes with an adaptive-weight classifier. Four analyst
//! scenarios control how much information each stage may use.

pub mod augment;
pub mod classify;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod math;
pub mod rec;
pub mod seed;
pub mod surrogate;

pub use error::{Error, Result};
