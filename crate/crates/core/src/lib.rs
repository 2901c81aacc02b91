//! Hyperbolic graph embeddings, latent diffusion and few-shot node
//! classification.
//!
//! The pipeline lifts node features onto a Poincaré ball, learns embeddings
//! with a variational graph auto-encoder, trains a prototype-conditioned
//! diffusion model on those embeddings and uses it to augment the support set
//! of few-shot episodes.

pub mod diffusion;
pub mod error;
pub mod fewshot;
pub mod geometry;
pub mod graph;
pub mod rng;
pub mod vgae;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
