//! Multilingual document embeddings trained from weakly supervised triplets
//! and publisher topic labels.

pub mod ann;
pub mod aux_embed;
pub mod corpus;
pub mod driver;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod kmeans;
pub mod linear;
pub mod mining;
pub mod text;
pub mod topics;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
