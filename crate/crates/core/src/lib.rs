//! Sparse composite document vectors over contextual word-sense embeddings.
//!
//! The pipeline clusters each word's contextual occurrence vectors into
//! senses, soft-clusters the sense vocabulary with a tied-covariance GMM,
//! composes idf-weighted word-topic vectors and averages them per document.
//! Numeric types are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod anisotropy;
pub mod corpus;
pub mod docvec;
pub mod embed_store;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod soft_cluster;
pub mod synthetic;
pub mod wsd;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SenseInventory = wsd::SenseInventory<f64>;
pub type GmmModel = soft_cluster::GmmModel<f64>;
pub type AnisotropyTransform = anisotropy::AnisotropyTransform<f64>;
pub type DocumentVectorSet = docvec::DocumentVectorSet<f64>;
pub type WordTopicTable = docvec::WordTopicTable<f64>;
pub type LinearModel = eval::LinearModel<f64>;

pub type SenseInventoryF32 = wsd::SenseInventory<f32>;
pub type GmmModelF32 = soft_cluster::GmmModel<f32>;
pub type AnisotropyTransformF32 = anisotropy::AnisotropyTransform<f32>;
pub type DocumentVectorSetF32 = docvec::DocumentVectorSet<f32>;
