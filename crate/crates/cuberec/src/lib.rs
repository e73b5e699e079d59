//! CubeRec: a group recommender that represents each group as an
//! axis-aligned hypercube composed from its members' point embeddings.
//!
//! The pipeline has two stages. Stage one pretrains user and item point
//! embeddings with a socially-enhanced light graph convolution and a hinge
//! ranking loss over user-item triples. Stage two composes group hypercubes
//! (geometric bounding or attentive fusion), ranks items by a combined
//! outer/inner point-to-hypercube distance, and regularizes the group
//! geometry with a self-supervised loss built on hypercube intersections and
//! the users shared between overlapping groups.
//!
//! Modules follow the pipeline: [`dataset`] ingestion and sampling,
//! [`graph`] embedding pretraining, [`cube`] geometry, [`ssl`]
//! self-supervision, [`trainer`] joint optimization, [`eval`] ranking
//! metrics, and [`cli`] the batch front end. [`autodiff`] is the small
//! reverse-mode tape the trainers differentiate through.

pub mod autodiff;
pub mod cli;
pub mod cube;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod ssl;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
