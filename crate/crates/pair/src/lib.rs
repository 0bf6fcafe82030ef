//! Desk-scale dense passage retrieval with joint query-centric and
//! passage-centric contrastive training, teacher-thresholded
//! pseudo-labeling, two-stage training, exact top-k retrieval, and
//! retrieval evaluation.

pub mod corpus;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod index;
pub mod objective;
pub mod synthetic;
pub mod trainer;

pub use error::{PairError, Result};
