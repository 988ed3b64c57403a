//! Cross-view contrastive alignment toolkit.
//!
//! Geometry primitives, correspondence-dataset generation, vocabulary
//! expansion, the alignment losses with their training loop, and COCO-style
//! evaluation.

pub mod align;
pub mod corrgen;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod seeding;
pub mod vocab;
