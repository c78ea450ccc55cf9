//! Algorithmic core for attribute-aware pedestrian detection in crowds.
//!
//! Everything here is pure computation over boxes, grids and embedding
//! vectors: ground-truth target generation, the training objectives, the
//! suppression family (greedy, density-aware, diversity-aware and
//! attribute-aware NMS), MR⁻² evaluation, and a seeded synthetic crowd
//! generator. The crate is `no_std` and only needs `alloc`; file formats,
//! the command line and parallel drivers live in the `attrdet` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attributes;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod losses;
pub mod nms;
pub mod synth;
pub mod targets;

pub use attributes::Embedding;
pub use error::{Error, Result};
pub use eval::{EvalCurve, GtFilter, MatchResult};
pub use geometry::BBox;
pub use grid::Grid;
pub use losses::{LossBreakdown, LossWeights, PredictedMaps};
pub use nms::{Detection, NmsConfig, NmsVariant};
pub use synth::{EmbeddingMode, SynthConfig};
pub use targets::{GroundTruthScene, GtBox, TargetMaps};
