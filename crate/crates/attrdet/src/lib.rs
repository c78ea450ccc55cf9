//! File formats, command-line front end and benchmark pipeline built on
//! `attrdet-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod formats;

pub use bench::{bench_seed, bench_sweep, BenchRow};
pub use formats::{AnnotationRecord, DetectionRecord, FormatError, PredictionRecord};
