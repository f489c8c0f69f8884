//! Local triage of executables via grayscale "binary images" and a small
//! two-layer convolutional network.
//!
//! The pipeline: raw bytes are laid out row-major as 8-bit pixels
//! ([`image::bytes_to_image`]), box-resampled to a fixed 64x64 plane
//! ([`image::resize_to_plane`]), and classified by the network described in
//! [`nn::ModelSpec`]. On top of that sit dataset ingestion and balancing
//! ([`dataset`]), the training/evaluation loop ([`trainer`]), a filesystem
//! scanner emitting escalation records for a backend ([`scanner`]), and a
//! synthetic corpus generator for desk-scale experiments ([`corpusgen`]).
//!
//! Class index 0 is the benign class by convention; the suspiciousness score
//! of a sample is `1 - P(class 0)`.

// pub mod corpusgen;
// pub mod dataset;
pub mod digest;
pub mod image;
pub mod nn;
pub mod rng;
// pub mod scanner;
// pub mod trainer;

// mod engine;
mod gemm;
mod real;

pub use real::Real;
