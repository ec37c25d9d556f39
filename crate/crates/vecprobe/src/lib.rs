//! Vectorized-scene trajectory prediction workbench.
//!
//! The crate covers the full loop from raw scenario data to model
//! diagnostics:
//!
//! * [`scene`] — domain types, polyline segmentation, target-centric
//!   normalization and graph-input assembly.
//! * [`ingest`] — track CSV / map JSON parsing, windowing into prediction
//!   cases, and leak-free dataset splitting.
//! * [`grad`] — a tape-based reverse-mode differentiation engine over the
//!   fixed op set the predictor needs.
//! * [`model`] — the polyline-subgraph / global-attention predictor and its
//!   training loop.
//! * [`metrics`] — minADE / minFDE / miss-rate and the cross-scenario
//!   generalization matrix.
//! * [`attribution`] — integrated-gradients attribution with the mixed
//!   zero/Gaussian baseline, completeness diagnostics and aggregation views.
//! * [`render`] — SVG scene rendering shaded by per-vector relevance.
//! * [`synth`] — deterministic synthetic scenario generation and the
//!   independent brute-force metric oracle.

/// Crate version as recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod attribution;
pub mod grad;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod render;
pub mod scene;
pub mod seeding;
pub mod synth;
