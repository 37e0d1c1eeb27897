//! Spatial interaction models of museum visits calibrated against flows
//! extracted from geotagged social media.
//!
//! The crate covers the whole chain: planar geometry in a local frame, the
//! gravity-model family with its constrained variants, the tweet filtering
//! pipeline that turns a raw corpus into an observed origin-destination
//! matrix, β calibration by correlation, and a seeded synthetic generator
//! for end-to-end checks.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod geometry;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod synth;

pub use calibration::{
    compare_specifications, fit_at_beta, pearson_r, rms_error, sweep_beta, BetaGrid, Calibrator, Execution, FitMetrics,
    SweepResult,
};
pub use error::{Error, Result};
pub use geometry::{haversine_km, point_in_polygon, GeoPoint, GeoPolygon, LocalFrame, PlanarPoint, PolygonM};
pub use model::{
    Constraint, Deterrence, DeterrenceKind, FlowMatrix, ModelSpec, Museum, PreparedModel, SpecPreset, Zone,
};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineReport, Tweet};
pub use synth::{generate_corpus, recovery_report, SynthConfig, SyntheticRegion};
