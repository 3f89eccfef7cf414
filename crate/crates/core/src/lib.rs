//! Triplet few-shot repair of a multi-label image classifier: ingest,
//! baseline inference, triplet construction, embedding retraining,
//! prototype re-decision, and before/after statistics.

pub mod artifacts;
pub mod baseline;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod pathology;
pub mod repair;
pub mod stats;
pub mod trainer;
pub mod triplets;

pub use error::{Error, Result};
pub use pathology::{PathologyId, NUM_PATHOLOGIES, PATHOLOGY_NAMES};
