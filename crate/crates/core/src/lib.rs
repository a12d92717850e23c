//! Optimal-transport style transfer of reference cell categories onto
//! spatial transcriptomics spots.

pub mod benchgen;
pub mod distance;
pub mod error;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod pipeline;
pub mod preprocess;
pub mod solver;
pub mod types;

pub use distance::{cosine_distance, cosine_similarity, js_divergence};
pub use error::{DotError, Result};
pub use objective::{Problem, Term, TermValues};
pub use pipeline::{fit, FeatureMode, FitConfig, FitReport, FitResult, SpatialInput};
pub use preprocess::CellTable;
pub use solver::{Resolution, SolveReport, SolverConfig};
pub use types::*;
