//! Joint selection and labeling of repeatable features across an image
//! collection.
//!
//! Given per-image feature candidates and noisy pairwise correspondence
//! scores, the solver picks `k` candidates per image and labels them
//! consistently, trading cycle consistency of the induced matches against a
//! low-rank model of the selected coordinates.

pub mod assignment;
pub mod config;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod io;
pub mod linalg;
pub mod model;
pub mod projection;
pub mod reconstruction;
pub mod solver;
pub mod synthetic;

pub use assignment::{discretize, solve_lap, AssignmentResult};
pub use config::{ProjectionControl, SolverConfig, StepControl};
pub use error::{Error, Result};
pub use eval::{GroundTruth, MetricValue};
pub use model::{
    assemble_block, validate_instance, FeatureSet, PairwiseScores, ProblemInstance,
    SelectionLabeling,
};
pub use projection::{project_onto_c, RelaxedLabeling};
pub use reconstruction::{affine_factorize, AffineReconstruction};
pub use solver::{solve, MeasurementEstimate, ObjectiveParts, SolverState, TraceRecord};
pub use synthetic::{brute_force_solve, generate, PlantedInstance, SynthParams};
