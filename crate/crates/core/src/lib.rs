//! Self-weighted multiview metric learning.
//!
//! Learns one Mahalanobis metric `A^v = W^v (W^v)^T` per view of a multiview
//! dataset. The projections maximize an averaged between-class margin
//! (dissimilar-pair scatter minus similar-pair scatter) plus pairwise
//! cross-view correlation terms, with view weights `alpha` learned in closed
//! form inside an alternating solver. Learned metrics are evaluated with a
//! weighted multiview nearest-neighbour classifier.
//!
//! Matrices follow the features-by-samples convention: a view with `D_v`
//! features over `n` samples is a `D_v x n` matrix.

pub mod cli;
pub mod constraints;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod metric;
pub mod scatter;
pub mod solver;

pub use constraints::{build_constraints, ConstraintSet};
pub use dataset::{generate_synthetic, load_dataset, split, MultiviewDataset, SplitSpec, SyntheticSpec, ViewMatrix};
pub use error::{Error, Result};
pub use eval::{knn_classify, run_benchmark, EvalConfig, EvalReport};
pub use metric::{check_metric_axioms, AxiomReport, Mahalanobis, SM2LModel, Weighting};
pub use scatter::{compute_cross, compute_scatter, CrossCorrelation, ScatterPair};
pub use solver::{train, Hyperparams, ProjectionSet, ViewGain};

/// Version tag embedded in every structured output file.
pub const FORMAT_VERSION: &str = "mvmetric/1";
