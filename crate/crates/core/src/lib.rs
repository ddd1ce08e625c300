//! Coreset selection by influence-weighted independent sets.
//!
//! The engine scores every training sample by its trajectory influence on a
//! target set (restricted to the channels that are salient on both sides),
//! links redundant training pairs in a sparse k-nearest-neighbor conflict
//! graph whose edge thresholds adapt to local density, and then picks a
//! budget-limited, high-weight independent set with a max-heap greedy.
//!
//! Modules follow the data flow:
//!
//! * [`matrixio`]: `SEEDMAT1` binary matrices, CSV fallback, JSON manifests.
//! * [`influence`]: channel saliency, mutual subspace, influence, node weights.
//! * [`graph`]: row normalization, exact batched kNN, adaptive thresholds.
//! * [`wis`]: greedy and exact weighted independent set solvers.
//! * [`pipeline`]: end-to-end runs, ablation switches, multi-target voting.
//! * [`synthbench`]: seeded synthetic instances with planted quality.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); all reductions
//! accumulate in `f64`. The aliases below cover the common storage choices.

pub mod error;
pub mod graph;
pub mod influence;
pub mod matrixio;
pub mod pipeline;
pub mod scalar;
pub mod synthbench;
pub mod wis;

mod kernel;

pub use error::{Result, SeedError};
pub use graph::{
    adaptive_thresholds, build_conflict_graph, knn_search, local_density, normalize_rows,
    ConflictGraph, KnnIndex, LocalDensity, Neighbor, NormalizedRows,
};
pub use influence::{
    build_masked_node_embeddings, build_node_embeddings, channel_saliency, mutual_subspace,
    node_weights, per_step_influence, stacked_saliency, trajectory_influence, ChannelMask,
    InfluenceMatrix, NodeWeights,
};
pub use matrixio::{
    load_bundle, load_matrix, read_bundle, read_csv_matrix, read_matrix, save_matrix,
    write_bundle, write_matrix, CheckpointBundle, CheckpointGradients, DenseMatrix, Manifest, ManifestEntry,
};
pub use pipeline::{
    build_graph, emit_report, run_select, run_select_labeled, run_vote, tally_votes, Budget,
    GraphBuild, RunReport,
    SeedConfig, SeedRun, TargetSelector, VoteTally,
};
pub use scalar::Scalar;
pub use synthbench::{
    degree_balance, eval_selection, generate, write_instance, DomainSpec, GroundTruth,
    SelectionMetrics, SynthSpec,
};
pub use wis::{
    exact_wis, greedy_wis, oracle_check, random_instance, top_k_by_weight, OracleRow,
    SelectionResult, EXACT_WIS_LIMIT,
};

/// Gradient features as stored on disk.
pub type Matrix = DenseMatrix<f32>;
/// Double-precision matrix used for embeddings and accumulated products.
pub type Matrix64 = DenseMatrix<f64>;
/// A checkpoint bundle loaded from `SEEDMAT1` files.
pub type Bundle = CheckpointBundle<f32>;
/// A bundle held in double precision, mostly useful in tests.
pub type Bundle64 = CheckpointBundle<f64>;
/// One checkpoint of single-precision gradient features.
pub type Checkpoint = CheckpointGradients<f32>;
