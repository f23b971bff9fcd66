//! Training loops, hyperparameter search, corruption-sweep evaluation and
//! feature-space nearest-neighbour matching.

pub mod data;
pub mod eval;
pub mod matching;
pub mod search;
pub mod train;

pub use data::{batch_schedule, fit_stats, prepare, synthetic_grids, with_prefetch};
pub use eval::{
    eval_reconstruction, noise_sweep, reconstruct, reconstruction_distances, removal_sweep, scan_distances, EvalOptions,
    EvalReport, EvalRow, ScanDistances, DEFAULT_NOISE_LEVELS, DEFAULT_REMOVAL_LEVELS,
};
pub use matching::{nn_match, FeatureIndex, MatchResult, Neighbor};
pub use search::{argmin, random_search, SearchReport, SearchSpace, TrialConfig, TrialResult};
pub use train::{
    train_gan, train_vae, write_curve_csv, GanConfig, GanCurvePoint, GanRun, ValPoint, VaeConfig, VaeCurvePoint, VaeRun,
};
