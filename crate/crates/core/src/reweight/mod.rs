//! Sample weight learners and weighted moment helpers.

mod dwr;
mod lsif;
mod srdo;
mod weights;

pub use dwr::{
    dwr_initial_weights, dwr_learn, dwr_learn_traced, dwr_objective, DwrConfig, DwrTrace,
};
pub use lsif::{lsif_learn, median_distance, Bandwidth, LsifConfig, LsifModel, LsifProblem};
pub use srdo::{
    srdo_learn_classifier, srdo_resample, SrdoClassifierConfig, MIN_CLASSIFIER_SAMPLES,
};
pub use weights::{
    constraint_residual, effective_sample_size, max_abs_weighted_corr, normalize_clip,
    weighted_corr_matrix, weighted_cov, weighted_cov_matrix, weighted_means, WeightSet,
    MEAN_TOLERANCE,
};
