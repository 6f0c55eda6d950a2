pub mod error;
pub mod fwer;
pub mod glm_score;
pub mod maxt;
pub mod model;
pub mod mvn;
pub mod numeric;
pub mod sim;

/// Library version, recorded in run logs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, ErrorCategory, Result};
pub use fwer::{
    adjust_pvalues, bonferroni, log_gamma_k, m_eff, sidak, solve_alpha_loc, AdjustedPValues,
    FwerResult, GammaPlan, Method,
};
pub use glm_score::{
    correlation_band, detect_blocks, fit_null, score_statistics, BandedCorrelation,
    CorrelationMode, NullFit, ScoreStatistics,
};
pub use maxt::{maxt_ci, run_maxt, MaxtCi, PermutationRun};
pub use model::{
    impute_missing, load_dataset, save_dataset, Dataset, DatasetPaths, Family, GenotypeCoding,
    GenotypeMatrix, ImputationReport, MarkerPosition,
};
pub use sim::{
    ar1_band, generate_gwas, null_calibration, run_ar1_experiment, Ar1Experiment, Ar1Spec,
    CalibrationSpec, SyntheticGwas,
};
