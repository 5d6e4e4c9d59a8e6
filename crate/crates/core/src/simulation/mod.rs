//! Simulation designs, evaluation metrics, bootstrap and study harness.

pub mod bootstrap;
pub mod generators;
pub mod metrics;
pub mod study;

pub use bootstrap::bootstrap_se;
pub use generators::{
    simulate_binomial, simulate_cross_sectional, simulate_lagged, CrossSectionalConfig, LaggedConfig, Sigma1Convention,
};
pub use metrics::{implied_beta, implied_beta_general, model_error, selection_metrics};
pub use study::{run_study, Design, DesignSpec, FamilySummary, ReplicateRecord, SimReport, StudyConfig};
