//! Penalized generalized estimating equations for longitudinal data.
//!
//! The numerical core ([`data`], [`correlation`], [`penalty`], [`solver`],
//! [`tuning`]) is generic over the scalar type through [`Real`]; the
//! aliases below fix it to `f64`. The [`simulation`] harness works in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correlation;
pub mod data;
pub mod error;
pub mod penalty;
pub mod scalar;
pub mod simulation;
pub mod solver;
pub mod tuning;

pub use correlation::{CorrelationKind, CorrelationSpec, Family, VarianceModel};
pub use data::{
    load_dataset, read_dataset, standardize, standardize_with, write_dataset, Cluster, ColumnSchema,
    LongitudinalDataset, ResponseScaling, ScalingInfo,
};
pub use error::{PgeeError, Result};
pub use penalty::{PenaltyConfig, PenaltyFamily, PenaltySpec, DEFAULT_SCAD_A};
pub use scalar::Real;
pub use solver::{fit_gee, fit_pgee, gee_score, pgls_objective, Init, Link, ModelSpec, PgeeFit, SolverControl};
pub use tuning::{
    effective_parameters, lambda_max, loso_cv, loso_cv_with_a, penalization_path, qgcv, select_tuning, CvPoint,
    CvSurface, PathResult, SelectionRule, TuningGrid,
};

pub type Dataset = LongitudinalDataset<f64>;
pub type Fit = PgeeFit<f64>;
pub type Penalty = PenaltySpec<f64>;
pub type Model = ModelSpec<f64>;
pub type Control = SolverControl<f64>;
pub type Grid = TuningGrid<f64>;
pub type Surface = CvSurface<f64>;
pub type Path = PathResult<f64>;
