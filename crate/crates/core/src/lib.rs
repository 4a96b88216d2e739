//! Fair and differentially private training of binary classifiers with
//! Lagrangian duality.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiation. Privacy accounting is always
//! done in `f64`.

pub mod accountant;
pub mod analysis;
pub mod data;
pub mod error;
pub mod fairness;
pub mod lagrangian;
pub mod model;
pub mod privacy;
pub mod report;
pub mod scalar;

pub use accountant::{calibrate_sigma, rdp_sampled_gaussian, to_dp, LedgerReport, MechanismKind, PrivacyLedger, RdpCurve, SplitPolicy};
pub use analysis::{dual_error_bound, optimal_cp, optimal_cp_residual, primal_error_bound, BoundInputs};
pub use data::{kfold, load_csv, synthesize, synthesize_biased, ColumnRole, FoldPlan, Schema, SynthConfig, TabularDataset};
pub use error::{Error, Result};
pub use fairness::{build_constraints, fairness_violation_metric, ConstraintSet, FairnessNotion};
pub use lagrangian::{train_fld, train_unconstrained, ModelState, Multipliers, TrainerConfig};
pub use model::{Architecture, ModelParams, StatKind};
pub use privacy::{train_pfld, PrivacyConfig, SensitivityMode};
pub use report::{EpochRecord, TrainReport};
pub use scalar::Scalar;

pub type Dataset = TabularDataset<f64>;
pub type Dataset32 = TabularDataset<f32>;
pub type Params = ModelParams<f64>;
pub type Params32 = ModelParams<f32>;
pub type State = ModelState<f64>;
pub type State32 = ModelState<f32>;
