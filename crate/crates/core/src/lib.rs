//! Propensity-score nearest-neighbor matching for binary actions in
//! observational data.
//!
//! The pipeline runs [`propensity::encode_design`] and
//! [`propensity::fit_logistic`] to score every unit,
//! [`matching::nearest_neighbor_match`] to pair units across arms,
//! [`balance::balance_table`] to check covariate balance, and
//! [`effects::estimate`] for ATE, ATT or ATNT with an analytic and a
//! bootstrap standard error. [`synthlab`] generates data with known
//! counterfactuals for validation.

pub mod balance;
pub mod dataset;
pub mod effects;
pub mod error;
pub mod export;
pub mod matching;
pub mod propensity;
pub mod synthlab;

pub use balance::{balance_table, ps_histogram, BalanceTable, HistogramSeries, Smd};
pub use dataset::{
    descriptive_summary, load_table, validate_schema, ObservationTable, RawTable, Schema,
    VariableKind, VariableSpec,
};
pub use effects::{estimate, BootstrapConfig, EffectEstimate};
pub use error::{Error, Result};
pub use export::Format;
pub use matching::{nearest_neighbor_match, Estimand, MatchResult, MatchSpec};
pub use propensity::{encode_design, fit_logistic, DesignMatrix, PropensityModel};
pub use synthlab::{generate, scenario_suite, true_estimands, Scenario, Truth};
