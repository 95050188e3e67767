//! Regression forest relating fitted lifts to ad characteristics, with grid
//! tuning, importance measures, and partial dependence.

mod dataset;
mod inspect;
mod model;
mod tree;
mod tune;

pub use dataset::{ad_dataset, ad_features, build_features, AdFeatureRow, Dataset, Feature, FeatureKind, DAY_LEVELS, MAX_LEVELS, MONTH_LEVELS};
pub use inspect::{analyze_final, default_grid, partial_dependence, variable_importance, write_error_table, write_importance, write_pdp, FeatureImportance, FinalAnalysis, PdCurve, PdPoint};
pub use model::{full_grid, train_forest, ForestModel, ForestSetting, MIN_NODE_GRID, MTRY_GRID, SAMPLE_FRAC_GRID};
pub use tree::{Node, Rule, Tree};
pub use tune::{metrics, tune, Metrics, SettingScore, TuningReport};
