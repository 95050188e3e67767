//! Immediate-response lift estimation for TV advertising.
//!
//! The pipeline has three stages:
//!
//! 1. [`kernel`]: a kernel-smoothed baseline of minute-level website visits, with
//!    kernel and bandwidth chosen by repeated 2-fold cross-validation.
//! 2. [`decompose`]: a Poisson two-component model in which each ad contributes
//!    `θ_j · V_{s_j}(t)` visits through a generalized-gamma spread function
//!    ([`spread`]) on top of the smoothed baseline; fitted by alternating
//!    Nelder–Mead maximum likelihood ([`optim`]).
//! 3. [`forest`]: a regression random forest that explains the fitted lifts from
//!    ad characteristics, with permutation/impurity importance and partial
//!    dependence.
//!
//! [`simulate`] generates ground-truth data for every estimator, and
//! [`pipeline`] wires the stages together behind the `adlift` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod decompose;
pub mod error;
pub mod forest;
pub mod kernel;
pub mod optim;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod simulate;
pub mod special;
pub mod spread;

pub use error::{Error, Result};
