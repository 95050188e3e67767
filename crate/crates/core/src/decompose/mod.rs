//! Joint estimation of per-ad lifts and the spread function.
//!
//! Visits are modelled as `Z_t ~ Pois(μ_t + λ_t)` with the ad component
//! `μ_t = Σ_j θ_j V_{s_j}(t)` and the baseline `λ_t` the kernel-smoothed
//! residual `z − μ`. Because both the cut-off spread and the kernel have
//! bounded support, ads further than `2h + d` minutes apart do not interact,
//! so the lift estimation factorizes into independent groups.

mod compare;
mod export;
mod fit;
mod model;

pub use compare::{aic, aic_from_average, compare_models, wilks_test, ModelComparison, ModelRow, WilksResult};
pub use export::{write_diagnostics, write_rates, write_thetas, Diagnostics};
pub use fit::{fit, fit_group_thetas, fit_spread_params, initial_thetas, DecompositionFit, FitOptions, SpreadFit, ThetaFit};
pub use model::{UNTRUNCATED_HORIZON, 
    compute_lambda, compute_mu, group_loglik, partition_groups, poisson_logpmf, total_loglik, AdGroup, GroupDesign, GroupLikelihood,
    RATE_FLOOR,
};
