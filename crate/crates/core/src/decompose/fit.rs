use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{compute_lambda, compute_mu_sparse, partition_groups, poisson_logpmf, GroupDesign, GroupLikelihood, RATE_FLOOR};
use super::compare::aic;
use crate::data::{affected_minutes, AdSchedule, VisitSeries};
use crate::error::{Error, Result};
use crate::kernel::{smooth_all, SmootherConfig};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::spread::{SpreadFamily, SpreadSpec, DEFAULT_CUTOFF};

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub cutoff: u32,
    pub max_outer: usize,
    /// Stop when the relative log-likelihood gain of an outer iteration
    /// falls below this.
    pub rel_tol: f64,
    /// Fitted lifts below this are set to exactly zero.
    pub snap_tol: f64,
    pub nelder_mead: NelderMeadOptions,
    pub init_spec: Option<SpreadSpec>,
    pub init_thetas: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
            max_outer: 50,
            rel_tol: 1e-8,
            snap_tol: 1e-6,
            nelder_mead: NelderMeadOptions::default(),
            init_spec: None,
            init_thetas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFit {
    pub thetas: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpreadFit {
    pub spec: SpreadSpec,
    /// Sum of the group log-likelihoods at `spec`.
    pub loglik: f64,
    pub converged: bool,
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionFit {
    pub spec: SpreadSpec,
    pub smoother: SmootherConfig,
    /// Expected additional visits per ad, in schedule order.
    pub thetas: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub loglik: f64,
    pub avg_loglik: f64,
    pub n: usize,
    pub m: usize,
    pub free_params: usize,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Total log-likelihood at the start and after every half-step.
    pub history: Vec<f64>,
    pub groups: usize,
    pub largest_group: usize,
    /// Inner optimizations that hit their evaluation budget.
    pub optimizer_failures: usize,
}

impl DecompositionFit {
    pub fn family(&self) -> SpreadFamily {
        self.spec.family
    }
}

/// Windowed positive excess over the smoothed series, shared equally among
/// ads whose post-ad windows overlap.
pub fn initial_thetas(counts: &[u64], smoothed: &[f64], ads: &AdSchedule, cutoff: u32) -> Vec<f64> {
    let n = counts.len() as i64;
    let mut cover = vec![0u32; counts.len()];
    let clipped = |s: f64| {
        let r = affected_minutes(s, cutoff as f64);
        (*r.start()).max(1)..=(*r.end()).min(n)
    };
    for ad in ads.ads() {
        for t in clipped(ad.end_time) {
            cover[(t - 1) as usize] += 1;
        }
    }
    ads.ads()
        .iter()
        .map(|ad| {
            clipped(ad.end_time)
                .map(|t| {
                    let i = (t - 1) as usize;
                    (counts[i] as f64 - smoothed[i]).max(0.0) / cover[i] as f64
                })
                .sum()
        })
        .collect()
}

/// Maximizes one group's likelihood over its lifts with the spread fixed.
/// Negative trial values are clamped to zero inside the objective; the
/// result is never worse than `init`.
pub fn fit_group_thetas(gl: &GroupLikelihood, design: &GroupDesign, init: &[f64], nm: &NelderMeadOptions, snap_tol: f64) -> ThetaFit {
    let x0: Vec<f64> = init.iter().map(|t| t.max(0.0)).collect();
    let start_ll = gl.loglik(design, &x0);
    let steps: Vec<f64> = x0.iter().map(|t| (0.5 * t).max(5.0)).collect();
    let res = nelder_mead(|x| -gl.loglik_clamped(design, x), &x0, &steps, nm);
    let thetas: Vec<f64> = res
        .x
        .iter()
        .map(|&t| if t < snap_tol { 0.0 } else { t })
        .collect();
    let ll = gl.loglik(design, &thetas);
    if ll >= start_ll {
        ThetaFit {
            thetas,
            loglik: ll,
            converged: res.converged,
            evals: res.evals,
        }
    } else {
        ThetaFit {
            thetas: x0,
            loglik: start_ll,
            converged: res.converged,
            evals: res.evals,
        }
    }
}

const LOG_PARAM_BOUND: f64 = 12.0;

fn groups_loglik(groups: &[GroupLikelihood], thetas: &[Vec<f64>], spec: &SpreadSpec) -> f64 {
    let parts: Vec<f64> = groups
        .par_iter()
        .zip(thetas.par_iter())
        .map(|(g, th)| g.loglik(&g.design(spec), th))
        .collect();
    parts.iter().sum()
}

/// Maximizes the summed group likelihood over the free spread parameters of
/// `family` (optimized on the log scale) with all lifts fixed.
pub fn fit_spread_params(groups: &[GroupLikelihood], thetas: &[Vec<f64>], family: SpreadFamily, init: &SpreadSpec, nm: &NelderMeadOptions) -> SpreadFit {
    let base = init.cast(family);
    let x0: Vec<f64> = base.free_values().iter().map(|v| v.ln()).collect();
    let start_ll = groups_loglik(groups, thetas, &base);
    let objective = |x: &[f64]| {
        if x.iter().any(|v| v.abs() > LOG_PARAM_BOUND) {
            return f64::INFINITY;
        }
        let vals: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        -groups_loglik(groups, thetas, &base.with_free_values(&vals))
    };
    let steps = vec![0.2; x0.len()];
    let res = nelder_mead(objective, &x0, &steps, nm);
    let vals: Vec<f64> = res.x.iter().map(|v| v.exp()).collect();
    let spec = base.with_free_values(&vals);
    let ll = -res.f;
    if ll >= start_ll {
        SpreadFit {
            spec,
            loglik: ll,
            converged: res.converged,
            evals: res.evals,
        }
    } else {
        SpreadFit {
            spec: base,
            loglik: start_ll,
            converged: res.converged,
            evals: res.evals,
        }
    }
}

/// Alternating maximum-likelihood fit of lifts and spread parameters.
pub fn fit(series: &VisitSeries, ads: &AdSchedule, cfg: SmootherConfig, family: SpreadFamily, options: &FitOptions) -> Result<DecompositionFit> {
    if options.cutoff == 0 {
        return Err(Error::Invalid("cut-off must be at least one minute".into()));
    }
    let counts = series.counts();
    let n = counts.len();
    let z = series.values();
    let smoothed = smooth_all(&z, &cfg);
    let m = ads.len();

    let spec0 = options
        .init_spec
        .unwrap_or(SpreadSpec {
            family: SpreadFamily::GenGamma,
            alpha: 0.2,
            phi: 1.0,
            psi: 1.0,
            cutoff: None,
        })
        .cast(family)
        .with_cutoff(Some(options.cutoff))?;

    let init_thetas = match &options.init_thetas {
        Some(t) if t.len() != m => {
            return Err(Error::Invalid(format!("{} initial lifts for {m} ads", t.len())));
        }
        Some(t) => t.clone(),
        None => initial_thetas(counts, &smoothed, ads, options.cutoff),
    };

    let groups = partition_groups(ads, cfg.bandwidth, options.cutoff, n);
    let largest_group = groups.iter().map(|g| g.len()).max().unwrap_or(0);
    let mut covered = vec![false; n];
    for g in &groups {
        for t in g.window() {
            covered[(t - 1) as usize] = true;
        }
    }
    let mut remainder = 0.0;
    for t in (0..n).filter(|&t| !covered[t]) {
        remainder += poisson_logpmf(counts[t], smoothed[t].max(RATE_FLOOR))?;
    }

    let gls: Vec<GroupLikelihood> = groups
        .iter()
        .map(|g| GroupLikelihood::new(counts, &smoothed, ads, g.clone(), cfg))
        .collect();
    let mut thetas: Vec<Vec<f64>> = groups.iter().map(|g| init_thetas[g.ads()].iter().map(|t| t.max(0.0)).collect()).collect();
    let mut spec = spec0;
    let mut ll = remainder + groups_loglik(&gls, &thetas, &spec);
    let mut history = vec![ll];
    let mut iterations = 0;
    let mut converged = m == 0;
    let mut failures = 0;

    if m > 0 {
        for iter in 1..=options.max_outer {
            iterations = iter;
            let prev = ll;

            let fits: Vec<ThetaFit> = gls
                .par_iter()
                .zip(thetas.par_iter())
                .map(|(g, th)| {
                    let design = g.design(&spec);
                    fit_group_thetas(g, &design, th, &options.nelder_mead, options.snap_tol)
                })
                .collect();
            failures += fits.iter().filter(|f| !f.converged).count();
            thetas = fits.iter().map(|f| f.thetas.clone()).collect();
            ll = remainder + fits.iter().map(|f| f.loglik).sum::<f64>();
            history.push(ll);

            let sf = fit_spread_params(&gls, &thetas, family, &spec, &options.nelder_mead);
            if !sf.converged {
                failures += 1;
            }
            spec = sf.spec;
            ll = remainder + sf.loglik;
            history.push(ll);

            if !ll.is_finite() {
                return Err(Error::Numerical(format!("log-likelihood became {ll} at outer iteration {iter}")));
            }
            if ll - prev <= options.rel_tol * prev.abs() {
                converged = true;
                break;
            }
        }
    }

    let thetas: Vec<f64> = thetas.into_iter().flatten().collect();
    let mu = compute_mu_sparse(&thetas, &ads.end_times(), &spec, n as i64);
    let lambda = compute_lambda(&z, &mu, &cfg);
    let mut loglik = 0.0;
    for t in 0..n {
        loglik += poisson_logpmf(counts[t], mu[t] + lambda[t])?;
    }
    let free_params = family.free_params() + m;
    Ok(DecompositionFit {
        spec,
        smoother: cfg,
        thetas,
        mu,
        lambda,
        loglik,
        avg_loglik: loglik / n as f64,
        n,
        m,
        free_params,
        aic: aic(loglik, free_params),
        iterations,
        converged,
        history,
        groups: groups.len(),
        largest_group,
        optimizer_failures: failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AdRecord, Channel, Motive, Position};
    use crate::kernel::KernelId;

    fn ad(s: f64) -> AdRecord {
        AdRecord {
            end_time: s,
            motive: Motive::from_index(0).unwrap(),
            position: Position::from_index(0).unwrap(),
            channel: Channel::from_index(0).unwrap(),
        }
    }

    fn series(counts: Vec<u64>) -> VisitSeries {
        let start = chrono::DateTime::parse_from_rfc3339("2019-03-01T00:00:00+01:00").unwrap();
        VisitSeries::new(start, counts).unwrap()
    }

    #[test]
    fn empty_schedule_reproduces_baseline() {
        let counts: Vec<u64> = (0..500).map(|i| 30 + (i % 17) as u64).collect();
        let s = series(counts.clone());
        let cfg = SmootherConfig::new(KernelId::Epanechnikov, 6).unwrap();
        let fit = fit(&s, &AdSchedule::default(), cfg, SpreadFamily::Weibull, &FitOptions::default()).unwrap();
        assert_eq!(fit.m, 0);
        assert!(fit.thetas.is_empty());
        assert!(fit.mu.iter().all(|&m| m == 0.0));
        assert_eq!(fit.lambda, smooth_all(&s.values(), &cfg));
        assert_eq!(fit.free_params, 2);
        assert!((fit.aic - (4.0 - 2.0 * fit.loglik)).abs() < 1e-9);
    }

    #[test]
    fn initial_lifts_share_overlapping_excess() {
        let mut counts = vec![10u64; 200];
        counts[50] = 40;
        let smoothed = vec![10.0; 200];
        let ads = AdSchedule::new(vec![ad(45.0), ad(48.0)]);
        let init = initial_thetas(&counts, &smoothed, &ads, 30);
        assert_eq!(init, vec![15.0, 15.0]);
    }

    #[test]
    fn fit_is_monotone_and_consistent() {
        // crude deterministic data: flat 20 plus an injected bump after each ad
        let mut counts = vec![20u64; 3000];
        let spec = SpreadSpec::weibull(0.32, 1.28).unwrap().with_cutoff(Some(30)).unwrap();
        let times = [300.0, 330.5, 1200.2, 2100.0];
        for (j, &s) in times.iter().enumerate() {
            let p = spec.profile(s, 0);
            for (i, w) in p.weights.iter().enumerate() {
                counts[(p.first + i as i64 - 1) as usize] += (w * 200.0 * (j as f64 + 1.0)).round() as u64;
            }
        }
        let ads = AdSchedule::new(times.iter().map(|&s| ad(s)).collect());
        let fit = fit(&series(counts), &ads, SmootherConfig::default(), SpreadFamily::Weibull, &FitOptions::default()).unwrap();
        for w in fit.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{:?}", fit.history);
        }
        assert!((fit.loglik - fit.history.last().unwrap()).abs() < 1e-6 * fit.loglik.abs());
        let mass: f64 = fit.mu.iter().sum();
        assert!((mass - fit.thetas.iter().sum::<f64>()).abs() < 1e-6);
        assert!(fit.thetas[3] > fit.thetas[0]);
        assert_eq!(fit.groups, 3);
        assert_eq!(fit.free_params, 2 + 4);
    }

    #[test]
    fn wrong_init_length_is_rejected() {
        let s = series(vec![5; 100]);
        let ads = AdSchedule::new(vec![ad(20.0)]);
        let opts = FitOptions {
            init_thetas: Some(vec![1.0, 2.0]),
            ..Default::default()
        };
        assert!(fit(&s, &ads, SmootherConfig::default(), SpreadFamily::Exponential, &opts).is_err());
    }
}
