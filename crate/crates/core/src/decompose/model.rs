use std::ops::RangeInclusive;

use crate::data::AdSchedule;
use crate::error::{Error, Result};
use crate::kernel::{smooth_all, smooth_range, SmootherConfig};
use crate::special::ln_factorial;
use crate::spread::SpreadSpec;

/// Minutes of spread kept for a spread without cut-off.
pub const UNTRUNCATED_HORIZON: u32 = 200;

/// Lower bound applied to the baseline rate `λ_t`.
pub const RATE_FLOOR: f64 = 1e-8;

pub fn poisson_logpmf(z: u64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::domain(format!("Poisson rate must be positive, got {rate}")));
    }
    Ok(z as f64 * rate.ln() - rate - ln_factorial(z))
}

#[inline]
fn logpmf_unchecked(z: f64, ln_fact: f64, rate: f64) -> f64 {
    z * rate.ln() - rate - ln_fact
}

/// A run of ads whose neighbours are at most `2h + d` minutes apart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdGroup {
    /// Schedule indices `first..=last`.
    pub first: usize,
    pub last: usize,
    /// 1-based minutes whose likelihood depends on the group's parameters.
    pub window_start: i64,
    pub window_end: i64,
}

impl AdGroup {
    pub fn ads(&self) -> RangeInclusive<usize> {
        self.first..=self.last
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn window(&self) -> RangeInclusive<i64> {
        self.window_start..=self.window_end
    }
}

/// Splits the schedule wherever consecutive end times differ by more than
/// `2h + d` minutes. Windows run from `⌊s_first⌋ + 1 − h` to
/// `⌊s_last⌋ + d + h`, clipped to `[1, n]`.
pub fn partition_groups(ads: &AdSchedule, bandwidth: usize, cutoff: u32, n: usize) -> Vec<AdGroup> {
    let times = ads.end_times();
    if times.is_empty() {
        return Vec::new();
    }
    let threshold = (2 * bandwidth) as f64 + cutoff as f64;
    let h = bandwidth as i64;
    let make = |first: usize, last: usize| AdGroup {
        first,
        last,
        window_start: (times[first].floor() as i64 + 1 - h).max(1),
        window_end: (times[last].floor() as i64 + cutoff as i64 + h).min(n as i64),
    };
    let mut groups = Vec::new();
    let mut start = 0;
    for j in 1..times.len() {
        if times[j] - times[j - 1] > threshold {
            groups.push(make(start, j - 1));
            start = j;
        }
    }
    groups.push(make(start, times.len() - 1));
    groups
}

/// `μ_t = Σ_j θ_j V_{s_j}(t)` for 1-based minutes in `window`.
pub fn compute_mu(thetas: &[f64], end_times: &[f64], spec: &SpreadSpec, window: RangeInclusive<i64>) -> Vec<f64> {
    window
        .map(|t| thetas.iter().zip(end_times).map(|(&theta, &s)| theta * spec.discretized(s, t)).sum())
        .collect()
}

/// Baseline rate: kernel-smoothed `z − μ`, floored at [`RATE_FLOOR`].
pub fn compute_lambda(z: &[f64], mu: &[f64], cfg: &SmootherConfig) -> Vec<f64> {
    let resid: Vec<f64> = z.iter().zip(mu).map(|(a, b)| a - b).collect();
    smooth_all(&resid, cfg).into_iter().map(|l| l.max(RATE_FLOOR)).collect()
}

/// Log-likelihood over a group window, recomputing `μ` on the window padded
/// by `h` minutes and `λ` from the padded residuals.
pub fn group_loglik(counts: &[u64], ads: &AdSchedule, group: &AdGroup, thetas: &[f64], spec: &SpreadSpec, cfg: &SmootherConfig) -> Result<f64> {
    let n = counts.len() as i64;
    let h = cfg.bandwidth as i64;
    let pad_lo = (group.window_start - h).max(1);
    let pad_hi = (group.window_end + h).min(n);
    let times: Vec<f64> = ads.ads()[group.ads()].iter().map(|a| a.end_time).collect();
    if thetas.len() != times.len() {
        return Err(Error::Invalid("one theta per ad in the group is required".into()));
    }
    if thetas.iter().any(|&t| t < 0.0) {
        return Err(Error::domain("thetas must be non-negative"));
    }
    let mu = compute_mu(thetas, &times, spec, pad_lo..=pad_hi);
    let z: Vec<f64> = (pad_lo..=pad_hi).map(|t| counts[(t - 1) as usize] as f64).collect();
    let resid: Vec<f64> = z.iter().zip(&mu).map(|(a, b)| a - b).collect();
    let from = (group.window_start - pad_lo) as usize;
    let to = (group.window_end - pad_lo) as usize + 1;
    let lambda = smooth_range(&resid, cfg, from, to);
    let mut total = 0.0;
    for (i, lam) in lambda.into_iter().enumerate() {
        let idx = from + i;
        total += poisson_logpmf(z[idx] as u64, mu[idx] + lam.max(RATE_FLOOR))?;
    }
    Ok(total)
}

/// Full-series log-likelihood with `μ` from all ads.
pub fn total_loglik(counts: &[u64], end_times: &[f64], thetas: &[f64], spec: &SpreadSpec, cfg: &SmootherConfig) -> Result<f64> {
    let n = counts.len() as i64;
    let mu = compute_mu_sparse(thetas, end_times, spec, n);
    let z: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let lambda = compute_lambda(&z, &mu, cfg);
    let mut total = 0.0;
    for t in 0..counts.len() {
        total += poisson_logpmf(counts[t], mu[t] + lambda[t])?;
    }
    Ok(total)
}

/// `μ` over the whole series using each ad's spread profile.
pub(crate) fn compute_mu_sparse(thetas: &[f64], end_times: &[f64], spec: &SpreadSpec, n: i64) -> Vec<f64> {
    let mut mu = vec![0.0; n as usize];
    for (&theta, &s) in thetas.iter().zip(end_times) {
        if theta == 0.0 {
            continue;
        }
        let profile = spec.profile(s, UNTRUNCATED_HORIZON);
        for (i, w) in profile.weights.iter().enumerate() {
            let t = profile.first + i as i64;
            if t >= 1 && t <= n {
                mu[(t - 1) as usize] += theta * w;
            }
        }
    }
    mu
}

/// Precomputed per-group data for repeated likelihood evaluation.
///
/// By linearity of the smoother, `λ = K*z − Σ_j θ_j (K*V_j)`, so each ad
/// contributes a fixed pair of sparse vectors once the spread is fixed.
#[derive(Debug, Clone)]
pub struct GroupLikelihood {
    pub group: AdGroup,
    end_times: Vec<f64>,
    cfg: SmootherConfig,
    n: i64,
    z: Vec<f64>,
    ln_fact: Vec<f64>,
    /// `K*z` on the window.
    base: Vec<f64>,
    /// Edge-truncated kernel normalizer on the window.
    denom: Vec<f64>,
    weights: Vec<f64>,
}

/// Spread-dependent part of a [`GroupLikelihood`].
#[derive(Debug, Clone)]
pub struct GroupDesign {
    ads: Vec<AdTerms>,
}

#[derive(Debug, Clone)]
struct AdTerms {
    mu_start: usize,
    mu: Vec<f64>,
    sv_start: usize,
    sv: Vec<f64>,
}

impl GroupLikelihood {
    pub fn new(counts: &[u64], z_smoothed: &[f64], ads: &AdSchedule, group: AdGroup, cfg: SmootherConfig) -> Self {
        let n = counts.len() as i64;
        let h = cfg.bandwidth as i64;
        let window: Vec<i64> = group.window().collect();
        let z: Vec<f64> = window.iter().map(|&t| counts[(t - 1) as usize] as f64).collect();
        let ln_fact = window.iter().map(|&t| ln_factorial(counts[(t - 1) as usize])).collect();
        let base = window.iter().map(|&t| z_smoothed[(t - 1) as usize]).collect();
        let weights = cfg.weights();
        let denom = window
            .iter()
            .map(|&t| {
                (-h..=h)
                    .filter(|k| (1..=n).contains(&(t + k)))
                    .map(|k| weights[(k + h) as usize])
                    .sum()
            })
            .collect();
        let end_times = ads.ads()[group.ads()].iter().map(|a| a.end_time).collect();
        Self {
            group,
            end_times,
            cfg,
            n,
            z,
            ln_fact,
            base,
            denom,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.end_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.end_times.is_empty()
    }

    pub fn end_times(&self) -> &[f64] {
        &self.end_times
    }

    pub fn window_len(&self) -> usize {
        self.z.len()
    }

    pub fn design(&self, spec: &SpreadSpec) -> GroupDesign {
        let lo = self.group.window_start;
        let hi = self.group.window_end;
        let h = self.cfg.bandwidth as i64;
        let ads = self
            .end_times
            .iter()
            .map(|&s| {
                let profile = spec.profile(s, UNTRUNCATED_HORIZON);
                let first = profile.first.max(1);
                let last = (profile.first + profile.weights.len() as i64 - 1).min(self.n);
                let v = |t: i64| -> f64 {
                    if t < first || t > last {
                        0.0
                    } else {
                        profile.weights[(t - profile.first) as usize]
                    }
                };
                let mu_lo = first.max(lo);
                let mu_hi = last.min(hi);
                let mu: Vec<f64> = (mu_lo..=mu_hi).map(v).collect();
                let sv_lo = (first - h).max(lo);
                let sv_hi = (last + h).min(hi);
                let sv: Vec<f64> = (sv_lo..=sv_hi)
                    .map(|t| {
                        let num: f64 = (-h..=h).map(|k| self.weights[(k + h) as usize] * v(t + k)).sum();
                        num / self.denom[(t - lo) as usize]
                    })
                    .collect();
                AdTerms {
                    mu_start: (mu_lo - lo).max(0) as usize,
                    mu,
                    sv_start: (sv_lo - lo).max(0) as usize,
                    sv,
                }
            })
            .collect();
        GroupDesign { ads }
    }

    /// Log-likelihood of the window for non-negative `thetas`.
    pub fn loglik(&self, design: &GroupDesign, thetas: &[f64]) -> f64 {
        let len = self.z.len();
        let mut mu = vec![0.0; len];
        let mut lam = self.base.clone();
        for (terms, &theta) in design.ads.iter().zip(thetas) {
            if theta == 0.0 {
                continue;
            }
            for (m, v) in mu[terms.mu_start..].iter_mut().zip(&terms.mu) {
                *m += theta * v;
            }
            for (l, v) in lam[terms.sv_start..].iter_mut().zip(&terms.sv) {
                *l -= theta * v;
            }
        }
        let mut total = 0.0;
        for i in 0..len {
            let rate = mu[i] + lam[i].max(RATE_FLOOR);
            total += logpmf_unchecked(self.z[i], self.ln_fact[i], rate);
        }
        total
    }

    /// Log-likelihood with negative entries of `thetas` treated as zero.
    pub fn loglik_clamped(&self, design: &GroupDesign, thetas: &[f64]) -> f64 {
        let clamped: Vec<f64> = thetas.iter().map(|t| t.max(0.0)).collect();
        self.loglik(design, &clamped)
    }
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

    fn weibull() -> SpreadSpec {
        SpreadSpec::weibull(0.32, 1.28).unwrap().with_cutoff(Some(30)).unwrap()
    }

    fn wavy_counts(n: usize) -> Vec<u64> {
        (0..n).map(|i| 20 + ((i * 7919) % 13) as u64 + (i % 50) as u64 / 5).collect()
    }

    #[test]
    fn logpmf_examples() {
        assert!((poisson_logpmf(0, 1.0).unwrap() + 1.0).abs() < 1e-15);
        let expected = 3.0 * 3f64.ln() - 3.0 - 6f64.ln();
        assert!((poisson_logpmf(3, 3.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 1.495_922_603_495_346).abs() < 1e-9);
        let tiny = poisson_logpmf(5, 1e-8).unwrap();
        assert!(tiny.is_finite() && tiny < -90.0);
        assert!(poisson_logpmf(1, 0.0).is_err());
    }

    #[test]
    fn groups_split_on_threshold() {
        let ads = AdSchedule::new(vec![ad(100.0), ad(140.0), ad(200.0)]);
        let groups = partition_groups(&ads, 8, 30, 1000);
        assert_eq!(groups.len(), 2);
        assert_eq!((groups[0].first, groups[0].last), (0, 1));
        assert_eq!((groups[1].first, groups[1].last), (2, 2));
        assert_eq!(groups[0].window(), 93..=178);
        assert_eq!(partition_groups(&AdSchedule::new(vec![ad(5.5)]), 8, 30, 20).len(), 1);
        assert!(partition_groups(&AdSchedule::default(), 8, 30, 20).is_empty());
        // a gap of exactly 2h + d stays in one group
        let ads = AdSchedule::new(vec![ad(10.0), ad(56.0)]);
        assert_eq!(partition_groups(&ads, 8, 30, 1000).len(), 1);
    }

    #[test]
    fn windows_are_clipped_and_disjoint() {
        let ads = AdSchedule::new(vec![ad(0.5), ad(47.2), ad(93.3), ad(480.0), ad(499.0)]);
        let groups = partition_groups(&ads, 8, 30, 500);
        assert_eq!(groups[0].window_start, 1);
        assert_eq!(groups.last().unwrap().window_end, 500);
        for w in groups.windows(2) {
            assert!(w[0].window_end < w[1].window_start);
        }
    }

    #[test]
    fn mu_examples() {
        let spec = weibull();
        assert!(compute_mu(&[0.0], &[10.0], &spec, 1..=60).iter().all(|&m| m == 0.0));
        let mu = compute_mu(&[100.0], &[10.3], &spec, 1..=60);
        assert!((mu.iter().sum::<f64>() - 100.0).abs() < 1e-8);
        let pair = compute_mu(&[50.0, 50.0], &[10.0, 11.0], &spec, 1..=60);
        let a = compute_mu(&[50.0], &[10.0], &spec, 1..=60);
        let b = compute_mu(&[50.0], &[11.0], &spec, 1..=60);
        for i in 0..60 {
            assert!((pair[i] - a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_examples() {
        let cfg = SmootherConfig::default();
        let z: Vec<f64> = wavy_counts(100).into_iter().map(|c| c as f64).collect();
        let lam = compute_lambda(&z, &vec![0.0; 100], &cfg);
        assert_eq!(lam, smooth_all(&z, &cfg));
        let lam = compute_lambda(&[0.0; 30], &[0.0; 30], &cfg);
        assert!(lam.iter().all(|&l| l == RATE_FLOOR));

        // constant 10 with 10 units of μ at minute 50
        let z = vec![10.0; 200];
        let mut mu = vec![0.0; 200];
        mu[50] = 10.0;
        let cfg = SmootherConfig::new(KernelId::Triangular, 20).unwrap();
        let lam = compute_lambda(&z, &mu, &cfg);
        // direct oracle at the spike: 10 − 10·K(0)/ΣK with ΣK = h + 1
        assert!((lam[50] - (10.0 - 10.0 / 21.0)).abs() < 1e-12);
        assert!(lam[45] < 10.0);
        assert!((lam[150] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn fast_path_matches_direct() {
        let counts = wavy_counts(600);
        let ads = AdSchedule::new(vec![ad(100.4), ad(120.0), ad(131.7), ad(400.2)]);
        let cfg = SmootherConfig::default();
        let spec = SpreadSpec::gengamma(0.4, 1.2, 1.3).unwrap().with_cutoff(Some(30)).unwrap();
        let z: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let smoothed = smooth_all(&z, &cfg);
        for group in partition_groups(&ads, 8, 30, 600) {
            let gl = GroupLikelihood::new(&counts, &smoothed, &ads, group.clone(), cfg);
            let design = gl.design(&spec);
            let thetas: Vec<f64> = (0..gl.len()).map(|i| 40.0 + 90.0 * i as f64).collect();
            let fast = gl.loglik(&design, &thetas);
            let direct = group_loglik(&counts, &ads, &group, &thetas, &spec, &cfg).unwrap();
            assert!((fast - direct).abs() < 1e-9, "{fast} vs {direct}");
        }
    }

    #[test]
    fn zero_thetas_give_baseline_likelihood() {
        let counts = wavy_counts(300);
        let ads = AdSchedule::new(vec![ad(100.0), ad(110.0)]);
        let cfg = SmootherConfig::default();
        let group = partition_groups(&ads, 8, 30, 300).remove(0);
        let ll = group_loglik(&counts, &ads, &group, &[0.0, 0.0], &weibull(), &cfg).unwrap();
        let z: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let base = smooth_all(&z, &cfg);
        let expected: f64 = group.window().map(|t| poisson_logpmf(counts[(t - 1) as usize], base[(t - 1) as usize]).unwrap()).sum();
        assert!((ll - expected).abs() < 1e-9);
    }

    #[test]
    fn theta_increment_moves_unit_mass() {
        let spec = weibull();
        let a = compute_mu(&[120.0, 30.0], &[20.0, 25.5], &spec, 1..=100);
        let b = compute_mu(&[120.0, 37.5], &[20.0, 25.5], &spec, 1..=100);
        let delta: f64 = b.iter().zip(&a).map(|(x, y)| x - y).sum();
        assert!((delta - 7.5).abs() < 1e-10);
    }

    #[test]
    fn likelihood_factorizes_over_groups() {
        let counts = wavy_counts(1500);
        let ads = AdSchedule::new(vec![ad(200.5), ad(230.0), ad(700.25), ad(1200.0)]);
        let cfg = SmootherConfig::default();
        let spec = weibull();
        let thetas = [80.0, 10.0, 150.0, 60.0];
        let groups = partition_groups(&ads, cfg.bandwidth, 30, 1500);
        assert_eq!(groups.len(), 3);
        let total = total_loglik(&counts, &ads.end_times(), &thetas, &spec, &cfg).unwrap();

        let z: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let base = smooth_all(&z, &cfg);
        let mut covered = vec![false; 1500];
        let mut sum = 0.0;
        for g in &groups {
            let th = &thetas[g.ads()];
            sum += group_loglik(&counts, &ads, g, th, &spec, &cfg).unwrap();
            for t in g.window() {
                covered[(t - 1) as usize] = true;
            }
        }
        for t in 0..1500 {
            if !covered[t] {
                sum += poisson_logpmf(counts[t], base[t].max(RATE_FLOOR)).unwrap();
            }
        }
        assert!((total - sum).abs() < 1e-9, "{total} vs {sum}");
    }
}
