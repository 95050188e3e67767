//! Kernel smoothing of minute counts and kernel/bandwidth selection by
//! repeated 2-fold cross-validation.
//!
//! The smoothed rate at minute `t` is the `K(k / (h + 1))`-weighted average of
//! the values at `t + k`, `k = −h..=h`. Near the series edges, and wherever a
//! point is unavailable, the window is truncated and the weights renormalized.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::VisitSeries;
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::special::ln_factorial;

/// Relative difference below which two mean scores count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelId {
    Triangular,
    Epanechnikov,
    Quartic,
    Triweight,
    Tricube,
}

impl KernelId {
    pub const ALL: [KernelId; 5] = [
        KernelId::Triangular,
        KernelId::Epanechnikov,
        KernelId::Quartic,
        KernelId::Triweight,
        KernelId::Tricube,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelId::Triangular => "triangular",
            KernelId::Epanechnikov => "epanechnikov",
            KernelId::Quartic => "quartic",
            KernelId::Triweight => "triweight",
            KernelId::Tricube => "tricube",
        }
    }

    /// Kernel value without the support check; `|u| ≤ 1` is assumed.
    fn eval(self, u: f64) -> f64 {
        let a = u.abs();
        let v = match self {
            KernelId::Triangular => 1.0 - a,
            KernelId::Epanechnikov => 0.75 * (1.0 - u * u),
            KernelId::Quartic => 15.0 / 16.0 * (1.0 - u * u).powi(2),
            KernelId::Triweight => 35.0 / 32.0 * (1.0 - u * u).powi(3),
            KernelId::Tricube => 70.0 / 81.0 * (1.0 - a * a * a).powi(3),
        };
        v.max(0.0)
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelId::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Invalid(format!("unknown kernel {s:?}")))
    }
}

pub fn kernel_value(kernel: KernelId, u: f64) -> Result<f64> {
    if !(u.abs() <= 1.0) {
        return Err(Error::domain(format!("kernel argument {u} outside [-1, 1]")));
    }
    Ok(kernel.eval(u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmootherConfig {
    pub kernel: KernelId,
    pub bandwidth: usize,
}

impl SmootherConfig {
    pub fn new(kernel: KernelId, bandwidth: usize) -> Result<Self> {
        if bandwidth == 0 {
            return Err(Error::Invalid("bandwidth must be at least 1 minute".into()));
        }
        Ok(Self { kernel, bandwidth })
    }

    /// `K(k / (h + 1))` for `k = −h..=h`.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.bandwidth as i64;
        let scale = (h + 1) as f64;
        (-h..=h).map(|k| self.kernel.eval(k as f64 / scale)).collect()
    }
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            kernel: KernelId::Triangular,
            bandwidth: 8,
        }
    }
}

/// Weighted average at index `t` over the in-range points with nonzero
/// availability weight. `masked[i] = values[i] * avail[i]`.
#[inline]
fn window_average(masked: &[f64], avail: &[f64], weights: &[f64], t: usize) -> Option<f64> {
    let h = weights.len() / 2;
    let n = masked.len();
    let lo = t.saturating_sub(h);
    let hi = (t + h).min(n - 1);
    let offset = h + lo - t;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, w) in (lo..=hi).zip(&weights[offset..]) {
        num += w * masked[i];
        den += w * avail[i];
    }
    (den > 0.0).then(|| num / den)
}

/// Availability-aware kernel smoother. Returns `None` at minutes whose window
/// holds no available point.
pub fn smooth(values: &[f64], available: &[bool], cfg: &SmootherConfig) -> Result<Vec<Option<f64>>> {
    if values.len() != available.len() {
        return Err(Error::Invalid(format!(
            "values ({}) and availability ({}) differ in length",
            values.len(),
            available.len()
        )));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let avail: Vec<f64> = available.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let masked: Vec<f64> = values.iter().zip(&avail).map(|(v, a)| v * a).collect();
    let weights = cfg.weights();
    Ok((0..values.len()).map(|t| window_average(&masked, &avail, &weights, t)).collect())
}

/// Smoother with every point available; the window always contains `t`.
pub fn smooth_all(values: &[f64], cfg: &SmootherConfig) -> Vec<f64> {
    smooth_range(values, cfg, 0, values.len())
}

/// Smoothed values at indices `from..to` of `values`, with the window
/// truncated only at the ends of `values`.
pub fn smooth_range(values: &[f64], cfg: &SmootherConfig, from: usize, to: usize) -> Vec<f64> {
    let weights = cfg.weights();
    let h = cfg.bandwidth;
    let n = values.len();
    (from..to)
        .map(|t| {
            let lo = t.saturating_sub(h);
            let hi = (t + h).min(n - 1);
            let offset = h + lo - t;
            let mut num = 0.0;
            let mut den = 0.0;
            for (v, w) in values[lo..=hi].iter().zip(&weights[offset..]) {
                num += w * v;
                den += w;
            }
            num / den
        })
        .collect()
}

/// Average Poisson log-likelihood of `observed` under `rates` over `subset`.
pub fn poisson_avg_loglik(observed: &[u64], rates: &[f64], subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Invalid("empty evaluation subset".into()));
    }
    let mut total = 0.0;
    for &t in subset {
        let rate = rates[t];
        if !(rate > 0.0) {
            return Err(Error::domain(format!("non-positive Poisson rate {rate} at index {t}")));
        }
        let y = observed[t];
        total += y as f64 * rate.ln() - rate - ln_factorial(y);
    }
    Ok(total / subset.len() as f64)
}

/// One grid cell of the cross-validation report. Score fields are `None`
/// when no repeat produced a defined validation rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub config: SmootherConfig,
    pub mean_loglik: Option<f64>,
    /// Standard error of `mean_loglik` across repeats.
    pub se_loglik: Option<f64>,
    pub mean_mse: Option<f64>,
    pub valid_repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub cells: Vec<CvCell>,
    pub repeats: usize,
    pub best: SmootherConfig,
}

impl CvReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["kernel", "h", "mean_loglik", "mean_mse"])?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        for c in &self.cells {
            w.write_record([
                c.config.kernel.name().to_string(),
                c.config.bandwidth.to_string(),
                fmt(c.mean_loglik),
                fmt(c.mean_mse),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Cells for one kernel, in grid order.
    pub fn curve(&self, kernel: KernelId) -> Vec<&CvCell> {
        self.cells.iter().filter(|c| c.config.kernel == kernel).collect()
    }
}

/// Every listed kernel crossed with every bandwidth in `bandwidths`.
pub fn bandwidth_grid(kernels: &[KernelId], bandwidths: impl IntoIterator<Item = usize> + Clone) -> Vec<SmootherConfig> {
    kernels
        .iter()
        .flat_map(|&kernel| {
            bandwidths
                .clone()
                .into_iter()
                .map(move |bandwidth| SmootherConfig { kernel, bandwidth })
        })
        .collect()
}

/// Score and MSE of every grid cell for one random split.
fn score_split(counts: &[u64], values: &[f64], training: &[bool], validation: &[usize], grid: &[SmootherConfig]) -> Vec<Option<(f64, f64)>> {
    let avail: Vec<f64> = training.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let masked: Vec<f64> = values.iter().zip(&avail).map(|(v, a)| v * a).collect();
    grid.iter()
        .map(|cfg| {
            let weights = cfg.weights();
            let mut ll = 0.0;
            let mut se = 0.0;
            let mut used = 0usize;
            for &t in validation {
                match window_average(&masked, &avail, &weights, t) {
                    Some(rate) if rate > 0.0 => {
                        let y = counts[t];
                        ll += y as f64 * rate.ln() - rate - ln_factorial(y);
                        se += (y as f64 - rate).powi(2);
                        used += 1;
                    }
                    _ => {}
                }
            }
            (used > 0).then(|| (ll / used as f64, se / used as f64))
        })
        .collect()
}

/// Repeated 2-fold cross-validation over `grid`.
///
/// Each repeat splits the non-excluded minutes uniformly at random into equal
/// training and validation halves; validation rates are smoothed from the
/// training minutes only. The best cell maximizes the mean validation
/// log-likelihood; ties (within a relative 1e-12) go to the smaller bandwidth, then to the
/// earlier grid entry.
pub fn select_bandwidth(series: &VisitSeries, mask: &[bool], grid: &[SmootherConfig], repeats: usize, seed: u64) -> Result<CvReport> {
    if repeats == 0 {
        return Err(Error::Invalid("cross-validation needs at least one repeat".into()));
    }
    if grid.is_empty() {
        return Err(Error::Invalid("empty kernel/bandwidth grid".into()));
    }
    if mask.len() != series.len() {
        return Err(Error::Invalid("exclusion mask length differs from series length".into()));
    }
    let counts = series.counts();
    let values = series.values();
    let eligible: Vec<usize> = (0..series.len()).filter(|&t| !mask[t]).collect();
    if eligible.len() < 2 {
        return Err(Error::Invalid("fewer than two minutes remain after exclusion".into()));
    }

    let per_repeat: Vec<Vec<Option<(f64, f64)>>> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(seed, r as u64);
            let mut shuffled = eligible.clone();
            shuffled.shuffle(&mut rng);
            let (train, valid) = shuffled.split_at(shuffled.len() / 2);
            let mut training = vec![false; series.len()];
            for &t in train {
                training[t] = true;
            }
            let mut validation = valid.to_vec();
            validation.sort_unstable();
            score_split(counts, &values, &training, &validation, grid)
        })
        .collect();

    let cells: Vec<CvCell> = grid
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let scores: Vec<(f64, f64)> = per_repeat.iter().filter_map(|r| r[i]).collect();
            let k = scores.len();
            if k == 0 {
                return CvCell {
                    config: *cfg,
                    mean_loglik: None,
                    se_loglik: None,
                    mean_mse: None,
                    valid_repeats: 0,
                };
            }
            let mean = scores.iter().map(|s| s.0).sum::<f64>() / k as f64;
            let mse = scores.iter().map(|s| s.1).sum::<f64>() / k as f64;
            let se = if k > 1 {
                let var = scores.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
                (var / k as f64).sqrt()
            } else {
                0.0
            };
            CvCell {
                config: *cfg,
                mean_loglik: Some(mean),
                se_loglik: Some(se),
                mean_mse: Some(mse),
                valid_repeats: k,
            }
        })
        .collect();

    let best = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.mean_loglik.map(|s| (i, s, c.config.bandwidth)))
        .fold(None::<(usize, f64, usize)>, |acc, cand| match acc {
            None => Some(cand),
            Some(cur) => {
                let tied = (cand.1 - cur.1).abs() <= TIE_TOL * cur.1.abs();
                let better = if tied { cand.2 < cur.2 } else { cand.1 > cur.1 };
                Some(if better { cand } else { cur })
            }
        })
        .map(|(i, _, _)| cells[i].config)
        .ok_or_else(|| Error::Numerical("no grid cell produced a defined validation score".into()))?;

    Ok(CvReport { cells, repeats, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(kernel: KernelId, h: usize) -> SmootherConfig {
        SmootherConfig::new(kernel, h).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_value(KernelId::Triangular, 0.0).unwrap(), 1.0);
        assert_eq!(kernel_value(KernelId::Epanechnikov, 0.0).unwrap(), 0.75);
        assert_eq!(kernel_value(KernelId::Tricube, 1.0).unwrap(), 0.0);
        for k in KernelId::ALL {
            assert_eq!(kernel_value(k, 1.0).unwrap(), 0.0);
            assert_eq!(kernel_value(k, -1.0).unwrap(), 0.0);
        }
        assert!(matches!(kernel_value(KernelId::Quartic, 1.01), Err(Error::Domain(_))));
        assert!(kernel_value(KernelId::Quartic, f64::NAN).is_err());
    }

    #[test]
    fn kernels_integrate_to_one() {
        let m = 200_000;
        for k in KernelId::ALL {
            let step = 2.0 / m as f64;
            let integral: f64 = (0..m).map(|i| k.eval(-1.0 + (i as f64 + 0.5) * step) * step).sum();
            assert!((integral - 1.0).abs() < 1e-6, "{k}: {integral}");
        }
    }

    #[test]
    fn constant_sequence_is_preserved() {
        let v = vec![4.5; 30];
        let out = smooth(&v, &[true; 30], &cfg(KernelId::Quartic, 5)).unwrap();
        assert!(out.iter().all(|x| (x.unwrap() - 4.5).abs() < 1e-12));
    }

    #[test]
    fn interior_triangular_weights() {
        let v = [0.0, 2.0, 0.0];
        let out = smooth(&v, &[true; 3], &cfg(KernelId::Triangular, 1)).unwrap();
        assert!((out[1].unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn left_edge_renormalizes() {
        let v = [2.0, 4.0, 7.0, 1.0];
        let out = smooth(&v, &[true; 4], &cfg(KernelId::Triangular, 1)).unwrap();
        assert!((out[0].unwrap() - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(smooth_all(&v, &cfg(KernelId::Triangular, 1))[0], out[0].unwrap());
    }

    #[test]
    fn empty_window_is_missing() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let avail = [true, false, false, false, false, true];
        let out = smooth(&v, &avail, &cfg(KernelId::Epanechnikov, 1)).unwrap();
        assert!(out[2].is_none() && out[3].is_none());
        assert_eq!(out[1], Some(1.0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(smooth(&[1.0, 2.0], &[true], &SmootherConfig::default()).is_err());
    }

    #[test]
    fn avg_loglik_examples() {
        assert!((poisson_avg_loglik(&[0], &[1.0], &[0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((poisson_avg_loglik(&[1], &[1.0], &[0]).unwrap() + 1.0).abs() < 1e-15);
        let expected = 2f64.ln() - 2.0;
        assert!((poisson_avg_loglik(&[2], &[2.0], &[0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 1.306_852_819_440_054_7).abs() < 1e-12);
        assert!(matches!(poisson_avg_loglik(&[2], &[0.0], &[0]), Err(Error::Domain(_))));
        assert!(poisson_avg_loglik(&[2], &[1.0], &[]).is_err());
    }

    fn toy_series(counts: Vec<u64>) -> VisitSeries {
        let start = chrono::DateTime::parse_from_rfc3339("2019-01-01T00:00:00+00:00").unwrap();
        VisitSeries::new(start, counts).unwrap()
    }

    #[test]
    fn singleton_grid_is_selected() {
        let s = toy_series((0..500).map(|i| 10 + (i % 7) as u64).collect());
        let grid = [cfg(KernelId::Triangular, 8)];
        let report = select_bandwidth(&s, &vec![false; 500], &grid, 3, 1).unwrap();
        assert_eq!(report.best, grid[0]);
        assert_eq!(report.cells.len(), 1);
    }

    #[test]
    fn duplicate_cells_tie_break_to_lower_h_then_listing() {
        let s = toy_series((0..400).map(|i| 20 + (i % 5) as u64).collect());
        let grid = [
            cfg(KernelId::Epanechnikov, 4),
            cfg(KernelId::Triangular, 4),
            cfg(KernelId::Triangular, 4),
        ];
        let report = select_bandwidth(&s, &vec![false; 400], &grid, 2, 9).unwrap();
        // Epanechnikov and triangular differ, so compare only duplicates
        assert_eq!(report.cells[1].mean_loglik, report.cells[2].mean_loglik);
        let dup = [cfg(KernelId::Tricube, 6), cfg(KernelId::Tricube, 6)];
        let report = select_bandwidth(&s, &vec![false; 400], &dup, 2, 9).unwrap();
        assert_eq!(report.best, dup[0]);
        // a constant series scores every bandwidth equally; lower h wins
        let flat = toy_series(vec![5; 300]);
        let grid = [cfg(KernelId::Quartic, 9), cfg(KernelId::Triangular, 3), cfg(KernelId::Quartic, 3)];
        let report = select_bandwidth(&flat, &vec![false; 300], &grid, 2, 4).unwrap();
        assert_eq!(report.best, grid[1]);
    }

    #[test]
    fn selection_is_reproducible() {
        let s = toy_series((0..800).map(|i| ((i * 37) % 23) as u64).collect());
        let grid = bandwidth_grid(&KernelId::ALL, 1..=6);
        let a = select_bandwidth(&s, &vec![false; 800], &grid, 5, 77).unwrap();
        let b = select_bandwidth(&s, &vec![false; 800], &grid, 5, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fully_excluded_cells_are_invalid() {
        let s = toy_series(vec![0; 100]);
        let grid = [cfg(KernelId::Triangular, 2)];
        // all-zero counts give λ̂ = 0 everywhere, which is never scored
        assert!(matches!(select_bandwidth(&s, &[false; 100], &grid, 2, 0), Err(Error::Numerical(_))));
    }

    proptest! {
        #[test]
        fn smoother_is_linear(
            v in proptest::collection::vec(-50.0f64..50.0, 40),
            w in proptest::collection::vec(-50.0f64..50.0, 40),
            avail in proptest::collection::vec(proptest::bool::weighted(0.7), 40),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            h in 1usize..8,
            k in 0usize..5,
        ) {
            let c = cfg(KernelId::ALL[k], h);
            let combo: Vec<f64> = v.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
            let sv = smooth(&v, &avail, &c).unwrap();
            let sw = smooth(&w, &avail, &c).unwrap();
            let sc = smooth(&combo, &avail, &c).unwrap();
            for i in 0..40 {
                match (sv[i], sw[i], sc[i]) {
                    (Some(x), Some(y), Some(z)) => prop_assert!((a * x + b * y - z).abs() < 1e-9),
                    (None, None, None) => {}
                    _ => prop_assert!(false, "availability pattern changed"),
                }
            }
        }

        #[test]
        fn smoother_is_bounded_by_window(
            v in proptest::collection::vec(0.0f64..100.0, 30),
            avail in proptest::collection::vec(proptest::bool::weighted(0.6), 30),
            h in 1usize..6,
            k in 0usize..5,
        ) {
            let out = smooth(&v, &avail, &cfg(KernelId::ALL[k], h)).unwrap();
            for (t, x) in out.iter().enumerate() {
                if let Some(x) = x {
                    let lo = t.saturating_sub(h);
                    let hi = (t + h).min(29);
                    let window: Vec<f64> = (lo..=hi).filter(|&i| avail[i]).map(|i| v[i]).collect();
                    let min = window.iter().cloned().fold(f64::INFINITY, f64::min);
                    let max = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(*x >= min - 1e-9 && *x <= max + 1e-9);
                }
            }
        }

        #[test]
        fn smoothing_commutes_with_reversal(
            v in proptest::collection::vec(0.0f64..100.0, 1..60),
            h in 1usize..10,
            k in 0usize..5,
        ) {
            let c = cfg(KernelId::ALL[k], h);
            let mut rev = v.clone();
            rev.reverse();
            let mut a = smooth_all(&v, &c);
            a.reverse();
            let b = smooth_all(&rev, &c);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn kernels_even_and_nonnegative(u in -1.0f64..=1.0, k in 0usize..5) {
            let kern = KernelId::ALL[k];
            let a = kernel_value(kern, u).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - kernel_value(kern, -u).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn data_rate_maximizes_likelihood(
            ys in proptest::collection::vec(1u64..200, 1..30),
            factors in proptest::collection::vec(0.05f64..5.0, 30),
        ) {
            let idx: Vec<usize> = (0..ys.len()).collect();
            let own: Vec<f64> = ys.iter().map(|&y| y as f64).collect();
            let other: Vec<f64> = ys.iter().zip(&factors).map(|(&y, f)| y as f64 * f).collect();
            let best = poisson_avg_loglik(&ys, &own, &idx).unwrap();
            prop_assert!(best >= poisson_avg_loglik(&ys, &other, &idx).unwrap() - 1e-12);
        }
    }
}
