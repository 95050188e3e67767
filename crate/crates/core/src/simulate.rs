//! Ground-truth synthetic data: a diurnal baseline, ads with known lifts
//! spread through a known spread function, and Poisson visit counts.

use std::f64::consts::PI;
use std::path::Path;

use chrono::DateTime;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AdRecord, AdSchedule, Channel, Motive, Position, Timestamp, VisitSeries};
use crate::decompose::{compute_mu, DecompositionFit};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};
use crate::spread::SpreadSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Baseline {
    Flat {
        rate: f64,
    },
    /// `mean + amplitude · sin(2π t / period + phase)`.
    Sinusoid {
        mean: f64,
        amplitude: f64,
        #[serde(default = "default_period")]
        period: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Daily and weekly harmonics around `mean`.
    Weekly {
        mean: f64,
        daily_amplitude: f64,
        weekly_amplitude: f64,
    },
}

fn default_period() -> f64 {
    1440.0
}

impl Baseline {
    /// Expected visits in 1-based minute `t`.
    pub fn rate(&self, t: i64) -> f64 {
        let t = t as f64;
        match *self {
            Baseline::Flat { rate } => rate,
            Baseline::Sinusoid {
                mean,
                amplitude,
                period,
                phase,
            } => mean + amplitude * (2.0 * PI * t / period + phase).sin(),
            Baseline::Weekly {
                mean,
                daily_amplitude,
                weekly_amplitude,
            } => mean * (1.0 + daily_amplitude * (2.0 * PI * t / 1440.0).sin() + weekly_amplitude * (2.0 * PI * t / 10_080.0).sin()),
        }
    }

    fn validate(&self) -> Result<()> {
        let floor = match *self {
            Baseline::Flat { rate } => rate,
            Baseline::Sinusoid { mean, amplitude, period, .. } => {
                if !(period > 0.0) {
                    return Err(Error::Invalid("sinusoid period must be positive".into()));
                }
                mean - amplitude.abs()
            }
            Baseline::Weekly {
                mean,
                daily_amplitude,
                weekly_amplitude,
            } => mean * (1.0 - daily_amplitude.abs() - weekly_amplitude.abs()),
        };
        if !(floor > 0.0) {
            return Err(Error::Invalid("baseline rate must stay positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AdPlan {
    /// Explicit end times and lifts; attributes drawn at random.
    Fixed { end_times: Vec<f64>, thetas: Vec<f64> },
    /// `count` ads placed uniformly, each with lift 0 with probability
    /// `zero_prob` and Gamma(`theta_shape`, mean `theta_mean`) otherwise.
    Random {
        count: usize,
        zero_prob: f64,
        theta_mean: f64,
        #[serde(default = "default_theta_shape")]
        theta_shape: f64,
    },
}

fn default_theta_shape() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    #[serde(default = "default_start")]
    pub start: Timestamp,
    pub baseline: Baseline,
    pub ads: AdPlan,
    pub spread: SpreadSpec,
    pub seed: u64,
}

fn default_start() -> Timestamp {
    DateTime::parse_from_rfc3339("2019-01-01T00:00:00+01:00").expect("valid literal")
}

impl SimScenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("scenario: {e}")))
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("scenario needs at least one minute".into()));
        }
        self.baseline.validate()?;
        self.spread.validate()?;
        match &self.ads {
            AdPlan::Fixed { end_times, thetas } => {
                if end_times.len() != thetas.len() {
                    return Err(Error::Invalid("one theta per fixed ad is required".into()));
                }
                if thetas.iter().any(|&t| !(t >= 0.0)) {
                    return Err(Error::Invalid("true lifts must be non-negative".into()));
                }
                if end_times.iter().any(|&s| !(0.0..=self.n as f64).contains(&s)) {
                    return Err(Error::Invalid("fixed ad outside the series span".into()));
                }
            }
            AdPlan::Random {
                zero_prob,
                theta_mean,
                theta_shape,
                ..
            } => {
                if !(0.0..=1.0).contains(zero_prob) {
                    return Err(Error::Invalid("zero_prob must lie in [0, 1]".into()));
                }
                if !(*theta_mean > 0.0 && *theta_shape > 0.0) {
                    return Err(Error::Invalid("lift law needs positive mean and shape".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SpreadSpec,
    pub thetas: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

impl Truth {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn random_attributes(rng: &mut ChaCha8Rng) -> (Motive, Position, Channel) {
    let motive = Motive::from_index(rng.random_range(0..Motive::LEVELS.len())).expect("in range");
    let position = Position::from_index(rng.random_range(0..Position::LEVELS.len())).expect("in range");
    let channel = Channel::from_index(rng.random_range(0..Channel::LEVELS.len())).expect("in range");
    (motive, position, channel)
}

fn poisson_draw(rng: &mut ChaCha8Rng, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive finite rate").sample(rng) as u64
}

/// Draws one synthetic data set.
pub fn simulate(scenario: &SimScenario) -> Result<(VisitSeries, AdSchedule, Truth)> {
    scenario.validate()?;
    let n = scenario.n;
    let mut rng = rng_for(scenario.seed, 0);
    let horizon = scenario.spread.cutoff.unwrap_or(30) as f64;

    let (times, thetas): (Vec<f64>, Vec<f64>) = match &scenario.ads {
        AdPlan::Fixed { end_times, thetas } => (end_times.clone(), thetas.clone()),
        AdPlan::Random {
            count,
            zero_prob,
            theta_mean,
            theta_shape,
        } => {
            let upper = (n as f64 - horizon - 1.0).max(1.0);
            let mut times: Vec<f64> = (0..*count).map(|_| rng.random_range(0.0..upper)).collect();
            times.sort_by(f64::total_cmp);
            let law = Gamma::new(*theta_shape, theta_mean / theta_shape).map_err(|e| Error::Invalid(e.to_string()))?;
            let thetas = times
                .iter()
                .map(|_| if rng.random::<f64>() < *zero_prob { 0.0 } else { law.sample(&mut rng) })
                .collect();
            (times, thetas)
        }
    };

    // keep lifts attached to their ads through the schedule's sort
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let times: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let thetas: Vec<f64> = order.iter().map(|&i| thetas[i]).collect();
    let ads = AdSchedule::new(
        times
            .iter()
            .map(|&end_time| {
                let (motive, position, channel) = random_attributes(&mut rng);
                AdRecord {
                    end_time,
                    motive,
                    position,
                    channel,
                }
            })
            .collect(),
    );

    let lambda: Vec<f64> = (1..=n as i64).map(|t| scenario.baseline.rate(t)).collect();
    let mu = mu_for(&thetas, &times, &scenario.spread, n);
    let counts = lambda.iter().zip(&mu).map(|(l, m)| poisson_draw(&mut rng, l + m)).collect();
    let series = VisitSeries::new(scenario.start, counts)?;
    Ok((
        series,
        ads,
        Truth {
            spec: scenario.spread,
            thetas,
            lambda,
            mu,
        },
    ))
}

fn mu_for(thetas: &[f64], times: &[f64], spec: &SpreadSpec, n: usize) -> Vec<f64> {
    let mut mu = vec![0.0; n];
    for (&theta, &s) in thetas.iter().zip(times) {
        let first = (s.floor() as i64 + 1).max(1);
        let span = spec.cutoff.unwrap_or(crate::decompose::UNTRUNCATED_HORIZON) as i64;
        let last = (s.floor() as i64 + span).min(n as i64);
        if first > last {
            continue;
        }
        let part = compute_mu(&[theta], &[s], spec, first..=last);
        for (t, v) in (first..=last).zip(part) {
            mu[(t - 1) as usize] += v;
        }
    }
    mu
}

/// `count` independent replicates with seeds derived from the scenario seed.
pub fn simulate_replicates(scenario: &SimScenario, count: usize) -> Result<Vec<(VisitSeries, AdSchedule, Truth)>> {
    (0..count)
        .into_par_iter()
        .map(|r| simulate(&scenario.with_seed(derive_seed(scenario.seed, r as u64))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthError {
    pub theta_mae: f64,
    pub theta_rmse: f64,
    /// Absolute difference of fitted and true mean delay, minutes.
    pub spread_mean_error: f64,
    pub lambda_rmse: f64,
}

pub fn truth_error(fit: &DecompositionFit, truth: &Truth) -> Result<TruthError> {
    if fit.thetas.len() != truth.thetas.len() || fit.lambda.len() != truth.lambda.len() {
        return Err(Error::Invalid("fit and truth are not aligned".into()));
    }
    let m = fit.thetas.len().max(1) as f64;
    let diffs: Vec<f64> = fit.thetas.iter().zip(&truth.thetas).map(|(a, b)| a - b).collect();
    let n = fit.lambda.len().max(1) as f64;
    let lambda_sse: f64 = fit.lambda.iter().zip(&truth.lambda).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(TruthError {
        theta_mae: diffs.iter().map(|d| d.abs()).sum::<f64>() / m,
        theta_rmse: (diffs.iter().map(|d| d * d).sum::<f64>() / m).sqrt(),
        spread_mean_error: (fit.spec.mean() - truth.spec.mean()).abs(),
        lambda_rmse: (lambda_sse / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::SmootherConfig;

    fn flat(rate: f64, n: usize, plan: AdPlan, seed: u64) -> SimScenario {
        SimScenario {
            n,
            start: default_start(),
            baseline: Baseline::Flat { rate },
            ads: plan,
            spread: SpreadSpec::weibull(0.32, 1.28).unwrap().with_cutoff(Some(30)).unwrap(),
            seed,
        }
    }

    fn no_ads() -> AdPlan {
        AdPlan::Fixed {
            end_times: vec![],
            thetas: vec![],
        }
    }

    #[test]
    fn flat_mean_within_three_sigma() {
        let (series, _, _) = simulate(&flat(25.0, 20_000, no_ads(), 3)).unwrap();
        let mean = series.values().iter().sum::<f64>() / 20_000.0;
        let sigma = (25.0f64 / 20_000.0).sqrt();
        assert!((mean - 25.0).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn poisson_dispersion() {
        let (series, _, _) = simulate(&flat(40.0, 30_000, no_ads(), 11)).unwrap();
        let v = series.values();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((0.9..=1.1).contains(&(var / mean)), "{}", var / mean);
    }

    #[test]
    fn same_seed_same_draw() {
        let plan = AdPlan::Random {
            count: 10,
            zero_prob: 0.3,
            theta_mean: 100.0,
            theta_shape: 2.0,
        };
        let a = simulate(&flat(10.0, 3000, plan.clone(), 5)).unwrap();
        let b = simulate(&flat(10.0, 3000, plan.clone(), 5)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&flat(10.0, 3000, plan, 6)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn injected_excess_matches_lift() {
        // one ad with θ* = 500 over a flat baseline; mean excess over
        // 1000 replicates must be within 3 standard errors of 500
        let window = 30.0;
        let rate = 20.0;
        let scenario = flat(
            rate,
            200,
            AdPlan::Fixed {
                end_times: vec![100.0],
                thetas: vec![500.0],
            },
            17,
        );
        let reps = simulate_replicates(&scenario, 1000).unwrap();
        let excess: Vec<f64> = reps
            .iter()
            .map(|(s, _, _)| s.counts()[100..130].iter().map(|&c| c as f64).sum::<f64>() - rate * window)
            .collect();
        let mean = excess.iter().sum::<f64>() / 1000.0;
        let se = ((500.0 + rate * window) / 1000.0).sqrt();
        assert!((mean - 500.0).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn truth_mu_has_unit_mass() {
        let scenario = flat(
            5.0,
            400,
            AdPlan::Fixed {
                end_times: vec![50.5, 52.0, 300.25],
                thetas: vec![100.0, 0.0, 40.0],
            },
            1,
        );
        let (_, ads, truth) = simulate(&scenario).unwrap();
        assert_eq!(ads.len(), 3);
        assert!((truth.mu.iter().sum::<f64>() - 140.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        assert!(simulate(&flat(0.0, 10, no_ads(), 1)).is_err());
        let bad = AdPlan::Random {
            count: 3,
            zero_prob: 1.5,
            theta_mean: 10.0,
            theta_shape: 1.0,
        };
        assert!(simulate(&flat(1.0, 100, bad, 1)).is_err());
        let s = SimScenario {
            baseline: Baseline::Sinusoid {
                mean: 10.0,
                amplitude: 12.0,
                period: 1440.0,
                phase: 0.0,
            },
            ..flat(1.0, 100, no_ads(), 1)
        };
        assert!(s.validate().is_err());
    }

    fn fit_from(truth: &Truth, thetas: Vec<f64>) -> DecompositionFit {
        DecompositionFit {
            spec: truth.spec,
            smoother: SmootherConfig::default(),
            thetas,
            mu: truth.mu.clone(),
            lambda: truth.lambda.clone(),
            loglik: 0.0,
            avg_loglik: 0.0,
            n: truth.lambda.len(),
            m: truth.thetas.len(),
            free_params: 0,
            aic: 0.0,
            iterations: 0,
            converged: true,
            history: vec![],
            groups: 0,
            largest_group: 0,
            optimizer_failures: 0,
        }
    }

    #[test]
    fn truth_error_metrics() {
        let truth = Truth {
            spec: SpreadSpec::weibull(0.32, 1.28).unwrap(),
            thetas: vec![100.0, 0.0, 50.0],
            lambda: vec![10.0; 5],
            mu: vec![0.0; 5],
        };
        let exact = truth_error(&fit_from(&truth, truth.thetas.clone()), &truth).unwrap();
        assert_eq!(exact.theta_mae, 0.0);
        assert_eq!(exact.theta_rmse, 0.0);
        assert_eq!(exact.spread_mean_error, 0.0);
        assert_eq!(exact.lambda_rmse, 0.0);

        let shifted = truth_error(&fit_from(&truth, vec![110.0, 10.0, 60.0]), &truth).unwrap();
        assert!((shifted.theta_mae - 10.0).abs() < 1e-12);

        // hand computation: errors (−4, 3, 12) → MAE 19/3, RMSE √(169/3)
        let mixed = truth_error(&fit_from(&truth, vec![96.0, 3.0, 62.0]), &truth).unwrap();
        assert!((mixed.theta_mae - 19.0 / 3.0).abs() < 1e-12);
        assert!((mixed.theta_rmse - (169.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn scenario_toml_round_trip() {
        let text = r#"
            n = 1440
            seed = 9
            [baseline]
            shape = "sinusoid"
            mean = 30.0
            amplitude = 10.0
            [ads]
            kind = "random"
            count = 5
            zero_prob = 0.3
            theta_mean = 150.0
            [spread]
            family = "weibull"
            alpha = 0.32
            phi = 1.28
            psi = 1.0
            cutoff = 30
        "#;
        let s = SimScenario::from_toml_str(text).unwrap();
        assert_eq!(s.n, 1440);
        assert!(matches!(s.baseline, Baseline::Sinusoid { period, .. } if period == 1440.0));
        assert!(simulate(&s).is_ok());
    }
}
