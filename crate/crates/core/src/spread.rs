//! Generalized-gamma spread functions.
//!
//! The continuous spread `f(τ)` is the density of the delay between an ad's
//! end and a resulting visit:
//!
//! ```text
//! f(τ) = αφ / Γ(ψ) · (τα)^(ψφ − 1) · exp(−(τα)^φ),   τ > 0
//! ```
//!
//! with scale `α` and shapes `φ`, `ψ`. Its mass on `[τ1, τ2]` is the
//! regularized incomplete gamma `Q(ψ, (τ1α)^φ, (τ2α)^φ)`. The discretized
//! spread `V_s(t)` is the share of that mass falling in minute `t` for an ad
//! ending at offset `s`, optionally truncated at `d` minutes and renormalized.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{gamma_interval_mass, ln_gamma, reg_gamma_pair};

pub const DEFAULT_CUTOFF: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpreadFamily {
    Exponential,
    Weibull,
    Gamma,
    GenGamma,
}

impl SpreadFamily {
    pub const ALL: [SpreadFamily; 4] = [
        SpreadFamily::Exponential,
        SpreadFamily::Weibull,
        SpreadFamily::Gamma,
        SpreadFamily::GenGamma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpreadFamily::Exponential => "exponential",
            SpreadFamily::Weibull => "weibull",
            SpreadFamily::Gamma => "gamma",
            SpreadFamily::GenGamma => "gengamma",
        }
    }

    pub fn phi_free(self) -> bool {
        matches!(self, SpreadFamily::Weibull | SpreadFamily::GenGamma)
    }

    pub fn psi_free(self) -> bool {
        matches!(self, SpreadFamily::Gamma | SpreadFamily::GenGamma)
    }

    /// Number of estimated spread parameters.
    pub fn free_params(self) -> usize {
        1 + self.phi_free() as usize + self.psi_free() as usize
    }

    /// Whether `self` is a special case of (or equal to) `other`.
    pub fn nested_in(self, other: SpreadFamily) -> bool {
        (!self.phi_free() || other.phi_free()) && (!self.psi_free() || other.psi_free())
    }
}

impl fmt::Display for SpreadFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpreadFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SpreadFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Invalid(format!("unknown spread family {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadSpec {
    pub family: SpreadFamily,
    /// Scale, 1/minutes.
    pub alpha: f64,
    pub phi: f64,
    pub psi: f64,
    /// Effect horizon in minutes; `None` keeps the untruncated spread.
    pub cutoff: Option<u32>,
}

impl SpreadSpec {
    pub fn new(family: SpreadFamily, alpha: f64, phi: f64, psi: f64, cutoff: Option<u32>) -> Result<Self> {
        let spec = Self {
            family,
            alpha,
            phi,
            psi,
            cutoff,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn exponential(alpha: f64) -> Result<Self> {
        Self::new(SpreadFamily::Exponential, alpha, 1.0, 1.0, None)
    }

    pub fn weibull(alpha: f64, phi: f64) -> Result<Self> {
        Self::new(SpreadFamily::Weibull, alpha, phi, 1.0, None)
    }

    pub fn gamma(alpha: f64, psi: f64) -> Result<Self> {
        Self::new(SpreadFamily::Gamma, alpha, 1.0, psi, None)
    }

    pub fn gengamma(alpha: f64, phi: f64, psi: f64) -> Result<Self> {
        Self::new(SpreadFamily::GenGamma, alpha, phi, psi, None)
    }

    pub fn with_cutoff(mut self, cutoff: Option<u32>) -> Result<Self> {
        self.cutoff = cutoff;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("phi", self.phi), ("psi", self.psi)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("spread parameter {name} = {v} must be positive")));
            }
        }
        if !self.family.phi_free() && self.phi != 1.0 {
            return Err(Error::Invalid(format!("{} spread requires phi = 1", self.family)));
        }
        if !self.family.psi_free() && self.psi != 1.0 {
            return Err(Error::Invalid(format!("{} spread requires psi = 1", self.family)));
        }
        if self.cutoff == Some(0) {
            return Err(Error::Invalid("cut-off must be at least one minute".into()));
        }
        Ok(())
    }

    /// Re-tags the parameters under `family`, resetting shapes that
    /// `family` holds fixed.
    pub fn cast(&self, family: SpreadFamily) -> Self {
        Self {
            family,
            alpha: self.alpha,
            phi: if family.phi_free() { self.phi } else { 1.0 },
            psi: if family.psi_free() { self.psi } else { 1.0 },
            cutoff: self.cutoff,
        }
    }

    /// Free parameters in the order `α`, `φ` (if free), `ψ` (if free).
    pub fn free_values(&self) -> Vec<f64> {
        let mut v = vec![self.alpha];
        if self.family.phi_free() {
            v.push(self.phi);
        }
        if self.family.psi_free() {
            v.push(self.psi);
        }
        v
    }

    pub fn with_free_values(&self, values: &[f64]) -> Self {
        let mut out = *self;
        let mut it = values.iter().copied();
        out.alpha = it.next().unwrap_or(self.alpha);
        if self.family.phi_free() {
            out.phi = it.next().unwrap_or(self.phi);
        }
        if self.family.psi_free() {
            out.psi = it.next().unwrap_or(self.psi);
        }
        out
    }

    /// Continuous spread density `f(τ)`.
    pub fn density(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0) {
            return Err(Error::domain(format!("spread density requires tau > 0, got {tau}")));
        }
        let x = tau * self.alpha;
        let log_f = (self.alpha * self.phi).ln() - ln_gamma(self.psi) + (self.psi * self.phi - 1.0) * x.ln() - x.powf(self.phi);
        Ok(log_f.exp())
    }

    fn to_gamma_scale(self, tau: f64) -> f64 {
        if tau <= 0.0 {
            0.0
        } else {
            (tau * self.alpha).powf(self.phi)
        }
    }

    /// `∫_{lo}^{hi} f(τ) dτ` for `0 ≤ lo ≤ hi`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        gamma_interval_mass(self.psi, self.to_gamma_scale(lo), self.to_gamma_scale(hi))
    }

    /// `E[T] = Γ(ψ + 1/φ) / (α Γ(ψ))`.
    pub fn mean(&self) -> f64 {
        (ln_gamma(self.psi + 1.0 / self.phi) - ln_gamma(self.psi)).exp() / self.alpha
    }

    /// Mode of the delay: `(ψ − 1/φ)^(1/φ) / α` when `φψ > 1`, else 0.
    pub fn mode(&self) -> f64 {
        if self.phi * self.psi > 1.0 {
            (self.psi - 1.0 / self.phi).powf(1.0 / self.phi) / self.alpha
        } else {
            0.0
        }
    }

    /// Cut-off normalizer `∫_0^{d − s + ⌊s⌋} f`, or 1 without a cut-off.
    fn normalizer(&self, s: f64) -> f64 {
        match self.cutoff {
            Some(d) => self.mass(0.0, d as f64 - s + s.floor()),
            None => 1.0,
        }
    }

    /// `V_s(t)` for 1-based minute `t`.
    pub fn discretized(&self, s: f64, t: i64) -> f64 {
        let tf = t as f64;
        if tf <= s {
            return 0.0;
        }
        if let Some(d) = self.cutoff {
            if tf > s + d as f64 {
                return 0.0;
            }
        }
        let numerator = if tf <= s + 1.0 {
            self.mass(0.0, tf - s)
        } else {
            self.mass(tf - s - 1.0, tf - s)
        };
        let norm = self.normalizer(s);
        if norm > 0.0 {
            numerator / norm
        } else {
            0.0
        }
    }

    /// `V_s(t)` for consecutive minutes `first..=last`, where
    /// `first = ⌊s⌋ + 1` and `last` is `⌊s⌋ + d` under a cut-off or
    /// `⌊s⌋ + horizon` without one.
    pub fn profile(&self, s: f64, horizon: u32) -> SpreadProfile {
        let first = s.floor() as i64 + 1;
        let len = self.cutoff.unwrap_or(horizon) as usize;
        let norm = self.normalizer(s);
        let mut weights = Vec::with_capacity(len);
        let mut prev = reg_gamma_pair(self.psi, 0.0);
        let mut prev_x = 0.0;
        for i in 0..len {
            let tau = (first + i as i64) as f64 - s;
            let x = self.to_gamma_scale(tau);
            let cur = reg_gamma_pair(self.psi, x);
            let mass = if prev_x >= self.psi { prev.1 - cur.1 } else { cur.0 - prev.0 };
            weights.push(if norm > 0.0 { mass.max(0.0) / norm } else { 0.0 });
            prev = cur;
            prev_x = x;
        }
        SpreadProfile { first, weights }
    }
}

impl fmt::Display for SpreadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(alpha={:.4}, phi={:.4}, psi={:.4})", self.family, self.alpha, self.phi, self.psi)
    }
}

/// Per-minute spread weights of a single ad starting at minute `first`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadProfile {
    pub first: i64,
    pub weights: Vec<f64>,
}

/// Generalized regularized incomplete gamma `Q(ψ, a, b) = P(b; ψ) − P(a; ψ)`.
pub fn reg_inc_gamma_q(psi: f64, a: f64, b: f64) -> Result<f64> {
    if !(psi > 0.0) {
        return Err(Error::domain(format!("shape must be positive, got {psi}")));
    }
    if !(a >= 0.0) || b < a {
        return Err(Error::domain(format!("requires 0 <= a <= b, got a={a}, b={b}")));
    }
    Ok(gamma_interval_mass(psi, a, b))
}

pub fn density(spec: &SpreadSpec, tau: f64) -> Result<f64> {
    spec.density(tau)
}

pub fn spread_mean(spec: &SpreadSpec) -> f64 {
    spec.mean()
}

pub fn spread_mode(spec: &SpreadSpec) -> f64 {
    spec.mode()
}

pub fn discretized_spread(spec: &SpreadSpec, s: f64, t: i64) -> f64 {
    spec.discretized(s, t)
}

#[cfg(test)]
pub(crate) mod quadrature {
    /// Adaptive Simpson integration; test-only oracle.
    pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                left + right + delta / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        // fixed pre-split so that narrow peaks are not missed
        let panels = 64;
        let width = (b - a) / panels as f64;
        (0..panels)
            .map(|i| {
                let lo = a + i as f64 * width;
                let hi = if i + 1 == panels { b } else { lo + width };
                let fa = f(lo);
                let fb = f(hi);
                let fm = f(0.5 * (lo + hi));
                let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
                rec(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 50)
            })
            .sum()
    }
}
