use serde::{Deserialize, Serialize};

use super::fit::DecompositionFit;
use crate::special::chi2_sf;
use crate::spread::SpreadFamily;

/// Akaike information criterion `2k − 2 ln L`.
pub fn aic(loglik: f64, free_params: usize) -> f64 {
    2.0 * free_params as f64 - 2.0 * loglik
}

/// AIC from an average per-minute log-likelihood over `n` minutes.
pub fn aic_from_average(avg_loglik: f64, n: usize, free_params: usize) -> f64 {
    aic(avg_loglik * n as f64, free_params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilksResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// The full model fitted worse than the restricted one beyond tolerance,
    /// which points at an optimizer failure.
    pub warning: bool,
}

/// Likelihood-ratio test of a restricted model against a nesting full model.
pub fn wilks_test(loglik_restricted: f64, loglik_full: f64, df: usize) -> WilksResult {
    let diff = loglik_full - loglik_restricted;
    let warning = diff < -1e-6 * loglik_full.abs();
    let statistic = (2.0 * diff).max(0.0);
    WilksResult {
        statistic,
        df,
        p_value: chi2_sf(statistic, df as f64).clamp(0.0, 1.0),
        warning,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub family: SpreadFamily,
    pub alpha: f64,
    pub phi: f64,
    pub psi: f64,
    pub mean: f64,
    pub mode: f64,
    pub loglik: f64,
    pub avg_loglik: f64,
    pub aic: f64,
    /// Test against the generalized gamma fit, when one is present.
    pub wilks: Option<WilksResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub rows: Vec<ModelRow>,
}

impl ModelComparison {
    /// Family with the lowest AIC; the earlier row wins ties.
    pub fn best_by_aic(&self) -> Option<SpreadFamily> {
        self.rows
            .iter()
            .fold(None::<&ModelRow>, |best, r| match best {
                Some(b) if b.aic <= r.aic => Some(b),
                _ => Some(r),
            })
            .map(|r| r.family)
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> crate::Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["family", "alpha", "phi", "psi", "mean", "mode", "avg_loglik", "aic", "wilks_p"])?;
        for r in &self.rows {
            w.write_record([
                r.family.name().to_string(),
                r.alpha.to_string(),
                r.phi.to_string(),
                r.psi.to_string(),
                r.mean.to_string(),
                r.mode.to_string(),
                r.avg_loglik.to_string(),
                r.aic.to_string(),
                r.wilks.map(|t| t.p_value.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| crate::Error::io(path, e))
    }
}

/// Table of fitted families with Wilks tests against the generalized gamma.
pub fn compare_models(fits: &[DecompositionFit]) -> ModelComparison {
    let full = fits.iter().find(|f| f.family() == SpreadFamily::GenGamma);
    let rows = fits
        .iter()
        .map(|f| {
            let family = f.family();
            let wilks = full.filter(|_| family != SpreadFamily::GenGamma).map(|g| {
                let df = SpreadFamily::GenGamma.free_params() - family.free_params();
                wilks_test(f.loglik, g.loglik, df)
            });
            ModelRow {
                family,
                alpha: f.spec.alpha,
                phi: f.spec.phi,
                psi: f.spec.psi,
                mean: f.spec.mean(),
                mode: f.spec.mode(),
                loglik: f.loglik,
                avg_loglik: f.avg_loglik,
                aic: f.aic,
                wilks,
            }
        })
        .collect();
    ModelComparison { rows }
}
