use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};

use super::compare::ModelComparison;
use super::fit::DecompositionFit;
use crate::data::{AdSchedule, VisitSeries};
use crate::error::{Error, Result};
use crate::kernel::SmootherConfig;
use crate::spread::SpreadSpec;

/// `ad_id,end_time,theta,motive,position,channel`; `ad_id` is the 0-based
/// schedule index.
pub fn write_thetas(path: impl AsRef<Path>, series: &VisitSeries, ads: &AdSchedule, fit: &DecompositionFit) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["ad_id", "end_time", "theta", "motive", "position", "channel"])?;
    for (j, (ad, theta)) in ads.ads().iter().zip(&fit.thetas).enumerate() {
        w.write_record([
            j.to_string(),
            series.offset_timestamp(ad.end_time).to_rfc3339_opts(SecondsFormat::AutoSi, true),
            theta.to_string(),
            ad.motive.to_string(),
            ad.position.to_string(),
            ad.channel.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `timestamp,z,mu,lambda` for every minute.
pub fn write_rates(path: impl AsRef<Path>, series: &VisitSeries, fit: &DecompositionFit) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "z", "mu", "lambda"])?;
    for (i, z) in series.counts().iter().enumerate() {
        w.write_record([
            series.row_timestamp(i).to_rfc3339_opts(SecondsFormat::Secs, true),
            z.to_string(),
            fit.mu[i].to_string(),
            fit.lambda[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub spec: SpreadSpec,
    pub mean: f64,
    pub mode: f64,
    pub smoother: SmootherConfig,
    pub loglik: f64,
    pub avg_loglik: f64,
    pub aic: f64,
    pub free_params: usize,
    pub n: usize,
    pub m: usize,
    pub iterations: usize,
    pub converged: bool,
    pub groups: usize,
    pub largest_group: usize,
    pub optimizer_failures: usize,
    pub tied_end_times: usize,
    pub history: Vec<f64>,
    pub comparison: Option<ModelComparison>,
}

impl Diagnostics {
    pub fn new(fit: &DecompositionFit, ads: &AdSchedule, comparison: Option<ModelComparison>) -> Self {
        Self {
            spec: fit.spec,
            mean: fit.spec.mean(),
            mode: fit.spec.mode(),
            smoother: fit.smoother,
            loglik: fit.loglik,
            avg_loglik: fit.avg_loglik,
            aic: fit.aic,
            free_params: fit.free_params,
            n: fit.n,
            m: fit.m,
            iterations: fit.iterations,
            converged: fit.converged,
            groups: fit.groups,
            largest_group: fit.largest_group,
            optimizer_failures: fit.optimizer_failures,
            tied_end_times: ads.tie_count(),
            history: fit.history.clone(),
            comparison,
        }
    }
}

pub fn write_diagnostics(path: impl AsRef<Path>, diagnostics: &Diagnostics) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, diagnostics)?;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))
}
