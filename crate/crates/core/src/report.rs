//! Plot-ready summaries: visit quantiles around ad end times and the
//! density of the fitted non-zero lifts.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AdSchedule, VisitSeries};
use crate::error::{Error, Result};
use crate::kernel::{kernel_value, KernelId};

/// Linear interpolation between order statistics (type 7). `sorted` must be
/// ascending and non-empty; `p` is a probability.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    /// Minute relative to the minute containing the ad end.
    pub minute: i64,
    /// Ads whose window covers this minute.
    pub n: usize,
    /// One value per requested percentage; `None` when `n` is zero.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileReport {
    pub percents: Vec<f64>,
    pub rows: Vec<QuantileRow>,
}

/// Quantiles of raw visit counts at each minute from `before` minutes
/// before to `after` minutes after every ad. Relative minute `r` of an ad
/// ending at offset `s` is minute `⌊s⌋ + r`, so `r = 1` is the first minute
/// the ad can affect.
pub fn report_ad_window_quantiles(series: &VisitSeries, ads: &AdSchedule, before: u32, after: u32, percents: &[f64]) -> Result<QuantileReport> {
    if percents.iter().any(|p| !(0.0..=100.0).contains(p)) {
        return Err(Error::Invalid("quantile percentages must lie in [0, 100]".into()));
    }
    let counts = series.counts();
    let n = counts.len() as i64;
    let rows = (-(before as i64)..=after as i64)
        .map(|r| {
            let mut values: Vec<f64> = ads
                .ads()
                .iter()
                .map(|ad| ad.end_time.floor() as i64 + r)
                .filter(|t| (1..=n).contains(t))
                .map(|t| counts[(t - 1) as usize] as f64)
                .collect();
            values.sort_by(f64::total_cmp);
            QuantileRow {
                minute: r,
                n: values.len(),
                values: percents
                    .iter()
                    .map(|p| (!values.is_empty()).then(|| quantile_type7(&values, p / 100.0)))
                    .collect(),
            }
        })
        .collect();
    Ok(QuantileReport {
        percents: percents.to_vec(),
        rows,
    })
}

impl QuantileReport {
    /// CSV with a leading comment stating the quantile convention.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "# quantiles: type 7 linear interpolation").map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["minute".to_string(), "n".to_string()];
        header.extend(self.percents.iter().map(|p| format!("q{p}")));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![row.minute.to_string(), row.n.to_string()];
            record.extend(row.values.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub const DENSITY_GRID_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub x: f64,
    pub density: f64,
    /// Lifts in the histogram bin containing `x`.
    pub bin_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaDensity {
    pub bandwidth: f64,
    pub bin_width: f64,
    /// Number of non-zero lifts used.
    pub count: usize,
    pub points: Vec<DensityPoint>,
    pub warning: Option<String>,
}

/// Epanechnikov density estimate of the non-zero lifts on a grid of step
/// 0.5 covering the full kernel support, with histogram counts for bins
/// `[k·bin_width, (k+1)·bin_width)`.
pub fn report_theta_density(thetas: &[f64], bandwidth: f64, bin_width: f64) -> Result<ThetaDensity> {
    if !(bandwidth > 0.0 && bin_width > 0.0) {
        return Err(Error::Invalid("bandwidth and bin width must be positive".into()));
    }
    let values: Vec<f64> = thetas.iter().copied().filter(|&t| t != 0.0).collect();
    if values.is_empty() {
        return Ok(ThetaDensity {
            bandwidth,
            bin_width,
            count: 0,
            points: Vec::new(),
            warning: Some("no non-zero lifts to summarise".into()),
        });
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - bandwidth;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + bandwidth;
    let first = (lo / DENSITY_GRID_STEP).floor() as i64;
    let last = (hi / DENSITY_GRID_STEP).ceil() as i64;
    let scale = 1.0 / (values.len() as f64 * bandwidth);
    let bin_of = |x: f64| (x / bin_width).floor() as i64;
    let mut bins = std::collections::BTreeMap::new();
    for &v in &values {
        *bins.entry(bin_of(v)).or_insert(0usize) += 1;
    }
    let points = (first..=last)
        .map(|k| {
            let x = k as f64 * DENSITY_GRID_STEP;
            let density = values
                .iter()
                .filter_map(|&v| kernel_value(KernelId::Epanechnikov, (x - v) / bandwidth).ok())
                .sum::<f64>()
                * scale;
            DensityPoint {
                x,
                density,
                bin_count: bins.get(&bin_of(x)).copied().unwrap_or(0),
            }
        })
        .collect();
    Ok(ThetaDensity {
        bandwidth,
        bin_width,
        count: values.len(),
        points,
        warning: None,
    })
}

impl ThetaDensity {
    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1].x - w[0].x) * (w[0].density + w[1].density) / 2.0).sum()
    }

    /// `x,density,bin_count`; an empty estimate writes the header only.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["x", "density", "bin_count"])?;
        for p in &self.points {
            w.write_record([p.x.to_string(), p.density.to_string(), p.bin_count.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
