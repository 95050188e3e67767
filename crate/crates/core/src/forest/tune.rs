use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::model::{train_forest, ForestSetting};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// `1 − SSE/SST` around the sample's own mean; NaN for a constant sample.
    pub r2: f64,
    pub mse: f64,
}

pub fn metrics(observed: &[f64], predicted: &[f64]) -> Metrics {
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let sse: f64 = observed.iter().zip(predicted).map(|(o, p)| (o - p).powi(2)).sum();
    let sst: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
    let mse = sse / n;
    Metrics {
        mae: observed.iter().zip(predicted).map(|(o, p)| (o - p).abs()).sum::<f64>() / n,
        rmse: mse.sqrt(),
        r2: if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN },
        mse,
    }
}

pub(crate) fn mean_metrics(all: &[Metrics]) -> Metrics {
    let n = all.len() as f64;
    let avg = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
    Metrics {
        mae: avg(|m| m.mae),
        rmse: avg(|m| m.rmse),
        r2: avg(|m| m.r2),
        mse: avg(|m| m.mse),
    }
}

/// Averages over repeats for one grid setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingScore {
    pub setting: ForestSetting,
    pub training: Metrics,
    pub validation: Metrics,
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub repeats: usize,
    pub scores: Vec<SettingScore>,
    /// Index of the setting with the lowest mean validation MSE.
    pub best: usize,
}

impl TuningReport {
    pub fn best_score(&self) -> &SettingScore {
        &self.scores[self.best]
    }

    /// Every setting and sample: `mtry,min_node,sample_frac,n_trees,sample,mae,rmse,r2,mse`.
    pub fn write_grid_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["mtry", "min_node", "sample_frac", "n_trees", "sample", "mae", "rmse", "r2", "mse"])?;
        for s in &self.scores {
            for (name, m) in [("training", &s.training), ("validation", &s.validation), ("test", &s.test)] {
                w.write_record([
                    s.setting.mtry.to_string(),
                    s.setting.min_node.to_string(),
                    s.setting.sample_frac.to_string(),
                    s.setting.n_trees.to_string(),
                    name.to_string(),
                    m.mae.to_string(),
                    m.rmse.to_string(),
                    m.r2.to_string(),
                    m.mse.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Random 50/25/25 split of id-ordered positions.
fn split(data: &Dataset, seed: u64, repeat: usize) -> [Vec<usize>; 3] {
    let mut order = data.id_order();
    order.shuffle(&mut rng_for(seed, repeat as u64));
    let n = order.len();
    let (n_train, n_valid) = (n / 2, n / 4);
    let test = order.split_off(n_train + n_valid);
    let valid = order.split_off(n_train);
    [order, valid, test]
}

/// Repeated train/validation/test evaluation of every setting in `grid`.
/// Ties in validation MSE keep the earlier grid entry.
pub fn tune(data: &Dataset, grid: &[ForestSetting], repeats: usize, seed: u64) -> Result<(ForestSetting, TuningReport)> {
    if grid.is_empty() {
        return Err(Error::Invalid("tuning grid is empty".into()));
    }
    if repeats == 0 {
        return Err(Error::Invalid("tuning needs at least one repeat".into()));
    }
    if data.len() < 4 {
        return Err(Error::Invalid(format!("{} rows cannot be split 50/25/25", data.len())));
    }
    for s in grid {
        s.validate(data.n_features())?;
    }
    let splits: Vec<[Vec<usize>; 3]> = (0..repeats).map(|r| split(data, seed, r)).collect();
    let subsets: Vec<[Dataset; 3]> = splits.iter().map(|parts| parts.clone().map(|rows| data.subset(&rows))).collect();

    let jobs: Vec<(usize, usize)> = (0..repeats).flat_map(|r| (0..grid.len()).map(move |k| (r, k))).collect();
    let results: Vec<[Metrics; 3]> = jobs
        .par_iter()
        .map(|&(r, k)| {
            let [train, valid, test] = &subsets[r];
            let model = train_forest(train, &grid[k], derive_seed(derive_seed(seed, r as u64), k as u64))?;
            Ok([train, valid, test].map(|d| metrics(d.target(), &model.predict_all(d))))
        })
        .collect::<Result<_>>()?;

    let scores: Vec<SettingScore> = grid
        .iter()
        .enumerate()
        .map(|(k, setting)| {
            let per_repeat: Vec<&[Metrics; 3]> = (0..repeats).map(|r| &results[r * grid.len() + k]).collect();
            let sample = |j: usize| mean_metrics(&per_repeat.iter().map(|m| m[j]).collect::<Vec<_>>());
            SettingScore {
                setting: *setting,
                training: sample(0),
                validation: sample(1),
                test: sample(2),
            }
        })
        .collect();
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |best, (k, s)| if s.validation.mse < scores[best].validation.mse { k } else { best });
    Ok((grid[best], TuningReport { repeats, scores, best }))
}
