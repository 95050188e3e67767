use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Feature};
use super::model::{train_forest, ForestModel, ForestSetting};
use super::tune::{mean_metrics, metrics, Metrics, SettingScore, TuningReport};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    /// Mean increase of per-tree out-of-bag MSE after permuting the
    /// feature; `None` without out-of-bag rows.
    pub permutation: Option<f64>,
    /// Share of the total squared-error reduction.
    pub impurity: f64,
}

fn mse_of(model: &ForestModel, tree: usize, data: &Dataset, rows: &[usize], swap: Option<(usize, &[f64])>) -> f64 {
    let t = &model.trees()[tree];
    let sse: f64 = rows
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let mut x = data.row(i);
            if let Some((f, values)) = swap {
                x[f] = values[j];
            }
            (data.target()[i] - t.predict(&x)).powi(2)
        })
        .sum();
    sse / rows.len() as f64
}

/// Permutation and impurity importance. `data` must be the training data of
/// `model`; permutations are drawn per tree and feature from `seed`.
pub fn variable_importance(model: &ForestModel, data: &Dataset, seed: u64) -> Vec<FeatureImportance> {
    let p = data.n_features();
    let per_tree: Vec<Option<Vec<f64>>> = (0..model.trees().len())
        .into_par_iter()
        .map(|k| {
            let oob = model.out_of_bag(k, data.len());
            if oob.is_empty() {
                return None;
            }
            let base = mse_of(model, k, data, &oob, None);
            let tree_seed = derive_seed(seed, k as u64);
            Some(
                (0..p)
                    .map(|f| {
                        let mut values: Vec<f64> = oob.iter().map(|&i| data.column(f)[i]).collect();
                        values.shuffle(&mut rng_for(tree_seed, f as u64));
                        mse_of(model, k, data, &oob, Some((f, &values))) - base
                    })
                    .collect(),
            )
        })
        .collect();
    let used: Vec<&Vec<f64>> = per_tree.iter().flatten().collect();
    let total_gain: f64 = model.split_gains().iter().sum();
    data.features()
        .iter()
        .enumerate()
        .map(|(f, feature)| FeatureImportance {
            feature: feature.name.clone(),
            permutation: (!used.is_empty()).then(|| used.iter().map(|v| v[f]).sum::<f64>() / used.len() as f64),
            impurity: if total_gain > 0.0 { model.split_gains()[f] / total_gain } else { 0.0 },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdPoint {
    pub value: f64,
    pub mean_prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdCurve {
    pub feature: String,
    /// Level labels for categorical features, numbers otherwise.
    pub labels: Vec<String>,
    pub points: Vec<PdPoint>,
}

/// All declared levels of a categorical feature, or `points` evenly spaced
/// values spanning the observed range of a numeric one.
pub fn default_grid(data: &Dataset, feature: usize, points: usize) -> Vec<f64> {
    match data.features()[feature].levels() {
        Some(levels) => (0..levels.len()).map(|l| l as f64).collect(),
        None => {
            let column = data.column(feature);
            let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if points <= 1 || lo == hi {
                return vec![lo];
            }
            (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
        }
    }
}

/// Average prediction with `feature` set to each grid value in every row.
pub fn partial_dependence(model: &ForestModel, data: &Dataset, feature: usize, grid: &[f64]) -> PdCurve {
    let rows: Vec<Vec<f64>> = (0..data.len()).map(|i| data.row(i)).collect();
    let points = grid
        .par_iter()
        .map(|&value| {
            let total: f64 = rows
                .iter()
                .map(|row| {
                    let mut x = row.clone();
                    x[feature] = value;
                    model.predict(&x)
                })
                .sum();
            PdPoint {
                value,
                mean_prediction: total / rows.len() as f64,
            }
        })
        .collect();
    let spec: &Feature = &data.features()[feature];
    PdCurve {
        feature: spec.name.clone(),
        labels: grid.iter().map(|&v| spec.format_value(v)).collect(),
        points,
    }
}

/// Final-model summary averaged over several independently seeded forests
/// trained on the full data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnalysis {
    pub setting: ForestSetting,
    pub repeats: usize,
    pub full: Metrics,
    /// `None` when no forest had out-of-bag rows (sample_frac = 1).
    pub oob: Option<Metrics>,
    pub importance: Vec<FeatureImportance>,
    pub pdp: Vec<PdCurve>,
}

type RunOutput = (Metrics, Option<Metrics>, Vec<FeatureImportance>, Vec<PdCurve>);

pub fn analyze_final(data: &Dataset, setting: &ForestSetting, repeats: usize, seed: u64, pdp_points: usize) -> Result<FinalAnalysis> {
    if repeats == 0 {
        return Err(Error::Invalid("final model needs at least one repeat".into()));
    }
    let grids: Vec<Vec<f64>> = (0..data.n_features()).map(|f| default_grid(data, f, pdp_points)).collect();
    let runs: Vec<RunOutput> = (0..repeats)
        .map(|r| {
            let run_seed = derive_seed(seed, r as u64);
            let model = train_forest(data, setting, run_seed)?;
            let full = metrics(data.target(), &model.predict_all(data));
            let (obs, pred): (Vec<f64>, Vec<f64>) = model
                .oob_predictions()
                .iter()
                .zip(data.target())
                .filter_map(|(p, &y)| p.map(|p| (y, p)))
                .unzip();
            let oob = (!obs.is_empty()).then(|| metrics(&obs, &pred));
            let importance = variable_importance(&model, data, derive_seed(run_seed, u64::MAX));
            let pdp = grids.iter().enumerate().map(|(f, g)| partial_dependence(&model, data, f, g)).collect();
            Ok((full, oob, importance, pdp))
        })
        .collect::<Result<_>>()?;

    let n = repeats as f64;
    let oobs: Vec<Metrics> = runs.iter().filter_map(|r| r.1).collect();
    let importance = (0..data.n_features())
        .map(|f| {
            let perms: Vec<f64> = runs.iter().filter_map(|r| r.2[f].permutation).collect();
            FeatureImportance {
                feature: data.features()[f].name.clone(),
                permutation: (!perms.is_empty()).then(|| perms.iter().sum::<f64>() / perms.len() as f64),
                impurity: runs.iter().map(|r| r.2[f].impurity).sum::<f64>() / n,
            }
        })
        .collect();
    let pdp = (0..data.n_features())
        .map(|f| {
            let mut curve = runs[0].3[f].clone();
            for (j, point) in curve.points.iter_mut().enumerate() {
                point.mean_prediction = runs.iter().map(|r| r.3[f].points[j].mean_prediction).sum::<f64>() / n;
            }
            curve
        })
        .collect();
    Ok(FinalAnalysis {
        setting: *setting,
        repeats,
        full: mean_metrics(&runs.iter().map(|r| r.0).collect::<Vec<_>>()),
        oob: (!oobs.is_empty()).then(|| mean_metrics(&oobs)),
        importance,
        pdp,
    })
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `feature,permutation,impurity`; permutation is empty when unavailable.
pub fn write_importance(path: impl AsRef<Path>, importance: &[FeatureImportance]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["feature", "permutation", "impurity"])?;
    for imp in importance {
        w.write_record([imp.feature.clone(), opt(imp.permutation), imp.impurity.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `feature,value,mean_prediction`, categorical values by level label.
pub fn write_pdp(path: impl AsRef<Path>, curves: &[PdCurve]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["feature", "value", "mean_prediction"])?;
    for curve in curves {
        for (label, point) in curve.labels.iter().zip(&curve.points) {
            w.write_record([curve.feature.clone(), label.clone(), point.mean_prediction.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Error table `model,sample,mae,rmse,r2`: the selected setting's
/// cross-validation averages and the final model's full and out-of-bag fit.
pub fn write_error_table(path: impl AsRef<Path>, tuning: Option<&TuningReport>, final_model: &FinalAnalysis) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["model", "sample", "mae", "rmse", "r2"])?;
    let mut row = |model: &str, sample: &str, m: Option<&Metrics>| -> Result<()> {
        let cells = match m {
            Some(m) => [m.mae.to_string(), m.rmse.to_string(), m.r2.to_string()],
            None => Default::default(),
        };
        w.write_record([model, sample, &cells[0], &cells[1], &cells[2]])?;
        Ok(())
    };
    if let Some(report) = tuning {
        let SettingScore {
            training, validation, test, ..
        } = report.best_score();
        row("cross-validation", "training", Some(training))?;
        row("cross-validation", "validation", Some(validation))?;
        row("cross-validation", "test", Some(test))?;
    }
    row("final", "full", Some(&final_model.full))?;
    row("final", "out-of-bag", final_model.oob.as_ref())?;
    w.flush().map_err(|e| Error::io(path, e))
}
