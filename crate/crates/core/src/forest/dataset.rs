use std::collections::BTreeSet;

use chrono::{Datelike, Timelike};
use serde::{Deserialize, Serialize};

use crate::data::{AdSchedule, Channel, Motive, Position, VisitSeries};
use crate::decompose::DecompositionFit;
use crate::error::{Error, Result};

/// Categorical codes are stored as level indices and split with a 64-bit
/// level mask.
pub const MAX_LEVELS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    Numeric,
    Categorical(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

impl Feature {
    pub fn numeric(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Categorical(levels.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical(_))
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical(levels) => Some(levels),
            FeatureKind::Numeric => None,
        }
    }

    /// Printable form of a stored value.
    pub fn format_value(&self, value: f64) -> String {
        match &self.kind {
            FeatureKind::Categorical(levels) => levels[value as usize].clone(),
            FeatureKind::Numeric => value.to_string(),
        }
    }
}

/// Column-major regression data. Rows carry stable ids; subsampling is
/// defined on id order so that the input row order does not matter.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Feature>,
    ids: Vec<u64>,
    columns: Vec<Vec<f64>>,
    target: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Vec<Feature>, ids: Vec<u64>, columns: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        let n = target.len();
        if n == 0 {
            return Err(Error::Invalid("forest data needs at least one row".into()));
        }
        if features.is_empty() || features.len() != columns.len() {
            return Err(Error::Invalid("one column per feature is required".into()));
        }
        if ids.len() != n || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Invalid("columns, ids and target differ in length".into()));
        }
        if ids.iter().collect::<BTreeSet<_>>().len() != n {
            return Err(Error::Invalid("row ids must be unique".into()));
        }
        if target.iter().any(|y| !y.is_finite()) {
            return Err(Error::Invalid("target must be finite".into()));
        }
        for (feature, column) in features.iter().zip(&columns) {
            match &feature.kind {
                FeatureKind::Numeric => {
                    if column.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Invalid(format!("feature {} has non-finite values", feature.name)));
                    }
                }
                FeatureKind::Categorical(levels) => {
                    if levels.is_empty() || levels.len() > MAX_LEVELS {
                        return Err(Error::Invalid(format!("feature {} needs 1..={MAX_LEVELS} levels", feature.name)));
                    }
                    let k = levels.len() as f64;
                    if column.iter().any(|&x| !(x >= 0.0 && x < k && x.fract() == 0.0)) {
                        return Err(Error::Invalid(format!("feature {} has an undeclared level code", feature.name)));
                    }
                }
            }
        }
        Ok(Self {
            features,
            ids,
            columns,
            target,
        })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn column(&self, feature: usize) -> &[f64] {
        &self.columns[feature]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Row positions sorted by id.
    pub fn id_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.ids[i]);
        order
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.clone(),
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
            target: rows.iter().map(|&i| self.target[i]).collect(),
        }
    }
}

pub const DAY_LEVELS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];
pub const MONTH_LEVELS: [&str; 12] = ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdFeatureRow {
    /// Position of the ad in the schedule.
    pub ad_id: usize,
    /// Minutes after local midnight, 0–1439.
    pub time_of_day: u32,
    /// 0 = Monday.
    pub day_of_week: u32,
    /// 0 = January.
    pub month: u32,
    pub channel: Channel,
    pub position: Position,
    pub motive: Motive,
    pub target: f64,
}

/// One row per ad, zero lifts included. Calendar features use the series'
/// UTC offset.
pub fn build_features(fit: &DecompositionFit, ads: &AdSchedule, series: &VisitSeries) -> Result<Vec<AdFeatureRow>> {
    if fit.thetas.len() != ads.len() {
        return Err(Error::Invalid(format!("{} lifts for {} ads", fit.thetas.len(), ads.len())));
    }
    Ok(ads
        .ads()
        .iter()
        .zip(&fit.thetas)
        .enumerate()
        .map(|(ad_id, (ad, &target))| {
            let ts = series.offset_timestamp(ad.end_time);
            AdFeatureRow {
                ad_id,
                time_of_day: ts.hour() * 60 + ts.minute(),
                day_of_week: ts.weekday().num_days_from_monday(),
                month: ts.month0(),
                channel: ad.channel,
                position: ad.position,
                motive: ad.motive,
                target,
            }
        })
        .collect())
}

pub fn ad_features() -> Vec<Feature> {
    vec![
        Feature::numeric("time_of_day"),
        Feature::categorical("day_of_week", &DAY_LEVELS),
        Feature::categorical("month", &MONTH_LEVELS),
        Feature::categorical("channel", Channel::LEVELS),
        Feature::categorical("position", Position::LEVELS),
        Feature::categorical("motive", Motive::LEVELS),
    ]
}

/// Forest data from ad rows; `include_zero` keeps ads with zero lift.
pub fn ad_dataset(rows: &[AdFeatureRow], include_zero: bool) -> Result<Dataset> {
    let rows: Vec<&AdFeatureRow> = rows.iter().filter(|r| include_zero || r.target != 0.0).collect();
    let col = |f: &dyn Fn(&AdFeatureRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
    Dataset::new(
        ad_features(),
        rows.iter().map(|r| r.ad_id as u64).collect(),
        vec![
            col(&|r| r.time_of_day as f64),
            col(&|r| r.day_of_week as f64),
            col(&|r| r.month as f64),
            col(&|r| r.channel.index() as f64),
            col(&|r| r.position.index() as f64),
            col(&|r| r.motive.index() as f64),
        ],
        rows.iter().map(|r| r.target).collect(),
    )
}
