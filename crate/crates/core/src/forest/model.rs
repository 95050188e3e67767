use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::tree::{grow, Tree};
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestSetting {
    /// Features tried at each split.
    pub mtry: usize,
    /// Smallest allowed leaf.
    pub min_node: usize,
    /// Per-tree subsample share, drawn without replacement.
    pub sample_frac: f64,
    pub n_trees: usize,
}

pub const MTRY_GRID: [usize; 6] = [1, 2, 3, 4, 5, 6];
pub const MIN_NODE_GRID: [usize; 6] = [5, 10, 15, 20, 25, 30];
pub const SAMPLE_FRAC_GRID: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

impl ForestSetting {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.mtry == 0 || self.mtry > n_features {
            return Err(Error::Invalid(format!("mtry {} outside 1..={n_features}", self.mtry)));
        }
        if self.min_node == 0 {
            return Err(Error::Invalid("min_node must be positive".into()));
        }
        if !(self.sample_frac > 0.0 && self.sample_frac <= 1.0) {
            return Err(Error::Invalid(format!("sample_frac {} outside (0, 1]", self.sample_frac)));
        }
        if self.n_trees == 0 {
            return Err(Error::Invalid("a forest needs at least one tree".into()));
        }
        Ok(())
    }

    pub fn subsample_size(&self, n: usize) -> usize {
        ((self.sample_frac * n as f64).round() as usize).clamp(1, n)
    }
}

/// The full 6 × 6 × 6 tuning grid, mtry varying slowest.
pub fn full_grid(n_trees: usize) -> Vec<ForestSetting> {
    let mut grid = Vec::with_capacity(216);
    for &mtry in &MTRY_GRID {
        for &min_node in &MIN_NODE_GRID {
            for &sample_frac in &SAMPLE_FRAC_GRID {
                grid.push(ForestSetting {
                    mtry,
                    min_node,
                    sample_frac,
                    n_trees,
                });
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub setting: ForestSetting,
    pub seed: u64,
    trees: Vec<Tree>,
    /// Training rows of each tree, as sorted positions in the data.
    in_bag: Vec<Vec<usize>>,
    /// Squared-error reduction per feature, summed over trees.
    split_gains: Vec<f64>,
    oob: Vec<Option<f64>>,
}

/// Trains `setting.n_trees` trees, each on its own subsample. Subsamples are
/// drawn on id order and tree `k` uses the stream derived from `(seed, k)`,
/// so the result depends neither on row order nor on thread scheduling.
pub fn train_forest(data: &Dataset, setting: &ForestSetting, seed: u64) -> Result<ForestModel> {
    setting.validate(data.n_features())?;
    let n = data.len();
    let order = data.id_order();
    let size = setting.subsample_size(n);
    let grown: Vec<(Tree, Vec<f64>, Vec<usize>)> = (0..setting.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(seed, k as u64);
            let mut picks = sample(&mut rng, n, size).into_vec();
            picks.sort_unstable();
            let rows: Vec<usize> = picks.into_iter().map(|p| order[p]).collect();
            let (tree, gains) = grow(data, rows.clone(), setting.mtry, setting.min_node, &mut rng);
            let mut bag = rows;
            bag.sort_unstable();
            (tree, gains, bag)
        })
        .collect();

    let mut split_gains = vec![0.0; data.n_features()];
    let mut trees = Vec::with_capacity(grown.len());
    let mut in_bag = Vec::with_capacity(grown.len());
    for (tree, gains, bag) in grown {
        for (total, g) in split_gains.iter_mut().zip(gains) {
            *total += g;
        }
        trees.push(tree);
        in_bag.push(bag);
    }
    let mut model = ForestModel {
        setting: *setting,
        seed,
        trees,
        in_bag,
        split_gains,
        oob: Vec::new(),
    };
    model.oob = model.compute_oob(data);
    Ok(model)
}

impl ForestModel {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn in_bag(&self, tree: usize) -> &[usize] {
        &self.in_bag[tree]
    }

    /// Data positions not used to grow `tree`.
    pub fn out_of_bag(&self, tree: usize, n: usize) -> Vec<usize> {
        let bag = &self.in_bag[tree];
        (0..n).filter(|i| bag.binary_search(i).is_err()).collect()
    }

    pub fn split_gains(&self) -> &[f64] {
        &self.split_gains
    }

    /// Mean of the tree predictions.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_all(&self, data: &Dataset) -> Vec<f64> {
        (0..data.len()).into_par_iter().map(|i| self.predict(&data.row(i))).collect()
    }

    /// Out-of-bag predictions for the training rows; `None` where every
    /// tree saw the row.
    pub fn oob_predictions(&self) -> &[Option<f64>] {
        &self.oob
    }

    /// Whether any row has an out-of-bag prediction.
    pub fn has_oob(&self) -> bool {
        self.oob.iter().any(Option::is_some)
    }

    fn compute_oob(&self, data: &Dataset) -> Vec<Option<f64>> {
        let n = data.len();
        let mut sum = vec![0.0; n];
        let mut count = vec![0usize; n];
        for (k, tree) in self.trees.iter().enumerate() {
            for i in self.out_of_bag(k, n) {
                sum[i] += tree.predict(&data.row(i));
                count[i] += 1;
            }
        }
        sum.into_iter().zip(count).map(|(s, c)| (c > 0).then(|| s / c as f64)).collect()
    }
}
