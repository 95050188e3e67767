use rand::seq::index::sample;
use rand::Rng;

use super::dataset::Dataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    /// Numeric: `x <= threshold` goes left.
    AtMost(f64),
    /// Categorical: levels whose bit is set go left, all others right.
    InSet(u64),
}

impl Rule {
    fn goes_left(&self, x: f64) -> bool {
        match *self {
            Rule::AtMost(t) => x <= t,
            Rule::InSet(mask) => mask >> (x as u32) & 1 == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf { value: f64, size: usize },
    Split { feature: usize, rule: Rule, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Prediction for one row; `x` holds one value per feature.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, rule, left, right } => {
                    at = if rule.goes_left(x[*feature]) { *left } else { *right };
                }
            }
        }
    }

    pub fn leaf_sizes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { size, .. } => Some(*size),
                Node::Split { .. } => None,
            })
            .collect()
    }

    pub fn uses_feature(&self, feature: usize) -> bool {
        self.nodes.iter().any(|n| matches!(n, Node::Split { feature: f, .. } if *f == feature))
    }
}

struct Candidate {
    feature: usize,
    rule: Rule,
    gain: f64,
}

fn better(best: &Option<Candidate>, gain: f64) -> bool {
    best.as_ref().is_none_or(|b| gain > b.gain)
}

fn split_score(sum_l: f64, n_l: usize, sum_r: f64, n_r: usize) -> f64 {
    sum_l * sum_l / n_l as f64 + sum_r * sum_r / n_r as f64
}

/// Best threshold on a numeric feature; `resid` is centered on the node mean
/// so that the parent term vanishes.
fn best_numeric(column: &[f64], rows: &[usize], resid: &[f64], min_node: usize) -> Option<(f64, f64)> {
    let n = rows.len();
    let mut pairs: Vec<(f64, f64)> = rows.iter().zip(resid).map(|(&i, &r)| (column[i], r)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let parent = total * total / n as f64;
    let mut best: Option<(f64, f64)> = None;
    let mut sum_l = 0.0;
    for k in 0..n - 1 {
        sum_l += pairs[k].1;
        let n_l = k + 1;
        if n_l < min_node || n - n_l < min_node || pairs[k].0 == pairs[k + 1].0 {
            continue;
        }
        let gain = split_score(sum_l, n_l, total - sum_l, n - n_l) - parent;
        if best.is_none_or(|b| gain > b.1) {
            let threshold = pairs[k].0 + (pairs[k + 1].0 - pairs[k].0) / 2.0;
            best = Some((threshold, gain));
        }
    }
    best
}

/// Levels are ranked by their mean residual in the node and then split like
/// an ordered variable.
fn best_categorical(column: &[f64], rows: &[usize], resid: &[f64], levels: usize, min_node: usize) -> Option<(u64, f64)> {
    let n = rows.len();
    let mut count = vec![0usize; levels];
    let mut sum = vec![0.0; levels];
    for (&i, &r) in rows.iter().zip(resid) {
        let l = column[i] as usize;
        count[l] += 1;
        sum[l] += r;
    }
    let mut present: Vec<usize> = (0..levels).filter(|&l| count[l] > 0).collect();
    present.sort_by(|&a, &b| (sum[a] / count[a] as f64).total_cmp(&(sum[b] / count[b] as f64)).then(a.cmp(&b)));
    let total: f64 = sum.iter().sum();
    let parent = total * total / n as f64;
    let mut best: Option<(u64, f64)> = None;
    let (mut sum_l, mut n_l, mut mask) = (0.0, 0usize, 0u64);
    for &l in present.iter().take(present.len().saturating_sub(1)) {
        sum_l += sum[l];
        n_l += count[l];
        mask |= 1 << l;
        if n_l < min_node || n - n_l < min_node {
            continue;
        }
        let gain = split_score(sum_l, n_l, total - sum_l, n - n_l) - parent;
        if best.is_none_or(|b| gain > b.1) {
            best = Some((mask, gain));
        }
    }
    best
}

/// Grows one regression tree on `rows` and returns it together with the
/// squared-error reduction credited to each feature.
pub(crate) fn grow(data: &Dataset, rows: Vec<usize>, mtry: usize, min_node: usize, rng: &mut impl Rng) -> (Tree, Vec<f64>) {
    let p = data.n_features();
    let y = data.target();
    let mut gains = vec![0.0; p];
    let mut nodes = Vec::new();
    // (node slot, rows) in depth-first order
    let mut stack = vec![(0usize, rows)];
    nodes.push(Node::Leaf { value: 0.0, size: 0 });
    while let Some((slot, rows)) = stack.pop() {
        let n = rows.len();
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
        let leaf = Node::Leaf { value: mean, size: n };
        if n < 2 * min_node {
            nodes[slot] = leaf;
            continue;
        }
        let resid: Vec<f64> = rows.iter().map(|&i| y[i] - mean).collect();
        let sse: f64 = resid.iter().map(|r| r * r).sum();
        let mut tried = sample(rng, p, mtry.min(p)).into_vec();
        tried.sort_unstable();
        let mut best: Option<Candidate> = None;
        for f in tried {
            let column = data.column(f);
            let found = match data.features()[f].levels() {
                None => best_numeric(column, &rows, &resid, min_node).map(|(t, g)| (Rule::AtMost(t), g)),
                Some(levels) => best_categorical(column, &rows, &resid, levels.len(), min_node).map(|(m, g)| (Rule::InSet(m), g)),
            };
            if let Some((rule, gain)) = found {
                if better(&best, gain) {
                    best = Some(Candidate { feature: f, rule, gain });
                }
            }
        }
        let Some(best) = best.filter(|b| b.gain > 1e-12 * sse) else {
            nodes[slot] = leaf;
            continue;
        };
        let column = data.column(best.feature);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| best.rule.goes_left(column[i]));
        gains[best.feature] += best.gain;
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf { value: 0.0, size: 0 });
        nodes.push(Node::Leaf { value: 0.0, size: 0 });
        nodes[slot] = Node::Split {
            feature: best.feature,
            rule: best.rule,
            left,
            right,
        };
        stack.push((right, right_rows));
        stack.push((left, left_rows));
    }
    (Tree { nodes }, gains)
}
