//! Random-forest classifier (CART, Gini) and permutation feature importance.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features tried per split; `None` means floor(sqrt(D)).
    pub mtry: Option<usize>,
    pub n_repeats: usize,
    pub holdout_frac: f64,
    /// Cap on the number of rows used (a seeded subsample), `None` for all.
    pub max_samples: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 12,
            min_samples_split: 2,
            mtry: None,
            n_repeats: 5,
            holdout_frac: 0.25,
            max_samples: Some(4000),
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.n_repeats == 0 {
            return Err(Error::Config("forest n_trees, max_depth and n_repeats must be positive".into()));
        }
        if !(self.holdout_frac > 0.0 && self.holdout_frac < 1.0) {
            return Err(Error::Config(format!("holdout_frac must lie in (0, 1), got {}", self.holdout_frac)));
        }
        if self.mtry == Some(0) {
            return Err(Error::Config("mtry must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(c) => return c,
                Node::Split { feature, threshold, left, right } => {
                    k = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

fn majority(counts: &[usize]) -> usize {
    // lowest class on ties
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    n_classes: usize,
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut rng::SeededRng) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        for &i in idx.iter() {
            counts[self.y[i]] += 1;
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(majority(&counts)));
        let pure = counts.iter().filter(|c| **c > 0).count() <= 1;
        if pure || depth >= self.cfg.max_depth || idx.len() < self.cfg.min_samples_split.max(2) {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(idx, &counts, rng) else {
            return id;
        };
        // partition in place: left part holds x <= threshold
        let mut mid = 0;
        for k in 0..idx.len() {
            if self.x[[idx[k], feature]] <= threshold {
                idx.swap(k, mid);
                mid += 1;
            }
        }
        let (l, r) = idx.split_at_mut(mid);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    fn best_split(&self, idx: &[usize], counts: &[usize], rng: &mut rng::SeededRng) -> Option<(usize, f64)> {
        let n = idx.len() as f64;
        // maximize sum of c^2/n over both children (equivalent to minimizing weighted Gini)
        let parent: f64 = counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n;
        let mut best: Option<(f64, usize, f64)> = None;
        let d = self.x.ncols();
        let mut vals: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for feature in sample(rng, d, self.mtry.min(d)).into_iter() {
            vals.clear();
            vals.extend(idx.iter().map(|&i| (self.x[[i, feature]], self.y[i])));
            vals.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0usize; self.n_classes];
            let mut sq_left = 0.0;
            let mut sq_right: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
            let mut right = counts.to_vec();
            for k in 0..vals.len() - 1 {
                let c = vals[k].1;
                sq_left += (2 * left[c] + 1) as f64;
                left[c] += 1;
                sq_right -= (2 * right[c] - 1) as f64;
                right[c] -= 1;
                if vals[k].0 == vals[k + 1].0 {
                    continue;
                }
                let nl = (k + 1) as f64;
                let score = sq_left / nl + sq_right / (n - nl);
                if score > parent + 1e-12 && best.is_none_or(|b| score > b.0) {
                    best = Some((score, feature, 0.5 * (vals[k].0 + vals[k + 1].0)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<Tree>,
    n_classes: usize,
    n_features: usize,
}

impl RandomForest {
    /// Fit on rows of `x` with class labels `y`; trees train in parallel with
    /// per-tree seeded substreams.
    pub fn fit(x: ArrayView2<'_, f64>, y: &[usize], cfg: &ForestConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::Input(format!("{} rows for {} labels", x.nrows(), y.len())));
        }
        let n_classes = y.iter().max().map_or(0, |m| m + 1);
        let distinct = {
            let mut seen = vec![false; n_classes];
            y.iter().for_each(|&c| seen[c] = true);
            seen.iter().filter(|s| **s).count()
        };
        if distinct < 2 {
            return Err(Error::Input("target has a single class; nothing to attribute".into()));
        }
        let d = x.ncols();
        let mtry = cfg.mtry.unwrap_or(((d as f64).sqrt().floor() as usize).max(1));
        let n = y.len();
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut g = rng::indexed_substream(seed, rng::streams::FOREST, t as u64);
                let mut idx: Vec<usize> = (0..n).map(|_| g.random_range(0..n)).collect();
                let mut b = Builder { x, y, n_classes, cfg, mtry, nodes: Vec::new() };
                b.build(&mut idx, 0, &mut g);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Self { trees, n_classes, n_features: d })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Majority vote, lowest class on ties.
    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict_row(row)] += 1;
        }
        majority(&votes)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        x.rows()
            .into_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.predict_row(s),
                None => self.predict_row(&r.to_vec()),
            })
            .collect()
    }

    pub fn accuracy(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> f64 {
        let hits = self.predict(x).iter().zip(y).filter(|(p, t)| p == t).count();
        hits as f64 / y.len() as f64
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    /// Mean decrease in held-out accuracy over the permutation repeats.
    pub importance: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    /// Sorted by decreasing importance; ties keep feature order.
    pub ranked: Vec<FeatureImportance>,
    pub baseline_accuracy: f64,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// Fit a forest on a seeded training part of the rows and rank features by the
/// drop in held-out accuracy when their column is permuted.
pub fn permutation_importance(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    names: &[&str],
    cfg: &ForestConfig,
    seed: u64,
) -> Result<ImportanceReport> {
    cfg.validate()?;
    if names.len() != x.ncols() {
        return Err(Error::Input(format!("{} names for {} features", names.len(), x.ncols())));
    }
    if x.nrows() != y.len() {
        return Err(Error::Input(format!("{} rows for {} labels", x.nrows(), y.len())));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.shuffle(&mut rng::substream(seed, "forest-holdout"));
    if let Some(m) = cfg.max_samples {
        order.truncate(m);
    }
    let n_hold = ((order.len() as f64) * cfg.holdout_frac).round() as usize;
    if n_hold == 0 || n_hold >= order.len() {
        return Err(Error::Input(format!("too few rows ({}) for a held-out split", order.len())));
    }
    let (hold, train) = order.split_at(n_hold);
    let x_train = x.select(Axis(0), train);
    let y_train: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let x_hold = x.select(Axis(0), hold);
    let y_hold: Vec<usize> = hold.iter().map(|&i| y[i]).collect();
    let forest = RandomForest::fit(x_train.view(), &y_train, cfg, seed)?;
    let base = forest.accuracy(x_hold.view(), &y_hold);
    let d = x.ncols();
    let k = cfg.n_repeats;
    let drops: Vec<f64> = (0..d * k)
        .into_par_iter()
        .map(|task| {
            let (f, _) = (task / k, task % k);
            let mut g = rng::indexed_substream(seed, "forest-permute", task as u64);
            let mut perm: Vec<usize> = (0..x_hold.nrows()).collect();
            perm.shuffle(&mut g);
            let mut xp: Array2<f64> = x_hold.clone();
            for (r, &src) in perm.iter().enumerate() {
                xp[[r, f]] = x_hold[[src, f]];
            }
            base - forest.accuracy(xp.view(), &y_hold)
        })
        .collect();
    let mut ranked: Vec<FeatureImportance> = (0..d)
        .map(|f| {
            let v = &drops[f * k..(f + 1) * k];
            let m = v.iter().sum::<f64>() / k as f64;
            let var = if k > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1) as f64 } else { 0.0 };
            FeatureImportance { feature: names[f].to_string(), importance: m, std: var.sqrt() }
        })
        .collect();
    ranked.sort_by(|a, b| b.importance.total_cmp(&a.importance));
    Ok(ImportanceReport {
        ranked,
        baseline_accuracy: base,
        n_train: train.len(),
        n_holdout: hold.len(),
    })
}
