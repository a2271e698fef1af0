//! Random forest classifier with Gini splits, bootstrap sampling and an
//! `mtry` grid search scored by cross-validated AUC.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, N_ATTRS};
use crate::metrics::roc_auc_labels;
use crate::seed::derive_seed;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub mtry_grid: Vec<usize>,
    pub cv_folds: usize,
    pub min_node_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_trees: 500,
            mtry_grid: vec![3, 5, 10, 15, 20, 27],
            cv_folds: 10,
            min_node_size: 1,
            seed: 20160101,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config("cv_folds must be at least 2".into()));
        }
        if self.mtry_grid.is_empty() || self.mtry_grid.contains(&0) {
            return Err(Error::Config("mtry_grid needs positive entries".into()));
        }
        if self.min_node_size == 0 {
            return Err(Error::Config("min_node_size must be at least 1".into()));
        }
        Ok(())
    }

    /// The grid limited to `n_features`, sorted and without duplicates.
    pub fn effective_grid(&self, n_features: usize) -> Vec<usize> {
        let mut grid: Vec<usize> = self.mtry_grid.iter().map(|&m| m.min(n_features).max(1)).collect();
        grid.sort_unstable();
        grid.dedup();
        grid
    }
}

/// Rows of a feature matrix with binary labels (`true` = ADR).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    pub values: Vec<f64>,
    pub labels: Vec<bool>,
}

impl Dataset {
    pub fn new(n_features: usize, values: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if values.len() != n_features * labels.len() {
            return Err(Error::Config("feature matrix shape mismatch".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("feature values must be finite".into()));
        }
        Ok(Dataset {
            n_features,
            values,
            labels,
        })
    }

    /// Selects 1-based attribute `columns` from labelled vectors.
    pub fn from_vectors(vectors: &[FeatureVector], columns: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(vectors.len() * columns.len());
        let mut labels = Vec::with_capacity(vectors.len());
        for v in vectors {
            values.extend(columns.iter().map(|&k| v.attr(k)));
            labels.push(v.pair.label.is_adr());
        }
        Dataset::new(columns.len(), values, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    fn value(&self, i: usize, f: usize) -> f64 {
        self.values[i * self.n_features + f]
    }

    fn subset(&self, rows: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(rows.len() * self.n_features);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Dataset {
            n_features: self.n_features,
            values,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l).count();
        (pos, self.len() - pos)
    }
}

pub fn gini(n_pos: usize, n_neg: usize) -> f64 {
    let n = n_pos + n_neg;
    if n == 0 {
        return 0.0;
    }
    let p = n_pos as f64 / n as f64;
    let q = n_neg as f64 / n as f64;
    1.0 - p * p - q * q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Split feature, or `None` for a leaf.
    pub feature: Option<u32>,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub n_pos: u32,
    pub n_neg: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Majority class of the leaf reached by `x`; ties vote nonADR.
    pub fn vote(&self, x: &[f64]) -> bool {
        let mut node = &self.nodes[0];
        while let Some(f) = node.feature {
            node = if x[f as usize] <= node.threshold {
                &self.nodes[node.left as usize]
            } else {
                &self.nodes[node.right as usize]
            };
        }
        node.n_pos > node.n_neg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub mtry: usize,
    /// Mean fold AUC over folds containing both classes.
    pub mean_auc: Option<f64>,
    pub sd_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub version: u32,
    pub config: TrainConfig,
    /// 1-based attribute numbers the forest was trained on, when known.
    pub columns: Vec<usize>,
    pub n_features: usize,
    pub chosen_mtry: usize,
    pub cv: Vec<CvScore>,
    pub importance: Vec<f64>,
    pub trees: Vec<Tree>,
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

struct Split {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

fn best_split(
    data: &Dataset,
    rows: &[usize],
    features: &[usize],
    n_pos: usize,
    scratch: &mut Vec<(f64, bool)>,
) -> Option<Split> {
    let n = rows.len();
    let parent = n as f64 * gini(n_pos, n - n_pos);
    let mut best: Option<Split> = None;
    for &f in features {
        scratch.clear();
        scratch.extend(rows.iter().map(|&i| (data.value(i, f), data.labels[i])));
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut lp, mut ln) = (0usize, 0usize);
        for i in 0..n - 1 {
            if scratch[i].1 {
                lp += 1;
            } else {
                ln += 1;
            }
            let (lo, hi) = (scratch[i].0, scratch[i + 1].0);
            if lo == hi {
                continue;
            }
            let nl = lp + ln;
            let nr = n - nl;
            let rp = n_pos - lp;
            let decrease = parent - nl as f64 * gini(lp, ln) - nr as f64 * gini(rp, nr - rp);
            if decrease > 0.0 && best.as_ref().is_none_or(|b| decrease > b.decrease) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if lo < mid && mid < hi { mid } else { lo };
                best = Some(Split {
                    feature: f,
                    threshold,
                    decrease,
                });
            }
        }
    }
    best
}

fn grow_tree(
    data: &Dataset,
    mtry: usize,
    min_node_size: usize,
    rng: &mut ChaCha8Rng,
    importance: &mut [f64],
) -> Tree {
    let n = data.len();
    let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut nodes: Vec<Node> = Vec::new();
    let mut scratch = Vec::with_capacity(n);
    // (node index, start, end) ranges into `rows`
    let mut stack = vec![(0usize, 0usize, n)];
    nodes.push(Node {
        feature: None,
        threshold: 0.0,
        left: 0,
        right: 0,
        n_pos: 0,
        n_neg: 0,
    });
    while let Some((id, start, end)) = stack.pop() {
        let slice = &mut rows[start..end];
        let n_pos = slice.iter().filter(|&&i| data.labels[i]).count();
        let size = slice.len();
        nodes[id].n_pos = n_pos as u32;
        nodes[id].n_neg = (size - n_pos) as u32;
        if size <= min_node_size || n_pos == 0 || n_pos == size {
            continue;
        }
        let mut features = sample(rng, data.n_features, mtry).into_vec();
        features.sort_unstable();
        let Some(split) = best_split(data, slice, &features, n_pos, &mut scratch) else {
            continue;
        };
        importance[split.feature] += split.decrease;
        let mut mid = 0;
        for i in 0..size {
            if data.value(slice[i], split.feature) <= split.threshold {
                slice.swap(i, mid);
                mid += 1;
            }
        }
        let left = nodes.len();
        for _ in 0..2 {
            nodes.push(Node {
                feature: None,
                threshold: 0.0,
                left: 0,
                right: 0,
                n_pos: 0,
                n_neg: 0,
            });
        }
        nodes[id].feature = Some(split.feature as u32);
        nodes[id].threshold = split.threshold;
        nodes[id].left = left as u32;
        nodes[id].right = left as u32 + 1;
        stack.push((left + 1, start + mid, end));
        stack.push((left, start, start + mid));
    }
    Tree { nodes }
}

fn fit_fixed(data: &Dataset, config: &TrainConfig, mtry: usize, seed: u64) -> (Vec<Tree>, Vec<f64>) {
    let results: Vec<(Tree, Vec<f64>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let mut imp = vec![0.0; data.n_features];
            let tree = grow_tree(data, mtry, config.min_node_size, &mut rng, &mut imp);
            (tree, imp)
        })
        .collect();
    let mut importance = vec![0.0; data.n_features];
    let mut trees = Vec::with_capacity(results.len());
    for (tree, imp) in results {
        for (a, b) in importance.iter_mut().zip(imp) {
            *a += b;
        }
        trees.push(tree);
    }
    for a in &mut importance {
        *a /= config.n_trees as f64;
    }
    (trees, importance)
}

fn vote_fraction(trees: &[Tree], x: &[f64]) -> f64 {
    let votes = trees.iter().filter(|t| t.vote(x)).count();
    votes as f64 / trees.len() as f64
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "folds", 0, 0));
    let mut folds = vec![0; labels.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            folds[i] = j % k;
        }
    }
    folds
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        None
    } else {
        Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    };
    (Some(mean), sd)
}

impl Forest {
    pub fn fit(data: &Dataset, config: &TrainConfig) -> Result<Forest> {
        config.validate()?;
        let (pos, neg) = data.class_counts();
        if pos == 0 || neg == 0 {
            return Err(Error::DegenerateLabels(format!(
                "training set has {pos} ADR and {neg} nonADR pairs"
            )));
        }
        let grid = config.effective_grid(data.n_features);
        let folds = stratified_folds(&data.labels, config.cv_folds, config.seed);
        let mut cv = Vec::with_capacity(grid.len());
        for &mtry in &grid {
            let mut aucs = Vec::new();
            for fold in 0..config.cv_folds {
                let train: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != fold).collect();
                let test: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == fold).collect();
                let train_set = data.subset(&train);
                let (tp, tn) = train_set.class_counts();
                if tp == 0 || tn == 0 {
                    continue;
                }
                let seed = derive_seed(config.seed, "cv", mtry as u64, fold as u64);
                let (trees, _) = fit_fixed(&train_set, config, mtry, seed);
                let scores: Vec<f64> = test.iter().map(|&i| vote_fraction(&trees, data.row(i))).collect();
                let labels: Vec<bool> = test.iter().map(|&i| data.labels[i]).collect();
                if let Ok(auc) = roc_auc_labels(&scores, &labels) {
                    aucs.push(auc);
                }
            }
            let (mean_auc, sd_auc) = mean_sd(&aucs);
            cv.push(CvScore { mtry, mean_auc, sd_auc });
        }
        let mut chosen = &cv[0];
        for s in &cv[1..] {
            if s.mean_auc.unwrap_or(f64::NEG_INFINITY) > chosen.mean_auc.unwrap_or(f64::NEG_INFINITY) {
                chosen = s;
            }
        }
        let chosen_mtry = chosen.mtry;
        Ok(Forest::fit_with_mtry(data, config, chosen_mtry, cv))
    }

    /// Fits the final forest on all rows with a fixed `mtry`.
    pub fn fit_with_mtry(data: &Dataset, config: &TrainConfig, mtry: usize, cv: Vec<CvScore>) -> Forest {
        let mtry = mtry.clamp(1, data.n_features);
        let (trees, importance) = fit_fixed(data, config, mtry, derive_seed(config.seed, "final", 0, 0));
        Forest {
            version: FORMAT_VERSION,
            config: config.clone(),
            columns: Vec::new(),
            n_features: data.n_features,
            chosen_mtry: mtry,
            cv,
            importance,
            trees,
        }
    }

    pub fn with_columns(mut self, columns: &[usize]) -> Self {
        self.columns = columns.to_vec();
        self
    }

    /// Fraction of trees voting ADR for a row of the training columns.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        vote_fraction(&self.trees, x)
    }

    /// Scores a full feature vector, selecting the training columns.
    pub fn predict_vector(&self, v: &FeatureVector) -> f64 {
        let row: Vec<f64> = if self.columns.is_empty() {
            v.attrs[..self.n_features.min(N_ATTRS)].to_vec()
        } else {
            self.columns.iter().map(|&k| v.attr(k)).collect()
        };
        self.predict_proba(&row)
    }

    /// `(feature index, mean Gini decrease)` sorted by decreasing importance.
    pub fn ranked_importance(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self.importance.iter().copied().enumerate().collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    pub fn cv_score(&self) -> Option<&CvScore> {
        self.cv.iter().find(|s| s.mtry == self.chosen_mtry)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        let forest: Forest = serde_json::from_str(text).map_err(|e| Error::format("forest", e.to_string()))?;
        if forest.version != FORMAT_VERSION {
            return Err(Error::format("forest", format!("unsupported version {}", forest.version)));
        }
        Ok(forest)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Forest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Forest::from_json(&text)
    }
}
