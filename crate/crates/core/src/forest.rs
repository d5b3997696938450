//! Random-forest classifier for evolution events, plus the single-tree and
//! majority-class baselines it is compared against.
//!
//! Trees are grown CART-style: Gini impurity, midpoint thresholds, a random
//! feature subset per split, growth until purity, depth, or leaf-size limits.
//! Every source of randomness is derived from one seed, and ties are broken
//! by fixed ordering, so training is bit-reproducible.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{sequence_columns, SequenceSample};
use crate::tracker::EvolutionEvent;

pub const MODEL_FORMAT: &str = "ecoevo-forest";
pub const MODEL_VERSION: u32 = 1;
const MIN_GAIN: f64 = 1e-12;

/// Index of an outgoing event in the fixed class ordering.
pub fn event_class_index(event: EvolutionEvent) -> Option<usize> {
    EvolutionEvent::OUTGOING.iter().position(|&e| e == event)
}

pub fn class_names() -> Vec<String> {
    EvolutionEvent::OUTGOING.iter().map(|e| e.as_str().to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let d = feature_names.len();
        for (i, row) in features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has {} values, expected {d}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("row {i} contains a non-finite value")));
            }
        }
        for (i, &label) in labels.iter().enumerate() {
            if label >= class_names.len() {
                return Err(Error::InvalidArgument(format!("label {label} of row {i} out of range")));
            }
        }
        Ok(Dataset { features, labels, class_names, feature_names })
    }

    /// Dataset over the fixed six-class outgoing-event space.
    pub fn from_samples(samples: &[SequenceSample]) -> Result<Self> {
        let features = samples.iter().map(|s| s.x.clone()).collect();
        let labels = samples
            .iter()
            .map(|s| {
                event_class_index(s.label).ok_or_else(|| {
                    Error::InvalidArgument(format!("label `{}` is not predictable", s.label.as_str()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(features, labels, class_names(), sequence_columns())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    Uniform,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Candidate features per split; `None` means ⌊√d⌋.
    pub features_per_split: Option<usize>,
    pub seed: u64,
    pub class_weighting: ClassWeighting,
    pub bootstrap: bool,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 2,
            features_per_split: None,
            seed: 0,
            class_weighting: ClassWeighting::Balanced,
            bootstrap: true,
        }
    }
}

impl Hyperparameters {
    /// Plain single CART tree on the full training set with every feature as
    /// a split candidate.
    pub fn single_tree(seed: u64) -> Self {
        Hyperparameters {
            n_trees: 1,
            bootstrap: false,
            features_per_split: Some(usize::MAX), // clamped to d at train time
            seed,
            ..Hyperparameters::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Split feature; `None` marks a leaf.
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    /// Number of training samples that reached the node.
    pub cover: f64,
    /// Class-weighted label distribution of those samples.
    pub value: Vec<f64>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.feature.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict_proba(&self, x: &[f64]) -> &[f64] {
        let mut i = 0usize;
        loop {
            let node = &self.nodes[i];
            match node.feature {
                None => return &node.value,
                Some(f) => {
                    i = if x[f] <= node.threshold { node.left } else { node.right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format: String,
    pub version: u32,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub hyperparameters: Hyperparameters,
    pub trees: Vec<DecisionTree>,
}

impl Forest {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features() {
            return Err(Error::InvalidArgument(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.n_features()
            )));
        }
        let mut acc = vec![0.0f64; self.n_classes()];
        for tree in &self.trees {
            for (a, v) in acc.iter_mut().zip(tree.predict_proba(x)) {
                *a += v;
            }
        }
        let nt = self.trees.len() as f64;
        acc.iter_mut().for_each(|v| *v /= nt);
        Ok(acc)
    }

    /// Most probable class (ties: the smaller class index).
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn gini(class_weights: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - class_weights.iter().map(|&w| (w / total) * (w / total)).sum::<f64>()
}

struct TreeBuilder<'a> {
    data: &'a Dataset,
    sample_weight: &'a [f64], // per training row (class weight of its label)
    mtry: usize,
    max_depth: Option<usize>,
    min_samples_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl<'a> TreeBuilder<'a> {
    fn node_stats(&self, samples: &[usize]) -> (Vec<f64>, f64) {
        let mut weights = vec![0.0f64; self.data.n_classes()];
        for &i in samples {
            weights[self.data.labels[i]] += self.sample_weight[i];
        }
        let total = weights.iter().sum();
        (weights, total)
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let (class_weights, total_weight) = self.node_stats(&samples);
        let value: Vec<f64> = class_weights.iter().map(|&w| w / total_weight).collect();
        let cover = samples.len() as f64;
        let node_index = self.nodes.len();
        self.nodes.push(TreeNode {
            feature: None,
            threshold: 0.0,
            left: 0,
            right: 0,
            cover,
            value,
        });

        let pure = class_weights.iter().filter(|&&w| w > 0.0).count() <= 1;
        let depth_capped = self.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || samples.len() < 2 * self.min_samples_leaf {
            return node_index;
        }

        let d = self.data.n_features();
        let mut candidates = rand::seq::index::sample(rng, d, self.mtry).into_vec();
        candidates.sort_unstable();

        let parent_impurity = gini(&class_weights, total_weight);
        let mut best: Option<(f64, usize, f64)> = None; // gain, feature, threshold
        let mut order = samples.clone();
        for &f in &candidates {
            order.sort_by(|&a, &b| self.data.features[a][f].total_cmp(&self.data.features[b][f]));
            let mut left_weights = vec![0.0f64; self.data.n_classes()];
            let mut left_total = 0.0f64;
            for p in 0..order.len() - 1 {
                let i = order[p];
                left_weights[self.data.labels[i]] += self.sample_weight[i];
                left_total += self.sample_weight[i];
                let a = self.data.features[i][f];
                let b = self.data.features[order[p + 1]][f];
                if a == b {
                    continue;
                }
                let left_count = p + 1;
                let right_count = order.len() - left_count;
                if left_count < self.min_samples_leaf || right_count < self.min_samples_leaf {
                    continue;
                }
                let right_total = total_weight - left_total;
                let mut right_weights = class_weights.clone();
                for (rw, lw) in right_weights.iter_mut().zip(&left_weights) {
                    *rw -= lw;
                }
                let gain = parent_impurity
                    - (left_total / total_weight) * gini(&left_weights, left_total)
                    - (right_total / total_weight) * gini(&right_weights, right_total);
                if gain > MIN_GAIN && best.is_none_or(|(bg, _, _)| gain > bg) {
                    // Midpoint, nudged down when rounding lands on the upper
                    // value so that `x <= threshold` splits as counted.
                    let mut threshold = (a + b) / 2.0;
                    if threshold == b {
                        threshold = a;
                    }
                    best = Some((gain, f, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return node_index;
        };
        let (left_samples, right_samples): (Vec<usize>, Vec<usize>) =
            samples.iter().partition(|&&i| self.data.features[i][feature] <= threshold);
        let left = self.grow(left_samples, depth + 1, rng);
        let right = self.grow(right_samples, depth + 1, rng);
        let node = &mut self.nodes[node_index];
        node.feature = Some(feature);
        node.threshold = threshold;
        node.left = left;
        node.right = right;
        node_index
    }
}

fn class_weights(data: &Dataset, weighting: ClassWeighting) -> Vec<f64> {
    let k = data.n_classes();
    match weighting {
        ClassWeighting::Uniform => vec![1.0; k],
        ClassWeighting::Balanced => {
            let mut counts = vec![0usize; k];
            for &l in &data.labels {
                counts[l] += 1;
            }
            let present = counts.iter().filter(|&&c| c > 0).count();
            let n = data.len() as f64;
            counts
                .iter()
                .map(|&c| if c == 0 { 0.0 } else { n / (present as f64 * c as f64) })
                .collect()
        }
    }
}

fn train_tree(data: &Dataset, weights: &[f64], hp: &Hyperparameters, seed: u64) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.len();
    let samples: Vec<usize> = if hp.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let d = data.n_features();
    let mtry = hp
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
        .clamp(1, d);
    let mut builder = TreeBuilder {
        data,
        sample_weight: weights,
        mtry,
        max_depth: hp.max_depth,
        min_samples_leaf: hp.min_samples_leaf.max(1),
        nodes: Vec::new(),
    };
    builder.grow(samples, 0, &mut rng);
    DecisionTree { nodes: builder.nodes }
}

pub fn train(data: &Dataset, hp: &Hyperparameters) -> Result<Forest> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if data.n_features() == 0 {
        return Err(Error::InvalidArgument("dataset has no features".into()));
    }
    if hp.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be >= 1".into()));
    }
    let cw = class_weights(data, hp.class_weighting);
    let sample_weight: Vec<f64> = data.labels.iter().map(|&l| cw[l]).collect();
    // Tree seeds are drawn sequentially up front so that parallel training
    // stays deterministic.
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let tree_seeds: Vec<u64> = (0..hp.n_trees).map(|_| rng.random()).collect();
    use rayon::prelude::*;
    let trees: Vec<DecisionTree> = tree_seeds
        .par_iter()
        .map(|&s| train_tree(data, &sample_weight, hp, s))
        .collect();
    Ok(Forest {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        class_names: data.class_names.clone(),
        feature_names: data.feature_names.clone(),
        hyperparameters: *hp,
        trees,
    })
}

/// Most frequent training class (ties: the smaller class index).
pub fn majority_class(labels: &[usize], n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let mut best = 0usize;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Per-class split: shuffles each class's rows with the seed and rounds
/// `test_fraction` of them into the test set. Both halves come back sorted.
pub fn stratified_split(
    labels: &[usize],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut indices) in by_class {
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);
        let n_test = (test_fraction * indices.len() as f64).round() as usize;
        let n_test = n_test.min(indices.len());
        test.extend_from_slice(&indices[..n_test]);
        train.extend_from_slice(&indices[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Classes with at least one true instance or one prediction.
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    /// Class names with no instances and no predictions, excluded from the
    /// macro average.
    pub excluded_classes: Vec<String>,
    /// `confusion[true][predicted]`, over all classes.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(y_true: &[usize], y_pred: &[usize], class_names: &[String]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::InvalidArgument("prediction/label length mismatch".into()));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate zero predictions".into()));
    }
    let k = class_names.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(Error::InvalidArgument("class index out of range".into()));
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / y_true.len() as f64;
    let mut per_class = Vec::new();
    let mut excluded = Vec::new();
    for c in 0..k {
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..k).map(|t| confusion[t][c]).sum();
        if support == 0 && predicted == 0 {
            excluded.push(class_names[c].clone());
            continue;
        }
        let tp = confusion[c][c] as f64;
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            class_name: class_names[c].clone(),
            precision,
            recall,
            f1,
            support,
            predicted,
        });
    }
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / per_class.len() as f64;
    Ok(Metrics { accuracy, per_class, macro_f1, excluded_classes: excluded, confusion })
}

pub fn save_model(forest: &Forest, path: &Path) -> Result<()> {
    let text =
        serde_json::to_string_pretty(forest).map_err(|e| Error::Json { path: path.into(), source: e })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Forest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let forest: Forest =
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })?;
    validate_model(&forest)?;
    Ok(forest)
}

pub fn validate_model(forest: &Forest) -> Result<()> {
    if forest.format != MODEL_FORMAT {
        return Err(Error::ModelFormat(format!(
            "unexpected format `{}`, expected `{MODEL_FORMAT}`",
            forest.format
        )));
    }
    if forest.version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {}, expected {MODEL_VERSION}",
            forest.version
        )));
    }
    if forest.trees.is_empty() {
        return Err(Error::ModelFormat("model has no trees".into()));
    }
    let d = forest.n_features();
    let k = forest.n_classes();
    for (ti, tree) in forest.trees.iter().enumerate() {
        if tree.nodes.is_empty() {
            return Err(Error::ModelFormat(format!("tree {ti} is empty")));
        }
        for (ni, node) in tree.nodes.iter().enumerate() {
            if node.value.len() != k {
                return Err(Error::ModelFormat(format!(
                    "tree {ti} node {ni}: value length {} != {k} classes",
                    node.value.len()
                )));
            }
            if let Some(f) = node.feature {
                if f >= d {
                    return Err(Error::ModelFormat(format!(
                        "tree {ti} node {ni}: split feature {f} out of range"
                    )));
                }
                if node.left >= tree.nodes.len() || node.right >= tree.nodes.len() {
                    return Err(Error::ModelFormat(format!(
                        "tree {ti} node {ni}: child index out of range"
                    )));
                }
                if node.left <= ni || node.right <= ni {
                    return Err(Error::ModelFormat(format!(
                        "tree {ti} node {ni}: children must come after their parent"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn blob_dataset(n_per_class: usize, seed: u64) -> Dataset {
        // Two well-separated 3-d blobs.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2usize {
            let center = if class == 0 { -4.0 } else { 4.0 };
            for _ in 0..n_per_class {
                features.push(vec![
                    center + rng.random::<f64>(),
                    center + rng.random::<f64>(),
                    rng.random::<f64>(),
                ]);
                labels.push(class);
            }
        }
        Dataset::new(features, labels, names("class", 2), names("f", 3)).unwrap()
    }

    #[test]
    fn single_tree_finds_the_obvious_split() {
        let data = Dataset::new(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![0, 0, 1, 1],
            names("c", 2),
            names("f", 1),
        )
        .unwrap();
        let hp = Hyperparameters { min_samples_leaf: 1, ..Hyperparameters::single_tree(0) };
        let forest = train(&data, &hp).unwrap();
        let tree = &forest.trees[0];
        let root = &tree.nodes[0];
        assert_eq!(root.feature, Some(0));
        assert_eq!(root.threshold, 1.5);
        for (i, row) in data.features.iter().enumerate() {
            assert_eq!(forest.predict(row).unwrap(), data.labels[i]);
        }
    }

    #[test]
    fn min_samples_leaf_blocks_unsplittable_nodes() {
        let data = Dataset::new(
            vec![vec![0.0], vec![1.0]],
            vec![0, 1],
            names("c", 2),
            names("f", 1),
        )
        .unwrap();
        let hp = Hyperparameters { min_samples_leaf: 2, ..Hyperparameters::single_tree(0) };
        let forest = train(&data, &hp).unwrap();
        assert_eq!(forest.trees[0].nodes.len(), 1);
        assert_eq!(forest.predict_proba(&[0.5]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn balanced_weighting_rebalances_leaf_distributions() {
        // 8 samples of class 0 vs 2 of class 1, inseparable (same feature).
        let data = Dataset::new(
            vec![vec![1.0]; 10],
            vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1],
            names("c", 2),
            names("f", 1),
        )
        .unwrap();
        let uniform = train(
            &data,
            &Hyperparameters {
                class_weighting: ClassWeighting::Uniform,
                ..Hyperparameters::single_tree(0)
            },
        )
        .unwrap();
        assert_eq!(uniform.predict_proba(&[1.0]).unwrap(), vec![0.8, 0.2]);
        let balanced = train(&data, &Hyperparameters::single_tree(0)).unwrap();
        let proba = balanced.predict_proba(&[1.0]).unwrap();
        assert!((proba[0] - 0.5).abs() < 1e-12 && (proba[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn training_is_bit_reproducible_per_seed() {
        let data = blob_dataset(30, 5);
        let hp = Hyperparameters { n_trees: 12, seed: 42, ..Hyperparameters::default() };
        let a = train(&data, &hp).unwrap();
        let b = train(&data, &hp).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = train(&data, &Hyperparameters { seed: 43, ..hp }).unwrap();
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn separable_blobs_reach_perfect_training_accuracy() {
        let data = blob_dataset(100, 7);
        let hp = Hyperparameters {
            n_trees: 20,
            min_samples_leaf: 1,
            seed: 1,
            ..Hyperparameters::default()
        };
        let forest = train(&data, &hp).unwrap();
        let correct = data
            .features
            .iter()
            .zip(&data.labels)
            .filter(|(x, &y)| forest.predict(x).unwrap() == y)
            .count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn predictions_are_invariant_under_monotone_feature_maps() {
        let data = blob_dataset(40, 11);
        let hp = Hyperparameters { n_trees: 15, seed: 3, ..Hyperparameters::default() };
        let forest = train(&data, &hp).unwrap();
        // Strictly monotone per-feature transform keeps order, so the grown
        // structure matches and predictions on transformed rows agree.
        let transform = |row: &Vec<f64>| -> Vec<f64> { row.iter().map(|v| (v * 0.5).exp()).collect() };
        let mapped = Dataset::new(
            data.features.iter().map(transform).collect(),
            data.labels.clone(),
            data.class_names.clone(),
            data.feature_names.clone(),
        )
        .unwrap();
        let mapped_forest = train(&mapped, &hp).unwrap();
        for (row, mapped_row) in data.features.iter().zip(&mapped.features) {
            assert_eq!(
                forest.predict_proba(row).unwrap(),
                mapped_forest.predict_proba(mapped_row).unwrap()
            );
        }
    }

    #[test]
    fn stratified_split_is_deterministic_and_proportional() {
        let labels: Vec<usize> = (0..100).map(|i| if i < 80 { 0 } else { 1 }).collect();
        let (train_a, test_a) = stratified_split(&labels, 0.2, 9).unwrap();
        let (train_b, test_b) = stratified_split(&labels, 0.2, 9).unwrap();
        assert_eq!((train_a.clone(), test_a.clone()), (train_b, test_b));
        assert_eq!(test_a.len(), 20);
        assert_eq!(test_a.iter().filter(|&&i| labels[i] == 1).count(), 4);
        let mut all: Vec<usize> = train_a.iter().chain(&test_a).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(stratified_split(&labels, 1.0, 0).is_err());
    }

    #[test]
    fn metrics_match_a_hand_confusion_table() {
        let class_names = names("c", 3);
        // true:  c0 c0 c0 c1 c1 c2
        // pred:  c0 c1 c0 c1 c0 c2
        let metrics =
            evaluate(&[0, 0, 0, 1, 1, 2], &[0, 1, 0, 1, 0, 2], &class_names).unwrap();
        assert!((metrics.accuracy - 4.0 / 6.0).abs() < 1e-12);
        let c0 = &metrics.per_class[0];
        assert!((c0.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((c0.recall - 2.0 / 3.0).abs() < 1e-12);
        let c2 = &metrics.per_class[2];
        assert_eq!((c2.precision, c2.recall, c2.f1), (1.0, 1.0, 1.0));
        assert!(metrics.excluded_classes.is_empty());
        assert_eq!(metrics.confusion[0], vec![2, 1, 0]);

        // A class absent from labels and predictions drops out of the macro.
        let m2 = evaluate(&[0, 0], &[0, 0], &class_names).unwrap();
        assert_eq!(m2.excluded_classes, vec!["c1", "c2"]);
        assert_eq!(m2.macro_f1, 1.0);
    }

    #[test]
    fn majority_class_breaks_ties_low() {
        assert_eq!(majority_class(&[2, 2, 1, 1, 0], 3), 1);
        assert_eq!(majority_class(&[0, 1], 2), 0);
    }

    #[test]
    fn model_file_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let data = blob_dataset(25, 13);
        let hp = Hyperparameters { n_trees: 8, seed: 21, ..Hyperparameters::default() };
        let forest = train(&data, &hp).unwrap();
        let path = dir.path().join("model.json");
        save_model(&forest, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, forest);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-6.0..6.0)).collect();
            assert_eq!(forest.predict_proba(&x).unwrap(), loaded.predict_proba(&x).unwrap());
        }
    }

    #[test]
    fn corrupt_models_are_rejected() {
        let data = blob_dataset(10, 1);
        let mut forest =
            train(&data, &Hyperparameters { n_trees: 2, ..Hyperparameters::default() }).unwrap();
        forest.format = "something-else".into();
        assert!(validate_model(&forest).is_err());
        forest.format = MODEL_FORMAT.into();
        forest.version = 99;
        assert!(validate_model(&forest).is_err());
        forest.version = MODEL_VERSION;
        validate_model(&forest).unwrap();
        forest.trees[0].nodes[0].value.pop();
        assert!(validate_model(&forest).is_err());
    }

    #[test]
    fn dataset_validation_rejects_malformed_rows() {
        assert!(Dataset::new(vec![vec![1.0]], vec![0, 1], names("c", 2), names("f", 1)).is_err());
        assert!(Dataset::new(vec![vec![1.0, 2.0]], vec![0], names("c", 2), names("f", 1)).is_err());
        assert!(Dataset::new(vec![vec![f64::NAN]], vec![0], names("c", 2), names("f", 1)).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![5], names("c", 2), names("f", 1)).is_err());
    }
}
