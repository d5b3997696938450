//! Shapley-value attributions for forest predictions.
//!
//! Uses the path-dependent formulation: the value of a feature coalition is
//! the tree output expected over the training distribution, approximated by
//! node covers — splits on coalition features follow the input, the rest
//! average both branches by cover fraction. Exact Shapley values fall out of
//! a per-leaf decomposition: each leaf contributes a product game over the
//! unique features on its path, solved with one polynomial expansion plus a
//! synthetic division per feature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{DecisionTree, Forest};

/// Attributions for one input: `values[feature][class]`, plus the per-class
/// base rate (cover-weighted mean tree output). Local accuracy holds:
/// base + column sums = predicted probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapValues {
    pub base: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

fn check_cover(cover: f64, what: &str) -> Result<()> {
    if cover <= 0.0 || cover.is_nan() {
        return Err(Error::ModelFormat(format!("{what} has non-positive cover {cover}")));
    }
    Ok(())
}

/// Cover-weighted mean leaf value — the conditional expectation with no
/// features fixed.
pub fn tree_expected(tree: &DecisionTree) -> Result<Vec<f64>> {
    let k = tree.nodes[0].value.len();
    let mut acc = vec![0.0f64; k];
    // (node, probability mass of reaching it)
    let mut stack = vec![(0usize, 1.0f64)];
    while let Some((i, mass)) = stack.pop() {
        let node = &tree.nodes[i];
        if node.is_leaf() {
            for (a, v) in acc.iter_mut().zip(&node.value) {
                *a += mass * v;
            }
        } else {
            check_cover(node.cover, "internal node")?;
            let l = &tree.nodes[node.left];
            let r = &tree.nodes[node.right];
            stack.push((node.left, mass * l.cover / node.cover));
            stack.push((node.right, mass * r.cover / node.cover));
        }
    }
    Ok(acc)
}

/// One unique feature on the current root-to-leaf path.
#[derive(Clone, Copy)]
struct PathEntry {
    feature: usize,
    /// 1 if the input satisfies every split of this feature on the path.
    hot: f64,
    /// Product of cover fractions of the branches the path takes.
    cold: f64,
}

struct ShapWalker<'a> {
    tree: &'a DecisionTree,
    x: &'a [f64],
    path: Vec<PathEntry>,
    /// phi[feature][class]
    phi: Vec<Vec<f64>>,
}

impl<'a> ShapWalker<'a> {
    fn descend(&mut self, index: usize) -> Result<()> {
        let node = &self.tree.nodes[index];
        let Some(feature) = node.feature else {
            self.settle_leaf(&node.value);
            return Ok(());
        };
        check_cover(node.cover, "internal node")?;
        let hot_child =
            if self.x[feature] <= node.threshold { node.left } else { node.right };
        for child in [node.left, node.right] {
            let hot = if child == hot_child { 1.0 } else { 0.0 };
            let cold = self.tree.nodes[child].cover / node.cover;
            match self.path.iter().position(|e| e.feature == feature) {
                Some(pos) => {
                    let saved = self.path[pos];
                    self.path[pos].hot *= hot;
                    self.path[pos].cold *= cold;
                    self.descend(child)?;
                    self.path[pos] = saved;
                }
                None => {
                    self.path.push(PathEntry { feature, hot, cold });
                    self.descend(child)?;
                    self.path.pop();
                }
            }
        }
        Ok(())
    }

    /// Solve the leaf's product game: v(S) = Π_{j∈S} hot_j · Π_{j∉S} cold_j,
    /// scaled by the leaf value. φ_j = (hot_j − cold_j) · Σ_s w_s e_s where
    /// e_s are the degree-s coefficients of Π_{i≠j}(cold_i + hot_i·z) and
    /// w_s = s!(k−1−s)!/k!.
    fn settle_leaf(&mut self, leaf_value: &[f64]) {
        let k = self.path.len();
        if k == 0 {
            return; // single-node tree: constant output, nothing to attribute
        }
        // Coefficients of Π over all path entries.
        let mut coeffs = vec![0.0f64; k + 1];
        coeffs[0] = 1.0;
        for (n, e) in self.path.iter().enumerate() {
            for t in (0..=n + 1).rev() {
                let carry = if t > 0 { e.hot * coeffs[t - 1] } else { 0.0 };
                coeffs[t] = e.cold * coeffs[t] + carry;
            }
        }
        // Shapley weights w_s = 1/(k·C(k−1,s)).
        let mut weights = Vec::with_capacity(k);
        let mut binom = 1.0f64;
        for s in 0..k {
            weights.push(1.0 / (k as f64 * binom));
            binom = binom * (k - 1 - s) as f64 / (s + 1) as f64;
        }
        let mut reduced = vec![0.0f64; k];
        for e in &self.path {
            if e.hot == e.cold {
                continue; // zero marginal everywhere
            }
            // Synthetic division of coeffs by (cold + hot·z).
            if e.hot != 0.0 {
                reduced[k - 1] = coeffs[k] / e.hot;
                for t in (1..k).rev() {
                    reduced[t - 1] = (coeffs[t] - e.cold * reduced[t]) / e.hot;
                }
            } else {
                reduced[0] = coeffs[0] / e.cold;
                for t in 1..k {
                    reduced[t] = (coeffs[t] - e.hot * reduced[t - 1]) / e.cold;
                }
            }
            let swing: f64 = weights.iter().zip(&reduced).map(|(w, c)| w * c).sum();
            let scale = (e.hot - e.cold) * swing;
            for (p, v) in self.phi[e.feature].iter_mut().zip(leaf_value) {
                *p += scale * v;
            }
        }
    }
}

pub fn tree_shap(tree: &DecisionTree, x: &[f64], n_features: usize) -> Result<ShapValues> {
    let n_classes = tree.nodes[0].value.len();
    let mut walker = ShapWalker {
        tree,
        x,
        path: Vec::new(),
        phi: vec![vec![0.0; n_classes]; n_features],
    };
    walker.descend(0)?;
    Ok(ShapValues { base: tree_expected(tree)?, values: walker.phi })
}

/// Forest attributions: the forest averages tree outputs, so both base and
/// per-feature values are the tree means.
pub fn forest_shap(forest: &Forest, x: &[f64]) -> Result<ShapValues> {
    if x.len() != forest.n_features() {
        return Err(Error::InvalidArgument(format!(
            "input has {} features, model expects {}",
            x.len(),
            forest.n_features()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("input contains a non-finite value".into()));
    }
    let k = forest.n_classes();
    let d = forest.n_features();
    let mut base = vec![0.0f64; k];
    let mut values = vec![vec![0.0f64; k]; d];
    for tree in &forest.trees {
        let sv = tree_shap(tree, x, d)?;
        for (a, b) in base.iter_mut().zip(&sv.base) {
            *a += b;
        }
        for (row, srow) in values.iter_mut().zip(&sv.values) {
            for (a, b) in row.iter_mut().zip(srow) {
                *a += b;
            }
        }
    }
    let nt = forest.trees.len() as f64;
    base.iter_mut().for_each(|v| *v /= nt);
    values.iter_mut().for_each(|row| row.iter_mut().for_each(|v| *v /= nt));
    Ok(ShapValues { base, values })
}

/// Mean absolute attribution per class and feature over a sample set:
/// `mean_abs[class][feature]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSummary {
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub mean_abs: Vec<Vec<f64>>,
}

pub fn importance_summary(forest: &Forest, inputs: &[Vec<f64>]) -> Result<ImportanceSummary> {
    use rayon::prelude::*;
    let per_sample: Vec<ShapValues> =
        inputs.par_iter().map(|x| forest_shap(forest, x)).collect::<Result<_>>()?;
    summarize_importance(&forest.class_names, &forest.feature_names, &per_sample)
}

/// Aggregates already-computed per-sample attributions into mean-|shap|.
pub fn summarize_importance(
    class_names: &[String],
    feature_names: &[String],
    per_sample: &[ShapValues],
) -> Result<ImportanceSummary> {
    if per_sample.is_empty() {
        return Err(Error::InvalidArgument("importance summary needs at least one input".into()));
    }
    let k = class_names.len();
    let d = feature_names.len();
    let mut mean_abs = vec![vec![0.0f64; d]; k];
    for sv in per_sample {
        if sv.values.len() != d || sv.base.len() != k {
            return Err(Error::InvalidArgument("attribution shape does not match model".into()));
        }
        for (f, row) in sv.values.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                mean_abs[c][f] += v.abs();
            }
        }
    }
    let n = per_sample.len() as f64;
    mean_abs.iter_mut().for_each(|row| row.iter_mut().for_each(|v| *v /= n));
    Ok(ImportanceSummary {
        class_names: class_names.to_vec(),
        feature_names: feature_names.to_vec(),
        mean_abs,
    })
}

/// One feature's contribution to one class probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub value: f64,
    pub shap: f64,
}

/// Explanation of one class's predicted probability: the base rate plus the
/// strongest signed contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExplanation {
    pub class_name: String,
    pub probability: f64,
    pub base: f64,
    pub top_contributions: Vec<Contribution>,
}

/// Per-class breakdown of a single prediction, keeping the `top_k` features
/// with the largest |shap| per class (ties: the smaller feature index).
pub fn explain_sample(forest: &Forest, x: &[f64], top_k: usize) -> Result<Vec<ClassExplanation>> {
    let sv = forest_shap(forest, x)?;
    let proba = forest.predict_proba(x)?;
    let d = forest.n_features();
    let mut out = Vec::with_capacity(forest.n_classes());
    for (c, class_name) in forest.class_names.iter().enumerate() {
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            sv.values[b][c].abs().total_cmp(&sv.values[a][c].abs()).then(a.cmp(&b))
        });
        let top_contributions = order
            .into_iter()
            .take(top_k)
            .map(|f| Contribution {
                feature: forest.feature_names[f].clone(),
                value: x[f],
                shap: sv.values[f][c],
            })
            .collect();
        out.push(ClassExplanation {
            class_name: class_name.clone(),
            probability: proba[c],
            base: sv.base[c],
            top_contributions,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{train, Dataset, Hyperparameters, TreeNode};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn leaf(cover: f64, value: Vec<f64>) -> TreeNode {
        TreeNode { feature: None, threshold: 0.0, left: 0, right: 0, cover, value }
    }

    fn split(feature: usize, threshold: f64, left: usize, right: usize, cover: f64, k: usize) -> TreeNode {
        TreeNode { feature: Some(feature), threshold, left, right, cover, value: vec![0.0; k] }
    }

    /// Conditional expectation oracle: splits on fixed features follow the
    /// input, the rest average children by cover.
    fn cond_expect(tree: &DecisionTree, x: &[f64], fixed: &[bool], index: usize) -> Vec<f64> {
        let node = &tree.nodes[index];
        let Some(f) = node.feature else {
            return node.value.clone();
        };
        if fixed[f] {
            let child = if x[f] <= node.threshold { node.left } else { node.right };
            cond_expect(tree, x, fixed, child)
        } else {
            let l = cond_expect(tree, x, fixed, node.left);
            let r = cond_expect(tree, x, fixed, node.right);
            let wl = tree.nodes[node.left].cover / node.cover;
            let wr = tree.nodes[node.right].cover / node.cover;
            l.iter().zip(&r).map(|(a, b)| wl * a + wr * b).collect()
        }
    }

    /// Exhaustive Shapley oracle over all 2^d coalitions.
    fn shap_oracle(tree: &DecisionTree, x: &[f64], d: usize) -> Vec<Vec<f64>> {
        let k = tree.nodes[0].value.len();
        let mut factorial = vec![1.0f64; d + 1];
        for i in 1..=d {
            factorial[i] = factorial[i - 1] * i as f64;
        }
        let mut phi = vec![vec![0.0f64; k]; d];
        for mask in 0..(1u32 << d) {
            let s = mask.count_ones() as usize;
            let mut fixed = vec![false; d];
            for (f, fx) in fixed.iter_mut().enumerate() {
                *fx = mask >> f & 1 == 1;
            }
            let without = cond_expect(tree, x, &fixed, 0);
            for i in 0..d {
                if fixed[i] {
                    continue;
                }
                fixed[i] = true;
                let with = cond_expect(tree, x, &fixed, 0);
                fixed[i] = false;
                let w = factorial[s] * factorial[d - s - 1] / factorial[d];
                for c in 0..k {
                    phi[i][c] += w * (with[c] - without[c]);
                }
            }
        }
        phi
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn single_split_tree_attributes_everything_to_its_feature() {
        let tree = DecisionTree {
            nodes: vec![
                split(1, 0.5, 1, 2, 10.0, 2),
                leaf(4.0, vec![1.0, 0.0]),
                leaf(6.0, vec![0.0, 1.0]),
            ],
        };
        let sv = tree_shap(&tree, &[9.9, 0.2, 3.3], 3).unwrap();
        assert_eq!(sv.base, vec![0.4, 0.6]);
        // Input goes left: f(x) = [1, 0]; all movement belongs to feature 1.
        assert_close(sv.values[1][0], 0.6, 1e-15);
        assert_close(sv.values[1][1], -0.6, 1e-15);
        assert_eq!(sv.values[0], vec![0.0, 0.0]);
        assert_eq!(sv.values[2], vec![0.0, 0.0]);
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for round in 0..50 {
            let d = 2 + (round % 5); // up to 6 features
            let n = 40;
            let features: Vec<Vec<f64>> =
                (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let labels: Vec<usize> = features.iter().map(|r| (r[0] + r[1] > 0.0) as usize).collect();
            let data = Dataset::new(
                features,
                labels,
                vec!["a".into(), "b".into()],
                (0..d).map(|i| format!("f{i}")).collect(),
            )
            .unwrap();
            let hp = Hyperparameters {
                n_trees: 1,
                min_samples_leaf: 1,
                max_depth: Some(4),
                seed: round as u64,
                ..Hyperparameters::default()
            };
            let forest = train(&data, &hp).unwrap();
            let tree = &forest.trees[0];
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = tree_shap(tree, &x, d).unwrap();
            let want = shap_oracle(tree, &x, d);
            for (f, want_row) in want.iter().enumerate() {
                for (c, &w) in want_row.iter().enumerate() {
                    assert_close(got.values[f][c], w, 1e-9);
                }
            }
        }
    }

    #[test]
    fn repeated_feature_along_a_path_is_handled() {
        // Feature 0 splits twice on the left spine.
        let tree = DecisionTree {
            nodes: vec![
                split(0, 1.0, 1, 2, 12.0, 2),
                split(0, -1.0, 3, 4, 8.0, 2),
                leaf(4.0, vec![0.0, 1.0]),
                leaf(5.0, vec![1.0, 0.0]),
                leaf(3.0, vec![0.5, 0.5]),
            ],
        };
        for x0 in [-2.0, 0.0, 2.0] {
            let x = [x0, 7.0];
            let got = tree_shap(&tree, &x, 2).unwrap();
            let want = shap_oracle(&tree, &x, 2);
            for (f, want_row) in want.iter().enumerate() {
                for (c, &w) in want_row.iter().enumerate() {
                    assert_close(got.values[f][c], w, 1e-12);
                }
            }
        }
    }

    #[test]
    fn forest_attributions_satisfy_local_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 120;
        let d = 5;
        let features: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let labels: Vec<usize> =
            features.iter().map(|r| ((r[0] > 0.5) as usize) + ((r[2] > 0.7) as usize)).collect();
        let data = Dataset::new(
            features,
            labels,
            vec!["x".into(), "y".into(), "z".into()],
            (0..d).map(|i| format!("f{i}")).collect(),
        )
        .unwrap();
        let forest =
            train(&data, &Hyperparameters { n_trees: 25, seed: 8, ..Hyperparameters::default() })
                .unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let sv = forest_shap(&forest, &x).unwrap();
            let proba = forest.predict_proba(&x).unwrap();
            for (c, &p) in proba.iter().enumerate() {
                let total: f64 = sv.base[c] + (0..d).map(|f| sv.values[f][c]).sum::<f64>();
                assert_close(total, p, 1e-9);
            }
        }
    }

    #[test]
    fn unused_features_get_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = 60;
        // Feature 1 is pure noise uncorrelated with the label; feature 2 is
        // constant so no tree can split on it.
        let features: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 5.0])
            .collect();
        let labels: Vec<usize> = features.iter().map(|r| (r[0] > 0.0) as usize).collect();
        let data = Dataset::new(
            features,
            labels,
            vec!["neg".into(), "pos".into()],
            vec!["signal".into(), "noise".into(), "constant".into()],
        )
        .unwrap();
        let forest =
            train(&data, &Hyperparameters { n_trees: 10, seed: 4, ..Hyperparameters::default() })
                .unwrap();
        let sv = forest_shap(&forest, &[0.3, 0.3, 5.0]).unwrap();
        // The constant feature never appears on any path.
        assert_eq!(sv.values[2], vec![0.0, 0.0]);
    }

    #[test]
    fn expected_value_is_the_cover_weighted_leaf_mean() {
        let tree = DecisionTree {
            nodes: vec![
                split(0, 0.0, 1, 2, 10.0, 2),
                leaf(2.0, vec![1.0, 0.0]),
                split(1, 0.0, 3, 4, 8.0, 2),
                leaf(6.0, vec![0.25, 0.75]),
                leaf(2.0, vec![0.0, 1.0]),
            ],
        };
        let expected = tree_expected(&tree).unwrap();
        // 0.2·[1,0] + 0.6·[0.25,0.75] + 0.2·[0,1]
        assert_close(expected[0], 0.35, 1e-15);
        assert_close(expected[1], 0.65, 1e-15);
    }

    #[test]
    fn zero_cover_internal_node_is_rejected() {
        let tree = DecisionTree {
            nodes: vec![
                split(0, 0.0, 1, 2, 0.0, 1),
                leaf(0.0, vec![1.0]),
                leaf(0.0, vec![0.0]),
            ],
        };
        assert!(tree_shap(&tree, &[1.0], 1).is_err());
        assert!(tree_expected(&tree).is_err());
    }

    #[test]
    fn explanations_rank_contributions_by_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 100;
        let features: Vec<Vec<f64>> =
            (0..n).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let labels: Vec<usize> = features.iter().map(|r| (r[3] > 0.5) as usize).collect();
        let data = Dataset::new(
            features,
            labels,
            vec!["lo".into(), "hi".into()],
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
        )
        .unwrap();
        let forest =
            train(&data, &Hyperparameters { n_trees: 12, seed: 2, ..Hyperparameters::default() })
                .unwrap();
        let explained = explain_sample(&forest, &[0.5, 0.5, 0.5, 0.9], 2).unwrap();
        assert_eq!(explained.len(), 2);
        for class in &explained {
            assert_eq!(class.top_contributions.len(), 2);
            assert!(
                class.top_contributions[0].shap.abs() >= class.top_contributions[1].shap.abs()
            );
            // The only informative feature must rank first for both classes.
            assert_eq!(class.top_contributions[0].feature, "d");
            assert_eq!(class.top_contributions[0].value, 0.9);
        }
        assert!(explain_sample(&forest, &[1.0], 2).is_err());
    }

    #[test]
    fn importance_summary_averages_absolute_values() {
        let tree = DecisionTree {
            nodes: vec![
                split(0, 0.0, 1, 2, 10.0, 1),
                leaf(5.0, vec![0.0]),
                leaf(5.0, vec![1.0]),
            ],
        };
        let forest = Forest {
            format: crate::forest::MODEL_FORMAT.to_string(),
            version: crate::forest::MODEL_VERSION,
            class_names: vec!["only".into()],
            feature_names: vec!["a".into(), "b".into()],
            hyperparameters: Hyperparameters::default(),
            trees: vec![tree],
        };
        // Inputs on either side contribute |±0.5| each.
        let summary =
            importance_summary(&forest, &[vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(summary.mean_abs.len(), 1);
        assert_close(summary.mean_abs[0][0], 0.5, 1e-15);
        assert_eq!(summary.mean_abs[0][1], 0.0);
        assert!(importance_summary(&forest, &[]).is_err());
    }
}
