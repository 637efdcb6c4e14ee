//! Gradient-boosted trees on log-loss: shallow regression trees fit to
//! residuals, leaf values set by a Newton step, scores accumulated at a
//! fixed learning rate from a base-rate initialization. Fully
//! deterministic; no randomness enters the fit.

use crate::error::Error;
use crate::features::LabeledMatrix;
use crate::Result;

use super::tree::{grow_tree, GrowParams, Tree, TreeNode};
use super::{
    check_two_classes, schema_fingerprint, sigmoid, train_rows_of, Encoder, ModelKind,
    ModelParams, TrainConfig, TrainedModel,
};

/// Replaces each leaf's fitted mean with the Newton step for log-loss:
/// sum(residuals) / sum(p(1-p)) over the rows in the leaf.
fn newtonize_leaves(tree: &mut Tree, rows: &[Vec<f64>], idx: &[usize], residual: &[f64], hessian: &[f64]) {
    let mut leaf_stats = vec![(0.0f64, 0.0f64); tree.nodes.len()];
    for &i in idx {
        let mut at = 0usize;
        loop {
            match &tree.nodes[at] {
                TreeNode::Leaf { .. } => break,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if rows[i][*feature] <= *threshold { *left as usize } else { *right as usize };
                }
            }
        }
        leaf_stats[at].0 += residual[i];
        leaf_stats[at].1 += hessian[i];
    }
    for (node, (r, h)) in tree.nodes.iter_mut().zip(leaf_stats) {
        if let TreeNode::Leaf { value } = node {
            *value = r / (h + 1e-12);
        }
    }
}

pub fn train_gradient_boosting(matrix: &LabeledMatrix, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let train = train_rows_of(matrix);
    if train.len() < 2 {
        return Err(Error::InvalidParameter(format!("{} training rows, need at least 2", train.len())));
    }
    check_two_classes(&matrix.labels, &matrix.is_train)?;

    let n_all = matrix.n_rows();
    let p = matrix.n_cols();
    let pos = train.iter().filter(|&&i| matrix.labels[i] == 1).count() as f64;
    let base_rate = pos / train.len() as f64;
    let init_score = (base_rate / (1.0 - base_rate)).ln();

    let params = GrowParams { max_depth: Some(cfg.gbt_depth), min_leaf: 1, mtry: p };
    let mut scores = vec![init_score; n_all];
    let mut residual = vec![0.0; n_all];
    let mut hessian = vec![0.0; n_all];
    let mut trees = Vec::with_capacity(cfg.gbt_rounds);
    // the grower's RNG only permutes candidate-feature order; with mtry = p
    // every feature is examined and the explicit tie-break fixes the winner,
    // so the fit is deterministic and seed-independent
    let mut rng = crate::derive_rng(cfg.seed, "gbt", 0);
    for _ in 0..cfg.gbt_rounds {
        for &i in &train {
            let prob = sigmoid(scores[i]);
            residual[i] = matrix.labels[i] as f64 - prob;
            hessian[i] = (prob * (1.0 - prob)).max(1e-12);
        }
        let res_ref = &residual;
        let mut tree = grow_tree(
            &matrix.rows,
            &train,
            res_ref,
            &|idx: &[usize]| idx.iter().map(|&i| res_ref[i]).sum::<f64>() / idx.len() as f64,
            &params,
            &mut rng,
            &mut None,
        );
        newtonize_leaves(&mut tree, &matrix.rows, &train, &residual, &hessian);
        for &i in &train {
            scores[i] += cfg.gbt_learning_rate * tree.predict(&matrix.rows[i]);
        }
        trees.push(tree);
    }

    Ok(TrainedModel {
        kind: ModelKind::GradientBoosting,
        schema_fingerprint: schema_fingerprint(&matrix.schema),
        config: cfg.clone(),
        encoder: Encoder::fit(matrix),
        params: ModelParams::Boosting { init_score, learning_rate: cfg.gbt_learning_rate, trees },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::bce_logit;
    use crate::models::test_support::matrix_from;
    use rand::Rng;

    fn noisy_data(n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = crate::derive_rng(7, "gbt_data", 0);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect();
        let labels = rows
            .iter()
            .map(|r| u8::from(r[0].sin() + 0.5 * r[1] + rng.gen_range(-0.3..0.3) > 0.0))
            .collect();
        (rows, labels)
    }

    #[test]
    fn zero_rounds_predicts_the_base_rate() {
        let (rows, _) = noisy_data(40);
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 4 == 0)).collect();
        let m = matrix_from(rows, labels);
        let cfg = TrainConfig { gbt_rounds: 0, ..TrainConfig::default() };
        let model = train_gradient_boosting(&m, &cfg).unwrap();
        for p in model.predict_matrix(&m).unwrap() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn training_log_loss_is_non_increasing() {
        let (rows, labels) = noisy_data(150);
        let m = matrix_from(rows, labels.clone());
        let cfg = TrainConfig { gbt_rounds: 60, ..TrainConfig::default() };
        let model = train_gradient_boosting(&m, &cfg).unwrap();
        let ModelParams::Boosting { init_score, learning_rate, trees } = &model.params else {
            unreachable!()
        };
        let mut scores = vec![*init_score; m.n_rows()];
        let loss = |scores: &[f64]| -> f64 {
            scores
                .iter()
                .zip(&labels)
                .map(|(z, y)| bce_logit(*z, *y as f64))
                .sum::<f64>()
                / labels.len() as f64
        };
        let mut prev = loss(&scores);
        for tree in trees {
            for (i, row) in m.rows.iter().enumerate() {
                scores[i] += learning_rate * tree.predict(row);
            }
            let cur = loss(&scores);
            assert!(cur <= prev + 1e-12, "loss rose from {prev} to {cur}");
            prev = cur;
        }
    }

    #[test]
    fn boosting_learns_a_nonlinear_boundary() {
        let (rows, labels) = noisy_data(300);
        let m = matrix_from(rows, labels.clone());
        let model = train_gradient_boosting(&m, &TrainConfig::default()).unwrap();
        let probs = model.predict_matrix(&m).unwrap();
        let acc = probs
            .iter()
            .zip(&labels)
            .filter(|(p, y)| u8::from(**p >= 0.5) == **y)
            .count() as f64
            / labels.len() as f64;
        assert!(acc > 0.95, "training accuracy {acc}");
    }

    #[test]
    fn fit_does_not_depend_on_the_seed() {
        let (rows, labels) = noisy_data(80);
        let m = matrix_from(rows, labels);
        let a = train_gradient_boosting(
            &m,
            &TrainConfig { gbt_rounds: 10, seed: 1, ..TrainConfig::default() },
        )
        .unwrap();
        let b = train_gradient_boosting(
            &m,
            &TrainConfig { gbt_rounds: 10, seed: 99, ..TrainConfig::default() },
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&a.params).unwrap(),
            serde_json::to_string(&b.params).unwrap()
        );
    }

    #[test]
    fn rejects_single_class_training_data() {
        let (rows, _) = noisy_data(20);
        let m = matrix_from(rows, vec![1; 20]);
        assert!(matches!(
            train_gradient_boosting(&m, &TrainConfig::default()),
            Err(crate::Error::SingleClassData)
        ));
    }

    /// Independently coded first boosting round: depth-limited exhaustive
    /// regression tree on the initial residuals plus Newton leaves.
    mod oracle {
        pub struct Node {
            pub feature: usize,
            pub threshold: f64,
            pub left: Option<Box<Node>>,
            pub right: Option<Box<Node>>,
            pub value: f64,
        }

        pub fn fit(rows: &[Vec<f64>], r: &[f64], h: &[f64], idx: &[usize], depth: usize) -> Node {
            let sum: f64 = idx.iter().map(|&i| r[i]).sum();
            let leaf_value = sum / (idx.iter().map(|&i| h[i]).sum::<f64>() + 1e-12);
            let first = r[idx[0]];
            if depth == 0 || idx.iter().all(|&i| r[i] == first) {
                return Node { feature: 0, threshold: 0.0, left: None, right: None, value: leaf_value };
            }
            let n = idx.len() as f64;
            let parent = sum * sum / n;
            let mut best: Option<(f64, usize, f64)> = None;
            for f in 0..rows[0].len() {
                let mut s: Vec<usize> = idx.to_vec();
                s.sort_by(|&a, &b| rows[a][f].partial_cmp(&rows[b][f]).unwrap().then(a.cmp(&b)));
                let mut ls = 0.0;
                for w in 0..s.len() - 1 {
                    ls += r[s[w]];
                    if rows[s[w]][f] == rows[s[w + 1]][f] {
                        continue;
                    }
                    let ln = (w + 1) as f64;
                    let rs = sum - ls;
                    let gain = ls * ls / ln + rs * rs / (n - ln) - parent;
                    if gain <= 0.0 {
                        continue;
                    }
                    let a = rows[s[w]][f];
                    let thr = a + (rows[s[w + 1]][f] - a) * 0.5;
                    let better = match &best {
                        None => true,
                        Some((g, bf, bt)) => {
                            gain > *g || (gain == *g && (f < *bf || (f == *bf && thr < *bt)))
                        }
                    };
                    if better {
                        best = Some((gain, f, thr));
                    }
                }
            }
            let Some((_, f, thr)) = best else {
                return Node { feature: 0, threshold: 0.0, left: None, right: None, value: leaf_value };
            };
            let (li, ri): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][f] <= thr);
            Node {
                feature: f,
                threshold: thr,
                left: Some(Box::new(fit(rows, r, h, &li, depth - 1))),
                right: Some(Box::new(fit(rows, r, h, &ri, depth - 1))),
                value: leaf_value,
            }
        }

        pub fn predict(node: &Node, row: &[f64]) -> f64 {
            match (&node.left, &node.right) {
                (Some(l), Some(rt)) => {
                    if row[node.feature] <= node.threshold {
                        predict(l, row)
                    } else {
                        predict(rt, row)
                    }
                }
                _ => node.value,
            }
        }
    }

    #[test]
    fn first_round_matches_the_single_step_oracle() {
        let (rows, labels) = noisy_data(100);
        let m = matrix_from(rows.clone(), labels.clone());
        let cfg = TrainConfig { gbt_rounds: 1, ..TrainConfig::default() };
        let model = train_gradient_boosting(&m, &cfg).unwrap();
        let ModelParams::Boosting { init_score, trees, .. } = &model.params else { unreachable!() };

        let pos = labels.iter().filter(|y| **y == 1).count() as f64;
        let base = pos / labels.len() as f64;
        let init = (base / (1.0 - base)).ln();
        assert!((init - init_score).abs() < 1e-15);
        let p0 = sigmoid(init);
        let r: Vec<f64> = labels.iter().map(|y| *y as f64 - p0).collect();
        let h: Vec<f64> = labels.iter().map(|_| p0 * (1.0 - p0)).collect();
        let idx: Vec<usize> = (0..rows.len()).collect();
        let oracle_tree = oracle::fit(&rows, &r, &h, &idx, 3);
        for row in &rows {
            let got = trees[0].predict(row);
            let want = oracle::predict(&oracle_tree, row);
            assert!((got - want).abs() < 1e-9, "tree output {got} vs oracle {want}");
        }
    }
}
