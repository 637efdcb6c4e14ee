//! CART trees shared by the forest and the boosting models. One split
//! objective covers both uses: maximizing sum(child_sum^2 / child_count)
//! over the two children minimizes weighted Gini impurity when targets
//! are 0/1 labels and squared error when they are residuals.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rand::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf { value: f64 },
    /// Rows with feature value <= threshold go left.
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match &nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Candidate features per split; sampled without replacement when
    /// below the feature count.
    pub mtry: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Grows one tree over `idx` (row indices into `rows`; duplicates mean
/// bootstrap multiplicity). `target` is indexed by row id. Leaf values
/// come from `leaf_value` over the rows that land in the leaf. When
/// `importances` is given, each split adds its impurity decrease to its
/// feature's slot.
pub(crate) fn grow_tree(
    rows: &[Vec<f64>],
    idx: &[usize],
    target: &[f64],
    leaf_value: &dyn Fn(&[usize]) -> f64,
    params: &GrowParams,
    rng: &mut ChaCha8Rng,
    importances: &mut Option<&mut Vec<f64>>,
) -> Tree {
    let mut nodes = Vec::new();
    let p = rows[0].len();
    grow_node(rows, idx, target, leaf_value, params, rng, importances, &mut nodes, 0, p);
    Tree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn grow_node(
    rows: &[Vec<f64>],
    idx: &[usize],
    target: &[f64],
    leaf_value: &dyn Fn(&[usize]) -> f64,
    params: &GrowParams,
    rng: &mut ChaCha8Rng,
    importances: &mut Option<&mut Vec<f64>>,
    nodes: &mut Vec<TreeNode>,
    depth: usize,
    p: usize,
) -> u32 {
    let n = idx.len();
    let sum: f64 = idx.iter().map(|&i| target[i]).sum();
    let first = target[idx[0]];
    let pure = idx.iter().all(|&i| target[i] == first);
    let depth_reached = params.max_depth.is_some_and(|d| depth >= d);
    let split = if pure || depth_reached || n < 2 * params.min_leaf {
        None
    } else {
        find_best_split(rows, idx, target, sum, params, rng, p)
    };

    let Some(best) = split else {
        let id = nodes.len() as u32;
        nodes.push(TreeNode::Leaf { value: leaf_value(idx) });
        return id;
    };

    if let Some(imp) = importances.as_deref_mut() {
        imp[best.feature] += best.gain;
    }

    // stable partition keeps within-side order deterministic
    let (left, right): (Vec<usize>, Vec<usize>) =
        idx.iter().partition(|&&i| rows[i][best.feature] <= best.threshold);
    let id = nodes.len() as u32;
    nodes.push(TreeNode::Split { feature: best.feature, threshold: best.threshold, left: 0, right: 0 });
    let left_id = grow_node(rows, &left, target, leaf_value, params, rng, importances, nodes, depth + 1, p);
    let right_id = grow_node(rows, &right, target, leaf_value, params, rng, importances, nodes, depth + 1, p);
    nodes[id as usize] = TreeNode::Split { feature: best.feature, threshold: best.threshold, left: left_id, right: right_id };
    id
}

/// Scans the sampled candidate features for the threshold maximizing
/// sum_L^2/n_L + sum_R^2/n_R. Ties break toward the smaller feature
/// index, then the smaller threshold, so results never depend on the
/// candidate sampling order.
fn find_best_split(
    rows: &[Vec<f64>],
    idx: &[usize],
    target: &[f64],
    total_sum: f64,
    params: &GrowParams,
    rng: &mut ChaCha8Rng,
    p: usize,
) -> Option<BestSplit> {
    let n = idx.len();
    let mtry = params.mtry.min(p);
    let mut features: Vec<usize> = (0..p).collect();
    for i in 0..mtry {
        let j = rng.gen_range(i..p);
        features.swap(i, j);
    }
    features.truncate(mtry);

    let parent_score = total_sum * total_sum / n as f64;
    let mut best: Option<BestSplit> = None;
    let mut sorted: Vec<usize> = Vec::with_capacity(n);
    for &f in &features {
        sorted.clear();
        sorted.extend_from_slice(idx);
        sorted.sort_unstable_by(|&a, &b| {
            rows[a][f].partial_cmp(&rows[b][f]).unwrap().then(a.cmp(&b))
        });
        let mut left_n = 0usize;
        let mut left_sum = 0.0f64;
        for w in 0..n - 1 {
            let i = sorted[w];
            left_n += 1;
            left_sum += target[i];
            let v = rows[i][f];
            let v_next = rows[sorted[w + 1]][f];
            if v == v_next {
                continue;
            }
            if left_n < params.min_leaf || n - left_n < params.min_leaf {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let score = left_sum * left_sum / left_n as f64
                + right_sum * right_sum / (n - left_n) as f64;
            let gain = score - parent_score;
            if gain <= 0.0 {
                continue;
            }
            let threshold = v + (v_next - v) * 0.5;
            let better = match &best {
                None => true,
                Some(b) => {
                    gain > b.gain
                        || (gain == b.gain && (f < b.feature || (f == b.feature && threshold < b.threshold)))
                }
            };
            if better {
                best = Some(BestSplit { feature: f, threshold, gain });
            }
        }
    }
    best
}

/// Mean of the targets landing in a leaf: the positive-class frequency
/// when targets are 0/1 labels.
pub(crate) fn mean_leaf(target: &[f64]) -> impl Fn(&[usize]) -> f64 + '_ {
    move |idx: &[usize]| idx.iter().map(|&i| target[i]).sum::<f64>() / idx.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        crate::derive_rng(0, "tree_test", 0)
    }

    #[test]
    fn pure_node_becomes_a_leaf() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let target = vec![1.0, 1.0, 1.0];
        let idx = vec![0, 1, 2];
        let params = GrowParams { max_depth: None, min_leaf: 1, mtry: 1 };
        let t = grow_tree(&rows, &idx, &target, &mean_leaf(&target), &params, &mut rng(), &mut None);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[9.0]), 1.0);
    }

    #[test]
    fn threshold_separable_data_splits_exactly() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let target: Vec<f64> = (0..10).map(|i| if i < 6 { 0.0 } else { 1.0 }).collect();
        let idx: Vec<usize> = (0..10).collect();
        let params = GrowParams { max_depth: None, min_leaf: 1, mtry: 1 };
        let t = grow_tree(&rows, &idx, &target, &mean_leaf(&target), &params, &mut rng(), &mut None);
        assert_eq!(t.predict(&[5.4]), 0.0);
        assert_eq!(t.predict(&[5.6]), 1.0);
        match &t.nodes[0] {
            TreeNode::Split { feature: 0, threshold, .. } => assert_eq!(*threshold, 5.5),
            other => panic!("expected root split, got {other:?}"),
        }
    }

    #[test]
    fn depth_limit_is_respected() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        // alternating labels force maximal splitting when unlimited
        let target: Vec<f64> = (0..64).map(|i| (i % 2) as f64).collect();
        let idx: Vec<usize> = (0..64).collect();
        let params = GrowParams { max_depth: Some(3), min_leaf: 1, mtry: 1 };
        let t = grow_tree(&rows, &idx, &target, &mean_leaf(&target), &params, &mut rng(), &mut None);
        assert!(t.depth() <= 3);
        assert!(t.n_leaves() <= 8);
    }

    #[test]
    fn best_split_matches_exhaustive_enumeration() {
        // two features; exhaustive scan reproduced by hand in the test
        let rows = vec![
            vec![1.0, 7.0],
            vec![2.0, 1.0],
            vec![3.0, 6.0],
            vec![4.0, 2.0],
            vec![5.0, 5.0],
            vec![6.0, 3.0],
            vec![7.0, 8.0],
            vec![8.0, 4.0],
        ];
        let target = vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let mut best_score = f64::NEG_INFINITY;
        let mut best_at = (0usize, 0.0f64);
        for f in 0..2 {
            let mut vals: Vec<(f64, f64)> = rows.iter().zip(&target).map(|(r, t)| (r[f], *t)).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for cut in 1..vals.len() {
                if vals[cut - 1].0 == vals[cut].0 {
                    continue;
                }
                let (ln, ls) = (cut as f64, vals[..cut].iter().map(|v| v.1).sum::<f64>());
                let (rn, rs) = ((vals.len() - cut) as f64, vals[cut..].iter().map(|v| v.1).sum::<f64>());
                let score = ls * ls / ln + rs * rs / rn;
                if score > best_score {
                    best_score = score;
                    best_at = (f, (vals[cut - 1].0 + vals[cut].0) / 2.0);
                }
            }
        }

        let idx: Vec<usize> = (0..8).collect();
        let params = GrowParams { max_depth: Some(1), min_leaf: 1, mtry: 2 };
        let target_ref = &target;
        let t = grow_tree(&rows, &idx, target_ref, &mean_leaf(target_ref), &params, &mut rng(), &mut None);
        match &t.nodes[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!((*feature, *threshold), best_at);
            }
            other => panic!("expected a split, got {other:?}"),
        }
    }

    #[test]
    fn importances_accumulate_on_the_split_feature() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, 0.0]).collect();
        let target: Vec<f64> = (0..12).map(|i| if i < 7 { 0.0 } else { 1.0 }).collect();
        let idx: Vec<usize> = (0..12).collect();
        let mut imp = vec![0.0, 0.0];
        let params = GrowParams { max_depth: None, min_leaf: 1, mtry: 2 };
        grow_tree(&rows, &idx, &target, &mean_leaf(&target), &params, &mut rng(), &mut Some(&mut imp));
        assert!(imp[0] > 0.0);
        assert_eq!(imp[1], 0.0);
    }
}
