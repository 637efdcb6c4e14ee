//! Random forest: bagged CART trees on Gini impurity with per-split
//! feature subsampling. Trees train in parallel, each on an RNG stream
//! derived from (seed, tree index), so the forest is identical at any
//! thread count.

use rayon::prelude::*;

use crate::error::Error;
use crate::features::LabeledMatrix;
use crate::Result;

use super::tree::{grow_tree, mean_leaf, GrowParams, Tree};
use super::{
    check_two_classes, schema_fingerprint, train_rows_of, Encoder, ModelKind, ModelParams,
    TrainConfig, TrainedModel,
};

use rand::Rng;

pub fn train_random_forest(matrix: &LabeledMatrix, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let train = train_rows_of(matrix);
    if train.len() < 2 {
        return Err(Error::InvalidParameter(format!("{} training rows, need at least 2", train.len())));
    }
    check_two_classes(&matrix.labels, &matrix.is_train)?;

    let p = matrix.n_cols();
    let mtry = cfg.rf_mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).clamp(1, p);
    let params = GrowParams { max_depth: cfg.rf_max_depth, min_leaf: cfg.rf_min_leaf, mtry };
    let target: Vec<f64> = matrix.labels.iter().map(|y| *y as f64).collect();

    let per_tree: Vec<(Tree, Vec<f64>)> = (0..cfg.rf_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = crate::derive_rng(cfg.seed, "rf_tree", t as u64);
            let idx: Vec<usize> = if cfg.rf_bootstrap {
                (0..train.len()).map(|_| train[rng.gen_range(0..train.len())]).collect()
            } else {
                train.clone()
            };
            let mut importances = vec![0.0; p];
            let tree = grow_tree(
                &matrix.rows,
                &idx,
                &target,
                &mean_leaf(&target),
                &params,
                &mut rng,
                &mut Some(&mut importances),
            );
            (tree, importances)
        })
        .collect();

    let mut trees = Vec::with_capacity(cfg.rf_trees);
    let mut importances = vec![0.0; p];
    for (tree, imp) in per_tree {
        trees.push(tree);
        for (total, v) in importances.iter_mut().zip(imp) {
            *total += v;
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        for v in &mut importances {
            *v /= total;
        }
    }

    Ok(TrainedModel {
        kind: ModelKind::RandomForest,
        schema_fingerprint: schema_fingerprint(&matrix.schema),
        config: cfg.clone(),
        encoder: Encoder::fit(matrix),
        params: ModelParams::Forest { trees, importances },
    })
}
