//! Classification metrics and dataset diagnostics: thresholded confusion
//! metrics with macro-averaged F1, ROC/AUC by grouped threshold sweep,
//! Pearson correlations, variance inflation factors, and named feature
//! importances for forest models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::features::{FeatureSchema, LabeledMatrix};
use crate::linalg::r_squared;
use crate::models::{schema_fingerprint, ModelKind, ModelParams, TrainedModel};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Indexed by class label: `per_class[0]` scores the clear class.
    pub per_class: [ClassMetrics; 2],
    pub macro_f1: f64,
    /// `confusion[actual][predicted]` counts.
    pub confusion: [[usize; 2]; 2],
    /// Empty until `roc_auc` results are attached.
    pub roc_points: Vec<RocPoint>,
    pub auc: Option<f64>,
    pub n_test: usize,
    /// Actual members per class label.
    pub class_balance: [usize; 2],
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self).expect("report serializes");
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// ROC curve as `threshold,fpr,tpr` lines for plotting.
    pub fn write_roc_csv(&self, path: &Path) -> Result<()> {
        let mut body = String::from("threshold,fpr,tpr\n");
        for p in &self.roc_points {
            body.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        std::fs::write(path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn check_paired(labels: &[u8], probabilities: &[f64]) -> Result<()> {
    if labels.len() != probabilities.len() {
        return Err(Error::LengthMismatch(format!(
            "{} labels vs {} probabilities",
            labels.len(),
            probabilities.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidParameter("no cases to evaluate".into()));
    }
    Ok(())
}

/// Thresholded binary metrics. A class with neither actual nor predicted
/// members scores F1 = 0 rather than being dropped, so macro-F1 stays the
/// mean over exactly two classes.
pub fn classification_report(labels: &[u8], probabilities: &[f64], threshold: f64) -> Result<EvalReport> {
    check_paired(labels, probabilities)?;
    let mut confusion = [[0usize; 2]; 2];
    for (y, p) in labels.iter().zip(probabilities) {
        let predicted = usize::from(*p >= threshold);
        confusion[*y as usize][predicted] += 1;
    }

    let n = labels.len();
    let per_class: Vec<ClassMetrics> = (0..2)
        .map(|c| {
            let tp = confusion[c][c];
            let actual = confusion[c][0] + confusion[c][1];
            let predicted = confusion[0][c] + confusion[1][c];
            let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
            let recall = if actual > 0 { tp as f64 / actual as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics { precision, recall, f1, support: actual }
        })
        .collect();
    let per_class: [ClassMetrics; 2] = per_class.try_into().expect("two classes");

    Ok(EvalReport {
        accuracy: (confusion[0][0] + confusion[1][1]) as f64 / n as f64,
        macro_f1: (per_class[0].f1 + per_class[1].f1) / 2.0,
        class_balance: [per_class[0].support, per_class[1].support],
        per_class,
        confusion,
        roc_points: Vec::new(),
        auc: None,
        n_test: n,
    })
}

/// ROC curve from a descending sweep over the distinct scores, tied scores
/// stepping as one group, plus the trapezoidal AUC. The first point
/// anchors the curve at (0,0) with a threshold above every score.
pub fn roc_auc(labels: &[u8], probabilities: &[f64]) -> Result<(Vec<RocPoint>, f64)> {
    check_paired(labels, probabilities)?;
    let n_pos = labels.iter().filter(|y| **y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassData);
    }

    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        probabilities[b].partial_cmp(&probabilities[a]).expect("finite scores").then(a.cmp(&b))
    });

    let max_score = probabilities[order[0]];
    let mut points = vec![RocPoint { threshold: max_score + 1.0, fpr: 0.0, tpr: 0.0 }];
    let mut auc = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut at = 0usize;
    while at < order.len() {
        let score = probabilities[order[at]];
        while at < order.len() && probabilities[order[at]] == score {
            if labels[order[at]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            at += 1;
        }
        let point = RocPoint {
            threshold: score,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        };
        let last = points.last().expect("anchored");
        auc += (point.fpr - last.fpr) * (point.tpr + last.tpr) / 2.0;
        points.push(point);
    }
    Ok((points, auc))
}

/// Pearson correlations over the feature columns in schema order,
/// categoricals entering as their ordinal indices, optionally appending
/// the label as a final column. Constant columns correlate 0 with
/// everything but keep their unit diagonal.
pub fn correlation_matrix(matrix: &LabeledMatrix, include_label: bool) -> Result<Vec<Vec<f64>>> {
    let n = matrix.n_rows();
    if n < 2 {
        return Err(Error::TooFewRows { rows: n, cols: matrix.n_cols() });
    }
    let mut columns: Vec<Vec<f64>> =
        (0..matrix.n_cols()).map(|j| matrix.rows.iter().map(|r| r[j]).collect()).collect();
    if include_label {
        columns.push(matrix.labels.iter().map(|y| *y as f64).collect());
    }

    let stats: Vec<(Vec<f64>, f64)> = columns
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / n as f64;
            let centered: Vec<f64> = col.iter().map(|v| v - mean).collect();
            let sigma = (centered.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            (centered, sigma)
        })
        .collect();
    for (j, (_, sigma)) in stats.iter().enumerate() {
        if *sigma <= 0.0 {
            log::warn!("column {j} is constant; its correlations are reported as 0");
        }
    }

    let p = columns.len();
    let mut out = vec![vec![0.0; p]; p];
    for i in 0..p {
        out[i][i] = 1.0;
        for j in i + 1..p {
            let (ci, si) = &stats[i];
            let (cj, sj) = &stats[j];
            let r = if *si > 0.0 && *sj > 0.0 {
                let cov = ci.iter().zip(cj).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                cov / (si * sj)
            } else {
                0.0
            };
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok(out)
}

/// Variance inflation factors in schema order: VIF_j = 1/(1 - R²_j) from
/// regressing column j on every other column plus an intercept. Perfect
/// collinearity (R² within 1e-12 of 1) reports +infinity rather than
/// failing, keeping the diagnostic complete.
pub fn vif(matrix: &LabeledMatrix) -> Result<Vec<f64>> {
    let n = matrix.n_rows();
    let p = matrix.n_cols();
    if n < p + 2 {
        return Err(Error::TooFewRows { rows: n, cols: p });
    }
    for j in 0..p {
        if matrix.rows.iter().all(|r| r[j] == matrix.rows[0][j]) {
            return Err(Error::ConstantColumn(matrix.schema.features[j].name.clone()));
        }
    }

    let mut out = Vec::with_capacity(p);
    for j in 0..p {
        let y: Vec<f64> = matrix.rows.iter().map(|r| r[j]).collect();
        let rows: Vec<Vec<f64>> = matrix
            .rows
            .iter()
            .map(|r| r.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, v)| *v).collect())
            .collect();
        let r2 = r_squared(&rows, &y)?;
        out.push(if r2 >= 1.0 - 1e-12 { f64::INFINITY } else { 1.0 / (1.0 - r2) });
    }
    Ok(out)
}

/// Named mean-decrease-in-impurity importances of a forest model, sorted
/// descending with ties kept in schema order.
pub fn feature_importance(model: &TrainedModel, schema: &FeatureSchema) -> Result<Vec<(String, f64)>> {
    if model.kind != ModelKind::RandomForest {
        return Err(Error::UnsupportedModelKind(model.kind.to_string()));
    }
    if schema_fingerprint(schema) != model.schema_fingerprint {
        return Err(Error::SchemaMismatch {
            model: model.schema_fingerprint.clone(),
            data: schema_fingerprint(schema),
        });
    }
    let ModelParams::Forest { importances, .. } = &model.params else {
        unreachable!("forest kind carries forest params")
    };
    let mut named: Vec<(String, f64)> = schema
        .features
        .iter()
        .map(|f| f.name.clone())
        .zip(importances.iter().copied())
        .collect();
    named.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite importances"));
    Ok(named)
}
