//! Logistic regression by full-batch gradient descent on the mean
//! log-loss, with backtracking line search. No regularization, matching
//! the reference pipeline; the z-scored inputs keep it well conditioned.

use crate::error::Error;
use crate::features::LabeledMatrix;
use crate::Result;

use super::{
    bce_logit, check_two_classes, schema_fingerprint, sigmoid, train_rows_of, Encoder, ModelKind,
    ModelParams, TrainConfig, TrainedModel,
};

/// Mean log-loss and its gradient (over weights then bias) at `beta`.
fn loss_and_gradient(x: &[Vec<f64>], y: &[f64], weights: &[f64], bias: f64) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (row, yi) in x.iter().zip(y) {
        let z: f64 = weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>() + bias;
        loss += bce_logit(z, *yi);
        let r = sigmoid(z) - yi;
        for (g, v) in grad_w.iter_mut().zip(row) {
            *g += r * v;
        }
        grad_b += r;
    }
    loss /= n;
    for g in &mut grad_w {
        *g /= n;
    }
    (loss, grad_w, grad_b / n)
}

pub fn train_logistic(matrix: &LabeledMatrix, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let train = train_rows_of(matrix);
    if train.len() < 2 {
        return Err(Error::InvalidParameter(format!("{} training rows, need at least 2", train.len())));
    }
    check_two_classes(&matrix.labels, &matrix.is_train)?;

    let encoder = Encoder::fit(matrix);
    let x: Vec<Vec<f64>> = train.iter().map(|&i| encoder.encode_row(&matrix.rows[i])).collect();
    let y: Vec<f64> = train.iter().map(|&i| matrix.labels[i] as f64).collect();

    let mut weights = vec![0.0; encoder.width];
    let mut bias = 0.0;
    let (mut loss, mut grad_w, mut grad_b) = loss_and_gradient(&x, &y, &weights, bias);
    let mut step = 1.0f64;
    for _ in 0..cfg.lr_max_iters {
        let grad_norm =
            (grad_w.iter().map(|g| g * g).sum::<f64>() + grad_b * grad_b).sqrt();
        if grad_norm < cfg.lr_tolerance {
            break;
        }
        // backtracking line search along the negative gradient
        let slope = grad_norm * grad_norm;
        step = (step * 2.0).min(1e6);
        loop {
            let cand_w: Vec<f64> = weights.iter().zip(&grad_w).map(|(w, g)| w - step * g).collect();
            let cand_b = bias - step * grad_b;
            let (cand_loss, cand_gw, cand_gb) = loss_and_gradient(&x, &y, &cand_w, cand_b);
            if cand_loss <= loss - 1e-4 * step * slope {
                weights = cand_w;
                bias = cand_b;
                loss = cand_loss;
                grad_w = cand_gw;
                grad_b = cand_gb;
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                break;
            }
        }
        if step < 1e-18 {
            break;
        }
    }
    if !loss.is_finite() || weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(Error::NonFinite("logistic regression parameters".into()));
    }

    Ok(TrainedModel {
        kind: ModelKind::Logistic,
        schema_fingerprint: schema_fingerprint(&matrix.schema),
        config: cfg.clone(),
        encoder,
        params: ModelParams::Logistic { weights, bias },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::solve_least_squares;
    use crate::models::test_support::matrix_from;
    use rand::Rng;

    #[test]
    fn linearly_separable_data_is_fit_perfectly() {
        // two features; class 1 iff x0 + x1 > 4
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 8) as f64, (i / 8) as f64])
            .collect();
        let labels: Vec<u8> = rows.iter().map(|r| u8::from(r[0] + r[1] > 4.0)).collect();
        let m = matrix_from(rows, labels.clone());
        let model = train_logistic(&m, &TrainConfig::default()).unwrap();
        let probs = model.predict_matrix(&m).unwrap();
        let correct = probs
            .iter()
            .zip(&labels)
            .filter(|(p, y)| u8::from(**p >= 0.5) == **y)
            .count();
        assert_eq!(correct, labels.len());
    }

    #[test]
    fn constant_features_give_the_class_prior() {
        let rows: Vec<Vec<f64>> = (0..20).map(|_| vec![3.0, 3.0]).collect();
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i < 15)).collect();
        let m = matrix_from(rows, labels);
        let model = train_logistic(&m, &TrainConfig::default()).unwrap();
        let ModelParams::Logistic { weights, .. } = &model.params else { unreachable!() };
        assert!(weights.iter().all(|w| w.abs() < 1e-9));
        let probs = model.predict_matrix(&m).unwrap();
        for p in probs {
            assert!((p - 0.75).abs() < 1e-6, "probability {p} should match the 0.75 prior");
        }
    }

    #[test]
    fn single_class_data_is_rejected() {
        let m = matrix_from(vec![vec![0.0], vec![1.0], vec![2.0]], vec![1, 1, 1]);
        assert!(matches!(train_logistic(&m, &TrainConfig::default()), Err(Error::SingleClassData)));
    }

    /// Newton / iteratively-reweighted least squares on the same mean
    /// log-loss, built on the QR solver. Converges quadratically, so 30
    /// iterations give an effectively exact optimum for comparison.
    fn irls_optimum(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let p = x[0].len() + 1;
        let design: Vec<Vec<f64>> =
            x.iter().map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect()).collect();
        let mut beta = vec![0.0; p];
        for _ in 0..30 {
            let mut wrows = Vec::with_capacity(design.len());
            let mut wz = Vec::with_capacity(design.len());
            for (row, yi) in design.iter().zip(y) {
                let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
                let mu = sigmoid(eta);
                let w = (mu * (1.0 - mu)).max(1e-10);
                let z = eta + (yi - mu) / w;
                let sw = w.sqrt();
                wrows.push(row.iter().map(|v| v * sw).collect::<Vec<f64>>());
                wz.push(z * sw);
            }
            beta = solve_least_squares(&wrows, &wz).unwrap();
        }
        beta
    }

    #[test]
    fn log_loss_matches_newton_oracle() {
        let mut rng = crate::derive_rng(12, "lr_oracle", 0);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect();
        // noisy linear concept keeps the optimum finite
        let labels: Vec<u8> = rows
            .iter()
            .map(|r| {
                let z = 0.8 * r[0] - 1.2 * r[1] + 0.3 * r[2] + rng.gen_range(-1.5..1.5);
                u8::from(z > 0.0)
            })
            .collect();
        let m = matrix_from(rows, labels);
        let model = train_logistic(&m, &TrainConfig::default()).unwrap();
        let ModelParams::Logistic { weights, bias } = &model.params else { unreachable!() };

        let x: Vec<Vec<f64>> = m.rows.iter().map(|r| model.encoder.encode_row(r)).collect();
        let y: Vec<f64> = m.labels.iter().map(|v| *v as f64).collect();
        let (gd_loss, _, _) = loss_and_gradient(&x, &y, weights, *bias);
        let beta = irls_optimum(&x, &y);
        let (newton_loss, _, _) = loss_and_gradient(&x, &y, &beta[1..], beta[0]);
        assert!(
            (gd_loss - newton_loss).abs() < 1e-4,
            "gradient descent {gd_loss} vs newton {newton_loss}"
        );
        assert!(gd_loss >= newton_loss - 1e-9, "descent cannot beat the optimum");
    }

    #[test]
    fn training_uses_only_flagged_rows() {
        use crate::models::test_support::matrix_with_mask;
        // training rows say x>1.5 means positive; the held-out rows
        // contradict it and must not influence the fit
        let rows = vec![
            vec![0.0], vec![1.0], vec![2.0], vec![3.0],
            vec![0.0], vec![3.0],
        ];
        let labels = vec![0, 0, 1, 1, 1, 0];
        let mask = vec![true, true, true, true, false, false];
        let m = matrix_with_mask(rows, labels, mask);
        let model = train_logistic(&m, &TrainConfig::default()).unwrap();
        let probs = model.predict_matrix(&m).unwrap();
        assert!(probs[0] < 0.5 && probs[1] < 0.5);
        assert!(probs[2] > 0.5 && probs[3] > 0.5);
    }
}
