//! Feed-forward network trained with mini-batch gradient descent under a
//! decoupled-weight-decay adaptive-moment optimizer, early-stopped on
//! validation accuracy. Also hosts the dense-layer arithmetic, optimizer,
//! validation split, and early-stopping policy shared with the graph model.
//!
//! Training is single-threaded on purpose: batch order and float summation
//! order stay fixed, so a seed fully determines the fitted weights.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::features::LabeledMatrix;
use crate::Result;

use super::{
    bce_logit, check_two_classes, schema_fingerprint, sigmoid, train_rows_of, DenseLayer,
    Encoder, ModelKind, ModelParams, TrainConfig, TrainedModel,
};

pub(super) fn affine(layer: &DenseLayer, x: &[f64]) -> Vec<f64> {
    layer
        .w
        .iter()
        .zip(&layer.b)
        .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
        .collect()
}

pub(super) fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Hidden layers use rectifier activations; the final layer emits one logit
/// that is squashed to a probability.
pub(crate) fn forward_mlp(layers: &[DenseLayer], row: &[f64]) -> f64 {
    let mut x = row.to_vec();
    for (k, layer) in layers.iter().enumerate() {
        x = affine(layer, &x);
        if k + 1 < layers.len() {
            relu_inplace(&mut x);
        }
    }
    sigmoid(x[0])
}

/// Uniform fan-in scaled init: rectifier layers get the wider bound suited
/// to halved activations, the logit layer the fan-in/fan-out compromise.
pub(super) fn init_layer(n_in: usize, n_out: usize, rectifier: bool, rng: &mut ChaCha8Rng) -> DenseLayer {
    let limit = if rectifier {
        (6.0 / n_in as f64).sqrt()
    } else {
        (6.0 / (n_in + n_out) as f64).sqrt()
    };
    DenseLayer {
        w: (0..n_out)
            .map(|_| (0..n_in).map(|_| rng.gen_range(-limit..limit)).collect())
            .collect(),
        b: vec![0.0; n_out],
    }
}

pub(super) fn zero_grads(layers: &[DenseLayer]) -> Vec<DenseLayer> {
    layers
        .iter()
        .map(|l| DenseLayer { w: l.w.iter().map(|r| vec![0.0; r.len()]).collect(), b: vec![0.0; l.b.len()] })
        .collect()
}

pub(super) fn param_count(layers: &[DenseLayer]) -> usize {
    layers.iter().map(|l| l.w.iter().map(Vec::len).sum::<usize>() + l.b.len()).sum()
}

// ── Optimizer ───────────────────────────────────────────────────────────

/// Adaptive-moment optimizer with decoupled weight decay. Decay applies to
/// every parameter, biases included. Moment buffers walk the layer list in
/// a fixed order (weights row-major, then biases), so the pairing between
/// a parameter and its moments never changes across steps.
pub(super) struct AdamW {
    lr: f64,
    wd: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, wd: f64) -> AdamW {
        AdamW { lr, wd, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn step(&mut self, layers: &mut [DenseLayer], grads: &[DenseLayer]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let mut at = 0usize;
        let mut update = |p: &mut f64, g: f64| {
            self.m[at] = self.beta1 * self.m[at] + (1.0 - self.beta1) * g;
            self.v[at] = self.beta2 * self.v[at] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[at] / bc1;
            let v_hat = self.v[at] / bc2;
            *p -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.wd * *p);
            at += 1;
        };
        for (layer, grad) in layers.iter_mut().zip(grads) {
            for (wr, gr) in layer.w.iter_mut().zip(&grad.w) {
                for (w, g) in wr.iter_mut().zip(gr) {
                    update(w, *g);
                }
            }
            for (b, g) in layer.b.iter_mut().zip(&grad.b) {
                update(b, *g);
            }
        }
    }
}

// ── Early stopping ──────────────────────────────────────────────────────

/// Tracks the best monitored accuracy. The caller snapshots weights when
/// `observe` reports an improvement and stops once `should_stop` fires,
/// which happens `patience` epochs after the last improvement.
pub(super) struct EarlyStopper {
    patience: usize,
    best_acc: f64,
    pub best_epoch: usize,
    bad: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> EarlyStopper {
        EarlyStopper { patience, best_acc: f64::NEG_INFINITY, best_epoch: 0, bad: 0 }
    }

    pub fn observe(&mut self, epoch: usize, acc: f64) -> bool {
        if acc > self.best_acc {
            self.best_acc = acc;
            self.best_epoch = epoch;
            self.bad = 0;
            true
        } else {
            self.bad += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad >= self.patience
    }
}

/// Splits `indices` into (fit, val) stratified by label. Every label with
/// at least two members contributes max(1, round(fraction * n)) rows to the
/// validation side, capped so at least one member stays on the fit side.
/// Both outputs come back sorted, so the result is order-independent.
pub(super) fn stratified_val_split(
    labels: &[u8],
    indices: &[usize],
    fraction: f64,
    seed: u64,
    tag: &str,
) -> (Vec<usize>, Vec<usize>) {
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for label in [0u8, 1u8] {
        let mut members: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == label).collect();
        if members.is_empty() {
            continue;
        }
        members.sort_unstable();
        let mut rng = crate::derive_rng(seed, tag, label as u64);
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        let n_val = if members.len() < 2 {
            0
        } else {
            ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1)
        };
        val.extend_from_slice(&members[..n_val]);
        fit.extend_from_slice(&members[n_val..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

// ── Backpropagation ─────────────────────────────────────────────────────

/// Adds one sample's loss gradient into `grads` and returns its loss.
/// `grads` must have the same shapes as `layers`.
pub(super) fn accumulate_sample(
    layers: &[DenseLayer],
    row: &[f64],
    y: f64,
    grads: &mut [DenseLayer],
) -> f64 {
    let depth = layers.len();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
    acts.push(row.to_vec());
    for (k, layer) in layers.iter().enumerate() {
        let mut z = affine(layer, &acts[k]);
        if k + 1 < depth {
            relu_inplace(&mut z);
        }
        acts.push(z);
    }
    let logit = acts[depth][0];
    let loss = bce_logit(logit, y);

    let mut delta = vec![sigmoid(logit) - y];
    for k in (0..depth).rev() {
        let a_prev = &acts[k];
        for (o, d) in delta.iter().enumerate() {
            grads[k].b[o] += d;
            for (g, a) in grads[k].w[o].iter_mut().zip(a_prev) {
                *g += d * a;
            }
        }
        if k > 0 {
            let mut next = vec![0.0; a_prev.len()];
            for (o, d) in delta.iter().enumerate() {
                for (n, w) in next.iter_mut().zip(&layers[k].w[o]) {
                    *n += d * w;
                }
            }
            // rectifier derivative read off the stored post-activation:
            // zero output means the unit was clamped
            for (n, a) in next.iter_mut().zip(a_prev) {
                if *a <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
    }
    loss
}

fn scale_grads(grads: &mut [DenseLayer], factor: f64) {
    for g in grads {
        for row in &mut g.w {
            for v in row {
                *v *= factor;
            }
        }
        for v in &mut g.b {
            *v *= factor;
        }
    }
}

/// Audits the backward pass: compares the analytic batch gradient against
/// a central finite difference for every parameter of a small random
/// 3-4-3-1 network over `n_samples` rows, and returns the worst relative
/// error seen. A healthy implementation stays far below 1e-4.
pub fn gradient_check(n_samples: usize, seed: u64) -> f64 {
    let mut rng = crate::derive_rng(seed, "nn_gradcheck", 0);
    let x: Vec<Vec<f64>> =
        (0..n_samples).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let y: Vec<f64> = (0..n_samples).map(|i| f64::from(i % 2 == 0)).collect();
    let mut layers = Vec::new();
    for (k, (n_in, n_out)) in [(3usize, 4usize), (4, 3), (3, 1)].iter().enumerate() {
        let mut lr = crate::derive_rng(seed, "nn_gradcheck_init", k as u64);
        layers.push(init_layer(*n_in, *n_out, k < 2, &mut lr));
    }

    let batch_loss = |layers: &[DenseLayer]| -> f64 {
        let mut scratch = zero_grads(layers);
        let total: f64 =
            x.iter().zip(&y).map(|(row, y)| accumulate_sample(layers, row, *y, &mut scratch)).sum();
        total / x.len() as f64
    };

    let mut grads = zero_grads(&layers);
    for (row, label) in x.iter().zip(&y) {
        accumulate_sample(&layers, row, *label, &mut grads);
    }
    scale_grads(&mut grads, 1.0 / x.len() as f64);

    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..layers.len() {
        for o in 0..layers[k].b.len() {
            let n_in = layers[k].w[o].len();
            for i in 0..=n_in {
                let analytic = if i < n_in { grads[k].w[o][i] } else { grads[k].b[o] };
                let mut plus = layers.clone();
                let mut minus = layers.clone();
                if i < n_in {
                    plus[k].w[o][i] += h;
                    minus[k].w[o][i] -= h;
                } else {
                    plus[k].b[o] += h;
                    minus[k].b[o] -= h;
                }
                let numeric = (batch_loss(&plus) - batch_loss(&minus)) / (2.0 * h);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

fn accuracy_on(layers: &[DenseLayer], x: &[Vec<f64>], y: &[f64], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let hits = idx
        .iter()
        .filter(|&&i| u8::from(forward_mlp(layers, &x[i]) >= 0.5) == y[i] as u8)
        .count();
    hits as f64 / idx.len() as f64
}

pub(super) struct FitTrace {
    pub epochs_run: usize,
    pub best_epoch: usize,
}

/// Core training loop over pre-encoded rows. `dims` lists layer sizes from
/// input to the single logit, e.g. `[in, 64, 32, 1]`. Monitors accuracy on
/// `val_idx` (falling back to the fit rows when it is empty) and returns
/// the weights of the best epoch.
pub(super) fn fit_mlp(
    x: &[Vec<f64>],
    y: &[f64],
    fit_idx: &[usize],
    val_idx: &[usize],
    dims: &[usize],
    cfg: &TrainConfig,
) -> Result<(Vec<DenseLayer>, FitTrace)> {
    let mut layers: Vec<DenseLayer> = Vec::with_capacity(dims.len() - 1);
    for k in 0..dims.len() - 1 {
        let mut rng = crate::derive_rng(cfg.seed, "fnn_init", k as u64);
        layers.push(init_layer(dims[k], dims[k + 1], k + 2 < dims.len(), &mut rng));
    }

    let mut opt = AdamW::new(param_count(&layers), cfg.nn_learning_rate, cfg.nn_weight_decay);
    let mut stopper = EarlyStopper::new(cfg.nn_patience);
    let mut best = layers.clone();
    let mut order: Vec<usize> = fit_idx.to_vec();
    let mut epochs_run = 0;

    for epoch in 1..=cfg.nn_max_epochs {
        epochs_run = epoch;
        let mut rng = crate::derive_rng(cfg.seed, "fnn_epoch", epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut grads = zero_grads(&layers);
        for batch in order.chunks(cfg.nn_batch) {
            for g in &mut grads {
                for row in &mut g.w {
                    row.fill(0.0);
                }
                g.b.fill(0.0);
            }
            for &i in batch {
                epoch_loss += accumulate_sample(&layers, &x[i], y[i], &mut grads);
            }
            scale_grads(&mut grads, 1.0 / batch.len() as f64);
            opt.step(&mut layers, &grads);
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite training loss at epoch {epoch}")));
        }

        let monitor = if val_idx.is_empty() { fit_idx } else { val_idx };
        if stopper.observe(epoch, accuracy_on(&layers, x, y, monitor)) {
            best = layers.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }

    Ok((best, FitTrace { epochs_run, best_epoch: stopper.best_epoch }))
}

pub fn train_fnn(matrix: &LabeledMatrix, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let train = train_rows_of(matrix);
    if train.len() < 2 {
        return Err(Error::InvalidParameter(format!("{} training rows, need at least 2", train.len())));
    }
    check_two_classes(&matrix.labels, &matrix.is_train)?;

    let encoder = Encoder::fit(matrix);
    let x: Vec<Vec<f64>> = train.iter().map(|&i| encoder.encode_row(&matrix.rows[i])).collect();
    let y: Vec<f64> = train.iter().map(|&i| matrix.labels[i] as f64).collect();
    let y_u8: Vec<u8> = train.iter().map(|&i| matrix.labels[i]).collect();

    let all: Vec<usize> = (0..x.len()).collect();
    let (fit_idx, val_idx) = stratified_val_split(&y_u8, &all, cfg.nn_val_fraction, cfg.seed, "fnn_val");
    let dims = [encoder.width, cfg.nn_hidden.0, cfg.nn_hidden.1, 1];
    let (layers, trace) = fit_mlp(&x, &y, &fit_idx, &val_idx, &dims, cfg)?;
    log::debug!("fnn ran {} epochs, kept weights from epoch {}", trace.epochs_run, trace.best_epoch);

    Ok(TrainedModel {
        kind: ModelKind::Fnn,
        schema_fingerprint: schema_fingerprint(&matrix.schema),
        config: cfg.clone(),
        encoder,
        params: ModelParams::Mlp { layers },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::matrix_from;

    fn xor_data(n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = crate::derive_rng(3, "xor", 0);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let labels = rows.iter().map(|r| u8::from((r[0] > 0.0) != (r[1] > 0.0))).collect();
        (rows, labels)
    }

    #[test]
    fn learns_an_xor_pattern() {
        let (rows, labels) = xor_data(200);
        let m = matrix_from(rows, labels.clone());
        // small batches keep the step count useful on 200 rows
        let cfg = TrainConfig {
            nn_hidden: (16, 8),
            nn_batch: 16,
            nn_learning_rate: 5e-3,
            nn_max_epochs: 300,
            ..TrainConfig::default()
        };
        let model = train_fnn(&m, &cfg).unwrap();
        let probs = model.predict_matrix(&m).unwrap();
        let acc = probs
            .iter()
            .zip(&labels)
            .filter(|(p, y)| u8::from(**p >= 0.5) == **y)
            .count() as f64
            / labels.len() as f64;
        assert!(acc >= 0.95, "training accuracy {acc}");
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let worst = gradient_check(10, 11);
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn constant_validation_accuracy_stops_after_patience() {
        // two identical validation rows with opposite labels pin the
        // monitored accuracy at exactly 0.5 forever
        let mut rng = crate::derive_rng(9, "patience", 0);
        let mut x: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let mut y: Vec<f64> = (0..20).map(|i| f64::from(i % 2 == 0)).collect();
        x.push(vec![0.0, 0.0]);
        x.push(vec![0.0, 0.0]);
        y.push(0.0);
        y.push(1.0);
        let fit_idx: Vec<usize> = (0..20).collect();
        let val_idx = vec![20, 21];
        let cfg = TrainConfig { nn_hidden: (4, 3), nn_patience: 50, ..TrainConfig::default() };
        let (_, trace) = fit_mlp(&x, &y, &fit_idx, &val_idx, &[2, 4, 3, 1], &cfg).unwrap();
        assert_eq!(trace.best_epoch, 1);
        assert_eq!(trace.epochs_run, 51);
    }

    #[test]
    fn rejects_single_class_training_data() {
        let (rows, _) = xor_data(10);
        let m = matrix_from(rows, vec![0; 10]);
        assert!(matches!(train_fnn(&m, &TrainConfig::default()), Err(crate::Error::SingleClassData)));
    }

    #[test]
    fn validation_split_is_stratified_and_deterministic() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i < 30)).collect();
        let all: Vec<usize> = (0..100).collect();
        let (fit, val) = stratified_val_split(&labels, &all, 0.15, 7, "fnn_val");
        assert_eq!(val.len(), 5 + 11);
        assert_eq!(fit.len(), 100 - 16);
        assert_eq!(val.iter().filter(|&&i| labels[i] == 1).count(), 5);
        let mut both: Vec<usize> = fit.iter().chain(&val).copied().collect();
        both.sort_unstable();
        assert_eq!(both, all);
        let (fit2, val2) = stratified_val_split(&labels, &all, 0.15, 7, "fnn_val");
        assert_eq!(fit, fit2);
        assert_eq!(val, val2);
    }

    #[test]
    fn same_seed_reproduces_the_model_bit_for_bit() {
        let (rows, labels) = xor_data(60);
        let m = matrix_from(rows, labels);
        let cfg = TrainConfig { nn_hidden: (6, 4), nn_max_epochs: 40, ..TrainConfig::default() };
        let a = train_fnn(&m, &cfg).unwrap();
        let b = train_fnn(&m, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a.params).unwrap(), serde_json::to_string(&b.params).unwrap());
    }
}
