//! Graph convolutional network: a dense preprocessing layer, two
//! convolution layers that mix each node with its neighbors through a
//! row-normalized adjacency, and a dense head ending in a sigmoid. Trained
//! full-batch and transductively: every forward pass runs over the whole
//! graph while the loss reads only training-masked nodes.

use crate::error::Error;
use crate::graph::GeoGraph;
use crate::Result;

use crate::features::FeatureKind;

use super::nn::{
    affine, init_layer, param_count, relu_inplace, stratified_val_split, zero_grads, AdamW,
    EarlyStopper,
};
use super::{
    bce_logit, check_two_classes, schema_fingerprint, sigmoid, ColumnEncoding, DenseLayer,
    Encoder, ModelKind, ModelParams, TrainConfig, TrainedModel,
};

const CONV_LAYERS: usize = 2;

/// Median non-self edge distance, the scale for inverse-distance weights.
/// Degenerate graphs (no edges, or a zero median) fall back to 1.
fn median_edge_distance(graph: &GeoGraph) -> f64 {
    let mut d: Vec<f64> = graph
        .edge_list
        .iter()
        .zip(&graph.edge_weights)
        .filter(|((s, t), _)| s != t)
        .map(|(_, w)| *w)
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = d.len();
    let median = if n % 2 == 1 { d[n / 2] } else { (d[n / 2 - 1] + d[n / 2]) / 2.0 };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Per-node (neighbor, weight) rows summing to 1. Unweighted graphs give
/// every neighbor (self included) the same raw weight; weighted graphs use
/// 1/(1 + d/sigma), which makes the self-loop (d = 0) the heaviest entry.
fn normalized_adjacency(graph: &GeoGraph, weighted: bool, sigma: f64) -> Vec<Vec<(usize, f64)>> {
    graph
        .neighborhoods()
        .into_iter()
        .map(|nbrs| {
            let mut row: Vec<(usize, f64)> = nbrs
                .into_iter()
                .map(|(u, d)| (u as usize, if weighted { 1.0 / (1.0 + d / sigma) } else { 1.0 }))
                .collect();
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            for (_, w) in &mut row {
                *w /= total;
            }
            row
        })
        .collect()
}

/// The graph's feature columns standardized (or one-hot) against the
/// training-masked nodes, matching the matrix-side encoding convention.
fn encoder_from_graph(graph: &GeoGraph) -> Encoder {
    let train: Vec<usize> = (0..graph.n_nodes()).filter(|&v| graph.is_train[v]).collect();
    let nt = train.len().max(1) as f64;
    let columns: Vec<ColumnEncoding> = graph
        .schema
        .features
        .iter()
        .enumerate()
        .map(|(j, f)| match f.kind {
            FeatureKind::Continuous => {
                let mean = train.iter().map(|&v| graph.node_features[v][j]).sum::<f64>() / nt;
                let var =
                    train.iter().map(|&v| (graph.node_features[v][j] - mean).powi(2)).sum::<f64>() / nt;
                ColumnEncoding::Standardize { mean, std: var.sqrt() }
            }
            FeatureKind::Categorical => {
                ColumnEncoding::OneHot { size: f.vocabulary.as_ref().map_or(1, Vec::len) }
            }
        })
        .collect();
    let width = columns
        .iter()
        .map(|c| match c {
            ColumnEncoding::Standardize { .. } => 1,
            ColumnEncoding::OneHot { size } => *size,
        })
        .sum();
    Encoder { columns, width }
}

/// Parameters in update order: [pre, conv..., post_hidden, post_out].
fn init_params(input: usize, width: usize, hidden: usize, seed: u64) -> Vec<DenseLayer> {
    let dims = [(input, width), (width, width), (width, width), (width, hidden), (hidden, 1)];
    dims.iter()
        .enumerate()
        .map(|(k, &(n_in, n_out))| {
            let mut rng = crate::derive_rng(seed, "gcnn_init", k as u64);
            init_layer(n_in, n_out, k + 1 < dims.len(), &mut rng)
        })
        .collect()
}

/// Every intermediate activation of a full-graph pass, kept for backprop.
/// All stored vectors are post-rectifier except the final logits.
struct Trace {
    pre_out: Vec<Vec<f64>>,
    conv_agg: Vec<Vec<Vec<f64>>>,
    conv_out: Vec<Vec<Vec<f64>>>,
    post_hidden: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn aggregate(h: &[Vec<f64>], adj: &[Vec<(usize, f64)>]) -> Vec<Vec<f64>> {
    adj.iter()
        .map(|row| {
            let mut m = vec![0.0; h[0].len()];
            for &(u, w) in row {
                for (acc, v) in m.iter_mut().zip(&h[u]) {
                    *acc += w * v;
                }
            }
            m
        })
        .collect()
}

fn forward_pass(params: &[DenseLayer], x: &[Vec<f64>], adj: &[Vec<(usize, f64)>]) -> Trace {
    let pre_out: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            let mut z = affine(&params[0], row);
            relu_inplace(&mut z);
            z
        })
        .collect();

    let mut conv_agg = Vec::with_capacity(CONV_LAYERS);
    let mut conv_out: Vec<Vec<Vec<f64>>> = Vec::with_capacity(CONV_LAYERS);
    for c in 0..CONV_LAYERS {
        let h = if c == 0 { &pre_out } else { &conv_out[c - 1] };
        let m = aggregate(h, adj);
        let out: Vec<Vec<f64>> = m
            .iter()
            .map(|mv| {
                let mut z = affine(&params[1 + c], mv);
                relu_inplace(&mut z);
                z
            })
            .collect();
        conv_agg.push(m);
        conv_out.push(out);
    }

    let post_hidden: Vec<Vec<f64>> = conv_out[CONV_LAYERS - 1]
        .iter()
        .map(|hv| {
            let mut z = affine(&params[3], hv);
            relu_inplace(&mut z);
            z
        })
        .collect();
    let logits: Vec<f64> = post_hidden.iter().map(|pv| affine(&params[4], pv)[0]).collect();

    Trace { pre_out, conv_agg, conv_out, post_hidden, logits }
}

/// Mean log-loss over `fit` nodes plus its gradient for every parameter.
/// `grads` must be zeroed and shaped like `params`.
fn loss_and_grads(
    params: &[DenseLayer],
    trace: &Trace,
    x: &[Vec<f64>],
    adj: &[Vec<(usize, f64)>],
    y: &[u8],
    fit: &[usize],
    grads: &mut [DenseLayer],
) -> f64 {
    let n = x.len();
    let scale = 1.0 / fit.len() as f64;
    let mut loss = 0.0;
    let mut d_logit = vec![0.0; n];
    for &v in fit {
        let yv = y[v] as f64;
        loss += bce_logit(trace.logits[v], yv);
        d_logit[v] = (sigmoid(trace.logits[v]) - yv) * scale;
    }
    loss *= scale;

    let hidden = params[3].b.len();
    let width = params[0].b.len();

    // head: logit layer then the hidden dense layer
    let mut d_conv_top = vec![vec![0.0; width]; n];
    for v in 0..n {
        let dz = d_logit[v];
        if dz != 0.0 {
            grads[4].b[0] += dz;
            for (g, p) in grads[4].w[0].iter_mut().zip(&trace.post_hidden[v]) {
                *g += dz * p;
            }
        }
        let mut d_hidden = vec![0.0; hidden];
        for (dh, w) in d_hidden.iter_mut().zip(&params[4].w[0]) {
            *dh = dz * w;
        }
        for (dh, a) in d_hidden.iter_mut().zip(&trace.post_hidden[v]) {
            if *a <= 0.0 {
                *dh = 0.0;
            }
        }
        let top = &trace.conv_out[CONV_LAYERS - 1][v];
        for (o, &dh) in d_hidden.iter().enumerate() {
            if dh != 0.0 {
                grads[3].b[o] += dh;
                for (g, a) in grads[3].w[o].iter_mut().zip(top) {
                    *g += dh * a;
                }
                for (dc, w) in d_conv_top[v].iter_mut().zip(&params[3].w[o]) {
                    *dc += dh * w;
                }
            }
        }
    }

    // convolution layers, walking back through the adjacency each time
    let mut d_out = d_conv_top;
    for c in (0..CONV_LAYERS).rev() {
        let m = &trace.conv_agg[c];
        let out = &trace.conv_out[c];
        let mut d_below = vec![vec![0.0; width]; n];
        for v in 0..n {
            let mut d_m = vec![0.0; width];
            for o in 0..width {
                let mut dz = d_out[v][o];
                if out[v][o] <= 0.0 {
                    dz = 0.0;
                }
                if dz == 0.0 {
                    continue;
                }
                grads[1 + c].b[o] += dz;
                for (g, a) in grads[1 + c].w[o].iter_mut().zip(&m[v]) {
                    *g += dz * a;
                }
                for (dm, w) in d_m.iter_mut().zip(&params[1 + c].w[o]) {
                    *dm += dz * w;
                }
            }
            // transpose of the aggregation: credit flows to each neighbor
            for &(u, w) in &adj[v] {
                for (db, dm) in d_below[u].iter_mut().zip(&d_m) {
                    *db += w * dm;
                }
            }
        }
        d_out = d_below;
    }

    // preprocessing layer
    for v in 0..n {
        for o in 0..width {
            let mut dz = d_out[v][o];
            if trace.pre_out[v][o] <= 0.0 {
                dz = 0.0;
            }
            if dz == 0.0 {
                continue;
            }
            grads[0].b[o] += dz;
            for (g, a) in grads[0].w[o].iter_mut().zip(&x[v]) {
                *g += dz * a;
            }
        }
    }

    loss
}

/// Audits the backward pass: analytic gradients versus central finite
/// differences for every parameter, on a weighted 3-NN graph over
/// `n_samples` random nodes with two continuous features. Returns the
/// worst relative error; a healthy implementation stays far below 1e-4.
/// Needs at least 5 nodes for the 3-NN graph to exist.
pub fn gradient_check(n_samples: usize, seed: u64) -> f64 {
    use crate::features::{FeatureDef, FeatureSchema, FeatureSet, LabeledMatrix};
    use crate::geo::GeoPoint;
    use crate::graph::build_knn_graph;
    use rand::Rng;

    let mut rng = crate::derive_rng(seed, "gcnn_gradcheck", 0);
    let rows: Vec<Vec<f64>> =
        (0..n_samples).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let labels: Vec<u8> = (0..n_samples).map(|i| (i % 2) as u8).collect();
    let locations: Vec<GeoPoint> = (0..n_samples)
        .map(|_| {
            GeoPoint::new(20.0 + rng.gen_range(0.0..0.05), 35.0 + rng.gen_range(0.0..0.05))
                .expect("coordinates in range")
        })
        .collect();
    let schema = FeatureSchema {
        set: FeatureSet::Base7,
        features: (0..2)
            .map(|j| FeatureDef {
                name: format!("f{j}"),
                kind: FeatureKind::Continuous,
                unit: String::new(),
                vocabulary: None,
            })
            .collect(),
    };
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..2).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let stds: Vec<f64> = (0..2)
        .map(|j| (rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let matrix = LabeledMatrix {
        schema,
        ids: (0..n_samples as u64).collect(),
        locations,
        rows,
        labels,
        is_train: vec![true; n_samples],
        means,
        stds,
    };

    let graph = build_knn_graph(&matrix, 3).expect("graph over generated nodes");
    let encoder = encoder_from_graph(&graph);
    let x: Vec<Vec<f64>> = graph.node_features.iter().map(|r| encoder.encode_row(r)).collect();
    let sigma = median_edge_distance(&graph);
    let adj = normalized_adjacency(&graph, true, sigma);
    let fit: Vec<usize> = (0..graph.n_nodes()).collect();
    let params = init_params(encoder.width, 6, 4, seed.wrapping_add(1));

    let loss_of = |p: &[DenseLayer]| {
        let trace = forward_pass(p, &x, &adj);
        let mut scratch = zero_grads(p);
        loss_and_grads(p, &trace, &x, &adj, &graph.labels, &fit, &mut scratch)
    };

    let trace = forward_pass(&params, &x, &adj);
    let mut grads = zero_grads(&params);
    loss_and_grads(&params, &trace, &x, &adj, &graph.labels, &fit, &mut grads);

    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        for o in 0..params[k].b.len() {
            for i in 0..=params[k].w[o].len() {
                let analytic = if i < params[k].w[o].len() { grads[k].w[o][i] } else { grads[k].b[o] };
                let mut plus = params.clone();
                let mut minus = params.clone();
                if i < params[k].w[o].len() {
                    plus[k].w[o][i] += h;
                    minus[k].w[o][i] -= h;
                } else {
                    plus[k].b[o] += h;
                    minus[k].b[o] -= h;
                }
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

pub fn train_gcnn(graph: &GeoGraph, cfg: &TrainConfig, weighted: bool) -> Result<TrainedModel> {
    cfg.validate()?;
    let train: Vec<usize> = (0..graph.n_nodes()).filter(|&v| graph.is_train[v]).collect();
    if train.len() < 2 {
        return Err(Error::InvalidParameter(format!("{} training nodes, need at least 2", train.len())));
    }
    check_two_classes(&graph.labels, &graph.is_train)?;

    let encoder = encoder_from_graph(graph);
    let x: Vec<Vec<f64>> = graph.node_features.iter().map(|r| encoder.encode_row(r)).collect();
    let sigma = median_edge_distance(graph);
    let adj = normalized_adjacency(graph, weighted, sigma);
    let (fit, val) = stratified_val_split(&graph.labels, &train, cfg.nn_val_fraction, cfg.seed, "gcnn_val");

    let mut params = init_params(encoder.width, cfg.gcnn_width, cfg.nn_hidden.1, cfg.seed);
    let mut opt = AdamW::new(param_count(&params), cfg.gcnn_learning_rate, cfg.nn_weight_decay);
    let mut stopper = EarlyStopper::new(cfg.nn_patience);
    let mut best = params.clone();
    let monitor = if val.is_empty() { &fit } else { &val };

    let mut trace = forward_pass(&params, &x, &adj);
    for epoch in 1..=cfg.nn_max_epochs {
        let mut grads = zero_grads(&params);
        let loss = loss_and_grads(&params, &trace, &x, &adj, &graph.labels, &fit, &mut grads);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite training loss at epoch {epoch}")));
        }
        opt.step(&mut params, &grads);
        trace = forward_pass(&params, &x, &adj);

        let hits = monitor
            .iter()
            .filter(|&&v| u8::from(sigmoid(trace.logits[v]) >= 0.5) == graph.labels[v])
            .count();
        if stopper.observe(epoch, hits as f64 / monitor.len() as f64) {
            best = params.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }

    let mut it = best.into_iter();
    let pre = it.next().expect("five layers");
    let conv: Vec<DenseLayer> = it.by_ref().take(CONV_LAYERS).collect();
    let post: Vec<DenseLayer> = it.collect();
    Ok(TrainedModel {
        kind: if weighted { ModelKind::GcnnWeighted } else { ModelKind::Gcnn },
        schema_fingerprint: schema_fingerprint(&graph.schema),
        config: cfg.clone(),
        encoder,
        params: ModelParams::Gcnn { pre, conv, post, weighted, sigma },
    })
}

/// Full-graph forward pass with the stored parameters; one probability per
/// node. The adjacency is rebuilt from the given graph using the training
/// sigma, so predictions on new graphs reuse the learned distance scale.
pub(crate) fn forward_full(model: &TrainedModel, graph: &GeoGraph) -> Vec<f64> {
    let ModelParams::Gcnn { pre, conv, post, weighted, sigma } = &model.params else {
        unreachable!("caller matched the graph variant")
    };
    let x: Vec<Vec<f64>> = graph.node_features.iter().map(|r| model.encoder.encode_row(r)).collect();
    let adj = normalized_adjacency(graph, *weighted, *sigma);
    let mut params: Vec<DenseLayer> = Vec::with_capacity(2 + conv.len() + post.len());
    params.push(pre.clone());
    params.extend(conv.iter().cloned());
    params.extend(post.iter().cloned());
    let trace = forward_pass(&params, &x, &adj);
    trace.logits.into_iter().map(sigmoid).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_knn_graph;
    use crate::models::test_support::matrix_with_mask;
    use rand::Rng;

    fn small_cfg() -> TrainConfig {
        TrainConfig { gcnn_width: 8, nn_hidden: (8, 4), nn_max_epochs: 200, ..TrainConfig::default() }
    }

    /// Runs of five consecutive lattice nodes share a label, so k-NN
    /// neighbors mostly agree with each other, and the first feature
    /// separates the classes by a wide margin.
    fn cluster_matrix(n: usize, masked: bool) -> crate::features::LabeledMatrix {
        let mut rng = crate::derive_rng(21, "gcnn_clusters", 0);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let hazard = i % 10 < 5;
            let base = if hazard { 0.0 } else { 3000.0 };
            rows.push(vec![base + rng.gen_range(0.0..800.0), rng.gen_range(0.0..1000.0)]);
            labels.push(u8::from(hazard));
        }
        let mask: Vec<bool> = (0..n).map(|i| !masked || i % 4 != 3).collect();
        matrix_with_mask(rows, labels, mask)
    }

    #[test]
    fn self_loop_only_graph_isolates_every_node() {
        let m = cluster_matrix(10, false);
        let mut graph = build_knn_graph(&m, 3).unwrap();
        // strip the spatial edges, keeping just the self-loops
        let kept: Vec<((u32, u32), f64)> = graph
            .edge_list
            .iter()
            .zip(&graph.edge_weights)
            .filter(|((s, t), _)| s == t)
            .map(|(e, w)| (*e, *w))
            .collect();
        graph.edge_list = kept.iter().map(|(e, _)| *e).collect();
        graph.edge_weights = kept.iter().map(|(_, w)| *w).collect();

        let model = train_gcnn(&graph, &small_cfg(), false).unwrap();
        let before = model.predict_graph(&graph).unwrap();

        // scrambling every other node's features must not move node 0
        let mut scrambled = graph.clone();
        for v in 1..scrambled.n_nodes() {
            for f in &mut scrambled.node_features[v] {
                *f = -*f + 17.0;
            }
        }
        let after = model.predict_graph(&scrambled).unwrap();
        assert_eq!(before[0], after[0]);
    }

    #[test]
    fn identical_features_give_identical_outputs() {
        let mut m = cluster_matrix(12, false);
        for row in &mut m.rows {
            *row = vec![5.0, -2.0];
        }
        let graph = build_knn_graph(&m, 4).unwrap();
        let model = train_gcnn(&graph, &small_cfg(), true).unwrap();
        let probs = model.predict_graph(&graph).unwrap();
        let (lo, hi) = probs.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(*p), h.max(*p)));
        assert!(hi - lo < 1e-12, "outputs spread {lo}..{hi}");
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let worst = gradient_check(12, 13);
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn learns_spatially_clustered_labels_transductively() {
        let m = cluster_matrix(80, true);
        let graph = build_knn_graph(&m, 5).unwrap();
        let model = train_gcnn(&graph, &small_cfg(), false).unwrap();
        let probs = model.predict_graph(&graph).unwrap();
        let test: Vec<usize> = (0..graph.n_nodes()).filter(|&v| !graph.is_train[v]).collect();
        let hits = test
            .iter()
            .filter(|&&v| u8::from(probs[v] >= 0.5) == graph.labels[v])
            .count();
        let acc = hits as f64 / test.len() as f64;
        assert!(acc >= 0.9, "held-out accuracy {acc}");
    }

    #[test]
    fn weighted_variant_stores_the_median_distance_scale() {
        let m = cluster_matrix(20, false);
        let graph = build_knn_graph(&m, 4).unwrap();
        let model = train_gcnn(&graph, &small_cfg(), true).unwrap();
        let ModelParams::Gcnn { weighted, sigma, .. } = &model.params else { unreachable!() };
        assert!(*weighted);
        assert!((sigma - median_edge_distance(&graph)).abs() < 1e-9);
        assert!(*sigma > 0.0);
        assert_eq!(model.kind, ModelKind::GcnnWeighted);
    }

    #[test]
    fn adjacency_rows_are_normalized_and_self_heavy() {
        let m = cluster_matrix(15, false);
        let graph = build_knn_graph(&m, 3).unwrap();
        let adj = normalized_adjacency(&graph, true, median_edge_distance(&graph));
        for (v, row) in adj.iter().enumerate() {
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-12);
            let self_w = row.iter().find(|(u, _)| *u == v).expect("self-loop present").1;
            for &(u, w) in row {
                if u != v {
                    assert!(self_w >= w, "node {v}: self {self_w} < neighbor {w}");
                }
            }
        }
    }

    #[test]
    fn rejects_single_class_training_nodes() {
        let mut m = cluster_matrix(12, false);
        m.labels = vec![1; 12];
        let graph = build_knn_graph(&m, 3).unwrap();
        assert!(matches!(
            train_gcnn(&graph, &small_cfg(), false),
            Err(crate::Error::SingleClassData)
        ));
    }

    #[test]
    fn same_seed_reproduces_the_model_bit_for_bit() {
        let m = cluster_matrix(24, true);
        let graph = build_knn_graph(&m, 4).unwrap();
        let cfg = TrainConfig { nn_max_epochs: 30, ..small_cfg() };
        let a = train_gcnn(&graph, &cfg, true).unwrap();
        let b = train_gcnn(&graph, &cfg, true).unwrap();
        assert_eq!(serde_json::to_string(&a.params).unwrap(), serde_json::to_string(&b.params).unwrap());
    }
}
