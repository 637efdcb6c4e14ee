//! Location-based graph over sample points: each node connects to its five
//! nearest neighbors by great-circle distance, the edge set is symmetrized,
//! and every node gets one zero-weight self-loop.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::error::Error;
use crate::features::{FeatureSchema, LabeledMatrix};
use crate::geo::GeoPoint;
use crate::index::build_index;
use crate::Result;

/// Node-and-edge view of a labeled matrix. Edges are canonically sorted by
/// (source, target); weights are meters and symmetric. Node order follows
/// the matrix rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoGraph {
    pub node_features: Vec<Vec<f64>>,
    pub edge_list: Vec<(u32, u32)>,
    pub edge_weights: Vec<f64>,
    pub labels: Vec<u8>,
    pub ids: Vec<u64>,
    pub locations: Vec<GeoPoint>,
    pub is_train: Vec<bool>,
    pub schema: FeatureSchema,
}

/// Raw directed k-NN edge list: exactly `k` out-edges per node, no
/// self-edges, weights = haversine meters. Ties rank by node index, so the
/// result does not depend on input ordering or thread count.
pub fn knn_edges(locations: &[GeoPoint], k: usize) -> Result<Vec<(u32, u32, f64)>> {
    if locations.len() <= k {
        return Err(Error::TooFewNodes { nodes: locations.len(), k });
    }
    let index = build_index(locations.iter().enumerate().map(|(i, p)| (i as u64, *p)))?;
    let per_node: Vec<Vec<(u64, f64)>> = locations
        .par_iter()
        .enumerate()
        .map(|(i, p)| index.knn_excluding(*p, k, Some(i as u64)).expect("k < node count"))
        .collect();
    let mut edges = Vec::with_capacity(locations.len() * k);
    for (i, nbrs) in per_node.into_iter().enumerate() {
        for (j, d) in nbrs {
            edges.push((i as u32, j as u32, d));
        }
    }
    Ok(edges)
}

/// Builds the symmetrized k-NN graph over the matrix rows: directed k-NN
/// edges, mirror edges added, then one self-loop per node with weight 0.
pub fn build_knn_graph(matrix: &LabeledMatrix, k: usize) -> Result<GeoGraph> {
    let mut adjacency: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for (i, j, d) in knn_edges(&matrix.locations, k)? {
        adjacency.insert((i, j), d);
        adjacency.insert((j, i), d);
    }
    for i in 0..matrix.n_rows() as u32 {
        adjacency.insert((i, i), 0.0);
    }
    let (edge_list, edge_weights) = adjacency.into_iter().unzip();
    Ok(GeoGraph {
        node_features: matrix.rows.clone(),
        edge_list,
        edge_weights,
        labels: matrix.labels.clone(),
        ids: matrix.ids.clone(),
        locations: matrix.locations.clone(),
        is_train: matrix.is_train.clone(),
        schema: matrix.schema.clone(),
    })
}

impl GeoGraph {
    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_list.len()
    }

    /// Neighbor lists (including the self-loop), built from the canonical
    /// edge order. Entry `v` holds (neighbor, weight) pairs.
    pub fn neighborhoods(&self) -> Vec<Vec<(u32, f64)>> {
        let mut nbrs = vec![Vec::new(); self.n_nodes()];
        for (e, w) in self.edge_list.iter().zip(&self.edge_weights) {
            nbrs[e.0 as usize].push((e.1, *w));
        }
        nbrs
    }

    /// Writes `<stem>_nodes.csv`, `<stem>_edges.csv` and
    /// `<stem>_weights.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path, stem: &str) -> Result<()> {
        let write = |name: String, body: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
        };
        let mut nodes = String::from("node,id,lon,lat,label,train\n");
        for i in 0..self.n_nodes() {
            nodes.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                self.ids[i],
                self.locations[i].lon,
                self.locations[i].lat,
                self.labels[i],
                u8::from(self.is_train[i])
            ));
        }
        write(format!("{stem}_nodes.csv"), nodes)?;
        let mut edges = String::from("source,target\n");
        for (s, t) in &self.edge_list {
            edges.push_str(&format!("{s},{t}\n"));
        }
        write(format!("{stem}_edges.csv"), edges)?;
        let mut weights = String::from("weight\n");
        for w in &self.edge_weights {
            weights.push_str(&format!("{w}\n"));
        }
        write(format!("{stem}_weights.csv"), weights)
    }
}
