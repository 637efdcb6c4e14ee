//! Exact nearest-neighbor queries over geographic hub sets.
//!
//! Hubs are embedded on the spherical Earth in 3-D and indexed with a k-d
//! tree on those coordinates. Chord distance is strictly monotone in
//! great-circle distance, so subtree pruning against a chord bound (padded
//! by 1e-9 relative slack for formula rounding) can never discard a true
//! neighbor, and final candidates are ranked by exact haversine distance
//! with ties broken by the smaller hub id. Results are therefore exactly
//! those of a brute-force haversine scan, at any layer extent.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::Error;
use crate::geo::{haversine_distance, GeoPoint, EARTH_RADIUS_M};
use crate::Result;

const LEAF_SIZE: usize = 16;
/// Relative pad applied to squared chord bounds; covers the rounding gap
/// between the 3-D embedding and the trigonometric chord formula.
const CHORD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Entry {
    xyz: [f64; 3],
    id: u64,
    point: GeoPoint,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

/// Spatial index over (id, location) hubs; query answers match a
/// brute-force haversine scan exactly, including tie-breaks.
#[derive(Debug, Clone)]
pub struct HubIndex {
    entries: Vec<Entry>,
    nodes: Vec<Node>,
    root: u32,
}

fn to_xyz(p: GeoPoint) -> [f64; 3] {
    let lat = p.lat.to_radians();
    let lon = p.lon.to_radians();
    let c = lat.cos();
    [EARTH_RADIUS_M * c * lon.cos(), EARTH_RADIUS_M * c * lon.sin(), EARTH_RADIUS_M * lat.sin()]
}

fn chord_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Squared chord length subtended by a great-circle distance.
fn chord_sq_of_haversine(d: f64) -> f64 {
    let half = (d / (2.0 * EARTH_RADIUS_M)).sin();
    let chord = 2.0 * EARTH_RADIUS_M * half;
    chord * chord
}

/// Candidate ordered by (distance, id); the heap keeps the worst on top.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    id: u64,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.partial_cmp(&other.dist).expect("finite distances").then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Builds the index. Construction is deterministic in the input set (the
/// tree shape depends only on coordinates and ids, never on input order).
pub fn build_index(hubs: impl IntoIterator<Item = (u64, GeoPoint)>) -> Result<HubIndex> {
    let mut entries: Vec<Entry> =
        hubs.into_iter().map(|(id, point)| Entry { xyz: to_xyz(point), id, point }).collect();
    if entries.is_empty() {
        return Err(Error::InvalidParameter("cannot build an index over zero hubs".into()));
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let mut nodes = Vec::with_capacity(2 * entries.len() / LEAF_SIZE + 2);
    let n = entries.len();
    let root = build_node(&mut entries, &mut nodes, 0, n);
    Ok(HubIndex { entries, nodes, root })
}

fn build_node(entries: &mut [Entry], nodes: &mut Vec<Node>, start: usize, end: usize) -> u32 {
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start: start as u32, end: end as u32 });
        return (nodes.len() - 1) as u32;
    }
    // split the widest axis at its median element
    let slice = &mut entries[start..end];
    let mut lo = [f64::MAX; 3];
    let mut hi = [f64::MIN; 3];
    for e in slice.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(e.xyz[a]);
            hi[a] = hi[a].max(e.xyz[a]);
        }
    }
    let axis = (0..3).max_by(|&i, &j| (hi[i] - lo[i]).partial_cmp(&(hi[j] - lo[j])).unwrap()).unwrap();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| {
        a.xyz[axis].partial_cmp(&b.xyz[axis]).unwrap().then(a.id.cmp(&b.id))
    });
    let value = slice[mid].xyz[axis];
    let placeholder = nodes.len();
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build_node(entries, nodes, start, start + mid);
    let right = build_node(entries, nodes, start + mid, end);
    nodes[placeholder] = Node::Split { axis: axis as u8, value, left, right };
    placeholder as u32
}

impl HubIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The closest hub to `q` as (id, great-circle distance in meters).
    pub fn nearest(&self, q: GeoPoint) -> (u64, f64) {
        let r = self.knn(q, 1).expect("index is nonempty");
        r[0]
    }

    /// The `k` closest hubs, ascending by (distance, id).
    pub fn knn(&self, q: GeoPoint, k: usize) -> Result<Vec<(u64, f64)>> {
        self.knn_excluding(q, k, None)
    }

    /// `knn` with one id excluded, for self-queries within the indexed set.
    pub fn knn_excluding(&self, q: GeoPoint, k: usize, exclude: Option<u64>) -> Result<Vec<(u64, f64)>> {
        let available = self.entries.len() - usize::from(exclude.map_or(false, |id| self.entries.iter().any(|e| e.id == id)));
        if k > available {
            return Err(Error::KTooLarge { k, available });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let qxyz = to_xyz(q);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(self.root, &qxyz, q, k, exclude, &mut heap);
        Ok(heap.into_sorted_vec().into_iter().map(|c| (c.id, c.dist)).collect())
    }

    fn search(
        &self,
        node: u32,
        qxyz: &[f64; 3],
        q: GeoPoint,
        k: usize,
        exclude: Option<u64>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let bound = |heap: &BinaryHeap<Candidate>| -> f64 {
            if heap.len() < k {
                f64::MAX
            } else {
                chord_sq_of_haversine(heap.peek().unwrap().dist) * (1.0 + CHORD_SLACK)
            }
        };
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for e in &self.entries[*start as usize..*end as usize] {
                    if exclude == Some(e.id) {
                        continue;
                    }
                    if chord_sq(qxyz, &e.xyz) <= bound(heap) {
                        let cand = Candidate { dist: haversine_distance(q, e.point), id: e.id };
                        if heap.len() < k {
                            heap.push(cand);
                        } else if cand < *heap.peek().unwrap() {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = qxyz[*axis as usize] - value;
                let (near, far) = if diff < 0.0 { (*left, *right) } else { (*right, *left) };
                self.search(near, qxyz, q, k, exclude, heap);
                if diff * diff <= bound(heap) {
                    self.search(far, qxyz, q, k, exclude, heap);
                }
            }
        }
    }
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pt(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint::new(lon, lat).unwrap()
    }

    fn brute_knn(hubs: &[(u64, GeoPoint)], q: GeoPoint, k: usize, exclude: Option<u64>) -> Vec<(u64, f64)> {
        let mut all: Vec<(u64, f64)> = hubs
            .iter()
            .filter(|(id, _)| exclude != Some(*id))
            .map(|(id, p)| (*id, haversine_distance(q, *p)))
            .collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    /// Mixed clustered + uniform hubs, the shape real layers have.
    fn random_hubs(n: usize, seed: u64) -> Vec<(u64, GeoPoint)> {
        let mut rng = crate::derive_rng(seed, "index_hubs", 0);
        let mut hubs = Vec::with_capacity(n);
        let clusters: Vec<(f64, f64)> =
            (0..8).map(|_| (rng.gen_range(9.0..11.0), rng.gen_range(33.0..35.0))).collect();
        for i in 0..n {
            let p = if i % 3 == 0 {
                pt(rng.gen_range(8.0..12.0), rng.gen_range(32.0..36.0))
            } else {
                let (clon, clat) = clusters[rng.gen_range(0..clusters.len())];
                pt(clon + rng.gen_range(-0.05..0.05), clat + rng.gen_range(-0.05..0.05))
            };
            hubs.push((i as u64, p));
        }
        hubs
    }

    #[test]
    fn knn_matches_brute_force_exactly() {
        let hubs = random_hubs(500, 21);
        let index = build_index(hubs.clone()).unwrap();
        let mut rng = crate::derive_rng(22, "index_queries", 0);
        for _ in 0..200 {
            let q = pt(rng.gen_range(8.0..12.0), rng.gen_range(32.0..36.0));
            for k in [1usize, 5, 17] {
                let got = index.knn(q, k).unwrap();
                let want = brute_knn(&hubs, q, k, None);
                assert_eq!(got.len(), want.len());
                for (g, w) in got.iter().zip(&want) {
                    assert_eq!(g.0, w.0, "hub id differs at k={k}");
                    assert_eq!(g.1.to_bits(), w.1.to_bits(), "distance differs at k={k}");
                }
            }
        }
    }

    #[test]
    fn nearest_tie_breaks_on_smaller_id() {
        // two hubs mirror-symmetric about the query: identical distances
        let hubs = vec![(7u64, pt(1.0, 0.0)), (3u64, pt(-1.0, 0.0))];
        let index = build_index(hubs).unwrap();
        let (id, d) = index.nearest(pt(0.0, 0.0));
        assert_eq!(id, 3);
        assert!((d - 111_194.93).abs() < 0.01);
    }

    #[test]
    fn knn_excluding_skips_the_query_hub() {
        let hubs = random_hubs(100, 23);
        let index = build_index(hubs.clone()).unwrap();
        for (id, p) in hubs.iter().take(20) {
            let got = index.knn_excluding(*p, 5, Some(*id)).unwrap();
            let want = brute_knn(&hubs, *p, 5, Some(*id));
            assert_eq!(got, want);
            assert!(got.iter().all(|(gid, _)| gid != id));
        }
    }

    #[test]
    fn k_too_large_is_rejected() {
        let hubs = random_hubs(10, 24);
        let index = build_index(hubs).unwrap();
        match index.knn(pt(10.0, 34.0), 11) {
            Err(Error::KTooLarge { k, available }) => {
                assert_eq!((k, available), (11, 10));
            }
            other => panic!("expected KTooLarge, got {other:?}"),
        }
        match index.knn_excluding(pt(10.0, 34.0), 10, Some(4)) {
            Err(Error::KTooLarge { available, .. }) => assert_eq!(available, 9),
            other => panic!("expected KTooLarge with exclusion, got {other:?}"),
        }
    }

    #[test]
    fn empty_hub_set_is_rejected() {
        assert!(build_index(Vec::new()).is_err());
    }

    #[test]
    fn index_is_insertion_order_invariant() {
        let mut hubs = random_hubs(300, 25);
        let index_a = build_index(hubs.clone()).unwrap();
        hubs.reverse();
        let index_b = build_index(hubs).unwrap();
        let mut rng = crate::derive_rng(26, "index_order", 0);
        for _ in 0..50 {
            let q = pt(rng.gen_range(8.0..12.0), rng.gen_range(32.0..36.0));
            assert_eq!(index_a.knn(q, 7).unwrap(), index_b.knn(q, 7).unwrap());
        }
    }

    #[test]
    fn duplicate_locations_rank_by_id() {
        let p = pt(10.0, 34.0);
        let hubs = vec![(9u64, p), (2u64, p), (5u64, p), (1u64, pt(10.5, 34.0))];
        let index = build_index(hubs).unwrap();
        let got = index.knn(pt(10.0001, 34.0), 3).unwrap();
        assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), vec![2, 5, 9]);
    }
}
