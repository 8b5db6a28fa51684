//! Undirected attributed graphs with node labels.
//!
//! The container validates its structural invariants on construction:
//! edges are deduplicated, self-loops dropped, endpoints in range, and
//! every node carries a label inside the declared class range.

pub mod io;
pub mod sbm;

pub use io::{load_dataset, load_graph, save_dataset, LoadReport};
pub use sbm::sbm_generate;

use crate::error::{Error, Result};
use crate::num::{DenseMat, SparseMat};

/// An undirected graph with dense feature rows and one label per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    /// Canonical edge list: `src < dst`, sorted, unique.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbor list per node.
    neighbors: Vec<Vec<usize>>,
    features: DenseMat,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    /// Builds a graph, canonicalizing the edge list. Self-loops are dropped
    /// and duplicate or reversed copies of an edge collapse into one.
    pub fn new(
        num_classes: usize,
        features: DenseMat,
        labels: Vec<usize>,
        raw_edges: &[(usize, usize)],
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::Validation(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Validation("num_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        let mut edges = Vec::with_capacity(raw_edges.len());
        for &(a, b) in raw_edges {
            if a >= n || b >= n {
                return Err(Error::Validation(format!(
                    "edge ({a},{b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                continue;
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        edges.dedup();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Graph {
            n,
            edges,
            neighbors,
            features,
            labels,
            num_classes,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &DenseMat {
        &self.features
    }

    /// Features converted to CSR, for sparse-side products.
    pub fn features_csr(&self) -> SparseMat {
        SparseMat::from_dense(&self.features)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> usize {
        self.labels[v]
    }

    /// Number of incident edges. Errors on an out-of-range node.
    pub fn degree(&self, v: usize) -> Result<usize> {
        self.check_node(v)?;
        Ok(self.neighbors[v].len())
    }

    /// Sorted neighbor ids. Errors on an out-of-range node.
    pub fn neighbors(&self, v: usize) -> Result<&[usize]> {
        self.check_node(v)?;
        Ok(&self.neighbors[v])
    }

    fn check_node(&self, v: usize) -> Result<()> {
        if v >= self.n {
            return Err(Error::contract(format!(
                "node {v} outside 0..{}",
                self.n
            )));
        }
        Ok(())
    }

    /// Node ids of every class, each list ascending.
    pub fn members_per_class(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_classes];
        for (v, &y) in self.labels.iter().enumerate() {
            members[y].push(v);
        }
        members
    }

    /// Number of nodes per class over the whole graph.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Symmetrically normalized adjacency with self-loops:
    /// entry `(i, j)` is `1 / sqrt((deg_i + 1) * (deg_j + 1))` for every
    /// edge and every diagonal position.
    pub fn normalized_adjacency(&self) -> SparseMat {
        let inv_sqrt: Vec<f64> = (0..self.n)
            .map(|v| 1.0 / ((self.neighbors[v].len() + 1) as f64).sqrt())
            .collect();
        let mut triplets = Vec::with_capacity(2 * self.edges.len() + self.n);
        for v in 0..self.n {
            triplets.push((v, v, inv_sqrt[v] * inv_sqrt[v]));
        }
        for &(a, b) in &self.edges {
            let w = inv_sqrt[a] * inv_sqrt[b];
            triplets.push((a, b, w));
            triplets.push((b, a, w));
        }
        SparseMat::from_triplets(self.n, self.n, &triplets)
            .expect("triplets constructed in range")
    }

    /// The `k` nodes most feature-similar to `v` by cosine similarity,
    /// excluding `v` itself. Ties break toward the lower node id; zero-norm
    /// rows have similarity zero to everything. Requires `k < n`.
    pub fn knn_by_feature(&self, v: usize, k: usize) -> Result<Vec<usize>> {
        self.check_node(v)?;
        if k >= self.n {
            return Err(Error::contract(format!(
                "knn k={k} must be below n={}",
                self.n
            )));
        }
        let target = self.features.row(v);
        let target_norm = norm(target);
        let mut scored: Vec<(f64, usize)> = (0..self.n)
            .filter(|&u| u != v)
            .map(|u| {
                let row = self.features.row(u);
                let n2 = norm(row);
                let sim = if target_norm == 0.0 || n2 == 0.0 {
                    0.0
                } else {
                    dot(target, row) / (target_norm * n2)
                };
                (sim, u)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        Ok(scored.into_iter().take(k).map(|(_, u)| u).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity between two equal-length vectors; zero when either
/// has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn path_graph(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::new(
            2,
            DenseMat::zeros(n, 3),
            (0..n).map(|v| v % 2).collect(),
            &edges,
        )
        .unwrap()
    }

    #[test]
    fn single_node_normalization_is_identity() {
        let g = Graph::new(1, DenseMat::zeros(1, 2), vec![0], &[]).unwrap();
        let a = g.normalized_adjacency();
        assert_eq!(a.to_dense(), DenseMat::from_rows(&[vec![1.0]]).unwrap());
    }

    #[test]
    fn two_connected_nodes_normalize_to_half_everywhere() {
        let g = Graph::new(1, DenseMat::zeros(2, 2), vec![0, 0], &[(0, 1)]).unwrap();
        let a = g.normalized_adjacency().to_dense();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.get(i, j) - 0.5).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn normalization_matches_degree_formula_and_is_symmetric() {
        let mut rng = ChaCha20Rng::seed_from_u64(51);
        let n = 8;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(0.4) {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::new(1, DenseMat::zeros(n, 2), vec![0; n], &edges).unwrap();
        let a = g.normalized_adjacency().to_dense();
        for i in 0..n {
            for j in 0..n {
                let connected = i == j || edges.contains(&(i.min(j), i.max(j)));
                let want = if connected {
                    let di = g.degree(i).unwrap() as f64 + 1.0;
                    let dj = g.degree(j).unwrap() as f64 + 1.0;
                    1.0 / (di * dj).sqrt()
                } else {
                    0.0
                };
                assert!((a.get(i, j) - want).abs() <= 1e-12);
                assert_eq!(a.get(i, j).to_bits(), a.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn degree_counts_incident_edges() {
        // A star: node 0 joined to six leaves, plus one isolated node.
        let edges: Vec<(usize, usize)> = (1..=6).map(|v| (0, v)).collect();
        let g = Graph::new(1, DenseMat::zeros(8, 2), vec![0; 8], &edges).unwrap();
        assert_eq!(g.degree(0).unwrap(), 6);
        assert_eq!(g.degree(3).unwrap(), 1);
        assert_eq!(g.degree(7).unwrap(), 0);
        assert!(g.degree(8).is_err());
    }

    #[test]
    fn degree_sum_equals_twice_edge_count() {
        let mut rng = ChaCha20Rng::seed_from_u64(53);
        let n = 20;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(0.2) {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::new(1, DenseMat::zeros(n, 2), vec![0; n], &edges).unwrap();
        let total: usize = (0..n).map(|v| g.degree(v).unwrap()).sum();
        assert_eq!(total, 2 * g.num_edges());
    }

    #[test]
    fn duplicate_and_reversed_edges_collapse() {
        let g = Graph::new(
            1,
            DenseMat::zeros(3, 1),
            vec![0; 3],
            &[(0, 1), (1, 0), (0, 1), (2, 2)],
        )
        .unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.degree(2).unwrap(), 0);
    }

    #[test]
    fn knn_prefers_an_identical_row() {
        let mut features = DenseMat::zeros(4, 3);
        features.row_mut(0).copy_from_slice(&[1.0, 2.0, 3.0]);
        features.row_mut(1).copy_from_slice(&[-1.0, 0.5, 0.0]);
        features.row_mut(2).copy_from_slice(&[1.0, 2.0, 3.0]);
        features.row_mut(3).copy_from_slice(&[3.0, -1.0, 1.0]);
        let g = Graph::new(1, features, vec![0; 4], &[]).unwrap();
        assert_eq!(g.knn_by_feature(0, 1).unwrap(), vec![2]);
    }

    #[test]
    fn knn_ties_break_toward_lower_ids() {
        // All rows one-hot on distinct axes: every pairwise similarity is 0.
        let g = Graph::new(1, DenseMat::identity(4), vec![0; 4], &[]).unwrap();
        assert_eq!(g.knn_by_feature(2, 3).unwrap(), vec![0, 1, 3]);
    }

    #[test]
    fn knn_matches_exhaustive_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(57);
        let n = 10;
        let data: Vec<f64> = (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = Graph::new(
            1,
            DenseMat::from_flat(n, 4, data).unwrap(),
            vec![0; n],
            &[],
        )
        .unwrap();
        for v in 0..n {
            let got = g.knn_by_feature(v, 3).unwrap();
            let mut oracle: Vec<(f64, usize)> = (0..n)
                .filter(|&u| u != v)
                .map(|u| {
                    (
                        cosine_similarity(g.features().row(v), g.features().row(u)),
                        u,
                    )
                })
                .collect();
            oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<usize> = oracle.into_iter().take(3).map(|(_, u)| u).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn knn_is_deterministic_and_bounds_checked() {
        let g = path_graph(5);
        assert_eq!(
            g.knn_by_feature(1, 2).unwrap(),
            g.knn_by_feature(1, 2).unwrap()
        );
        assert!(g.knn_by_feature(1, 5).is_err());
        assert!(g.knn_by_feature(9, 2).is_err());
    }

    #[test]
    fn label_outside_range_is_rejected() {
        assert!(Graph::new(2, DenseMat::zeros(2, 1), vec![0, 2], &[]).is_err());
    }

    #[test]
    fn edge_outside_range_is_rejected() {
        assert!(Graph::new(1, DenseMat::zeros(2, 1), vec![0, 0], &[(0, 5)]).is_err());
    }
}
