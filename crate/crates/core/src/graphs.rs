//! Node neighbourhoods: feature-space kNN and prior-frame positional
//! encoding, plus the normalised propagation matrices built from them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, SparseMatrix};

/// Weight given to a node's edge onto itself in a prior-frame graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SelfWeightMode {
    /// `w_ii = k + 1`
    Sequential,
    /// `w_ii = 1`
    SequentialStar,
}

impl SelfWeightMode {
    pub fn self_weight(self, k: usize) -> f64 {
        match self {
            SelfWeightMode::Sequential => (k + 1) as f64,
            SelfWeightMode::SequentialStar => 1.0,
        }
    }
}

/// Node features together with a weighted adjacency.
///
/// `adjacency[(i, j)]` is the weight of the edge carrying information from
/// node `j` into node `i`. Undirected graphs store both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub features: Matrix,
    pub adjacency: SparseMatrix,
    pub directed: bool,
    /// `(start, length)` of each independent sequence.
    pub sequence_bounds: Vec<(usize, usize)>,
}

impl Graph {
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    /// Prior-frame graph over `features` with the given sequence layout.
    pub fn prior_frame(
        features: Matrix,
        sequence_bounds: &[(usize, usize)],
        k: usize,
        mode: SelfWeightMode,
    ) -> Result<Graph> {
        let adjacency = build_prior_frame_graph(sequence_bounds, k, mode)?;
        if adjacency.rows() != features.rows() {
            return Err(Error::shape(
                "Graph::prior_frame",
                format!(
                    "{} sequence frames for {} feature rows",
                    adjacency.rows(),
                    features.rows()
                ),
            ));
        }
        Ok(Graph {
            features,
            adjacency,
            directed: true,
            sequence_bounds: sequence_bounds.to_vec(),
        })
    }
}

/// Left-multiplication operator applied to node features by a graph
/// convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationMatrix(Arc<SparseMatrix>);

impl PropagationMatrix {
    pub fn identity(n: usize) -> Self {
        PropagationMatrix(Arc::new(SparseMatrix::identity(n)))
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.0
    }

    pub fn shared(&self) -> Arc<SparseMatrix> {
        Arc::clone(&self.0)
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }
}

/// Euclidean k-nearest-neighbour graph, symmetrised by union, with unit
/// weights and unit self-loops. Distance ties go to the lower node index.
pub fn build_knn_graph(features: &Matrix, k: usize) -> Result<Graph> {
    let n = features.rows();
    if k == 0 || k >= n {
        return Err(Error::Param(format!("kNN needs 1 <= k < N, got k={k} for N={n}")));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("kNN input features".into()));
    }
    let mut triplets = Vec::with_capacity(n * (2 * k + 1));
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        candidates.clear();
        let xi = features.row(i);
        for j in (0..n).filter(|&j| j != i) {
            let d: f64 = xi.iter().zip(features.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            candidates.push((d, j));
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &candidates[..k] {
            triplets.push((i, j, 1.0));
            triplets.push((j, i, 1.0));
        }
        triplets.push((i, i, 1.0));
    }
    // Union: duplicates were summed, so clamp back to unit weight.
    let adjacency = SparseMatrix::from_triplets(n, n, triplets)?.map_values(|_, _, _| 1.0);
    Ok(Graph {
        features: features.clone(),
        adjacency,
        directed: false,
        sequence_bounds: vec![(0, n)],
    })
}

/// Prior-frame adjacency: node `i` receives an edge from each of its (up to)
/// `k` previous frames `j` in the same sequence with weight `k + 1 - d_ij`,
/// plus a self-loop weighted according to `mode`.
///
/// `sequence_bounds` must tile `0..N` contiguously in order.
pub fn build_prior_frame_graph(
    sequence_bounds: &[(usize, usize)],
    k: usize,
    mode: SelfWeightMode,
) -> Result<SparseMatrix> {
    if k == 0 {
        return Err(Error::Param("prior-frame neighbourhood needs k >= 1".into()));
    }
    if sequence_bounds.is_empty() {
        return Err(Error::Param("prior-frame graph needs at least one sequence".into()));
    }
    let mut expected_start = 0;
    for &(start, len) in sequence_bounds {
        if len == 0 {
            return Err(Error::Param(format!("sequence starting at {start} is empty")));
        }
        if start != expected_start {
            return Err(Error::Param(format!(
                "sequence bounds must be contiguous: expected start {expected_start}, got {start}"
            )));
        }
        expected_start = start + len;
    }
    let n = expected_start;
    let self_weight = mode.self_weight(k);
    let mut triplets = Vec::with_capacity(n * (k + 1));
    for &(start, len) in sequence_bounds {
        for pos in 0..len {
            let i = start + pos;
            triplets.push((i, i, self_weight));
            for d in 1..=k.min(pos) {
                triplets.push((i, i - d, (k + 1 - d) as f64));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, triplets)
}

/// Row-stochastic `D_in^-1 W` for directed graphs, `D^-1/2 A D^-1/2` for
/// undirected ones.
pub fn normalize_propagation(graph: &Graph) -> Result<PropagationMatrix> {
    let adj = &graph.adjacency;
    let degree = adj.row_sums();
    if let Some(i) = degree.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Contract(format!("node {i} has zero degree")));
    }
    let normalized = if graph.directed {
        adj.map_values(|i, _, w| w / degree[i])
    } else {
        let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        adj.map_values(|i, j, w| w * inv_sqrt[i] * inv_sqrt[j])
    };
    Ok(PropagationMatrix(Arc::new(normalized)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges(adj: &SparseMatrix) -> Vec<(usize, usize)> {
        adj.triplets()
            .filter(|&(i, j, _)| i != j)
            .map(|(i, j, _)| (i, j))
            .collect()
    }

    #[test]
    fn knn_line_example() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [10.0]]).unwrap();
        let g = build_knn_graph(&x, 1).unwrap();
        assert_eq!(edges(&g.adjacency), vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
        for i in 0..3 {
            assert_eq!(g.adjacency.get(i, i), 1.0);
        }
    }

    #[test]
    fn knn_with_all_neighbours_is_complete() {
        let x = Matrix::from_fn(5, 2, |i, j| (i * j) as f64 + 0.1 * i as f64);
        let g = build_knn_graph(&x, 4).unwrap();
        assert_eq!(g.adjacency.nnz(), 25);
    }

    #[test]
    fn knn_ties_use_lowest_index() {
        // Node 2 is equidistant from 0 and 1 (which coincide); it picks 0.
        let x = Matrix::from_rows(&[[0.0], [0.0], [3.0]]).unwrap();
        let g = build_knn_graph(&x, 1).unwrap();
        assert_eq!(g.adjacency.get(0, 1), 1.0);
        assert_eq!(g.adjacency.get(2, 0), 1.0);
        assert_eq!(g.adjacency.get(2, 1), 0.0);
    }

    #[test]
    fn knn_rejects_k_at_least_n() {
        let x = Matrix::zeros(3, 1);
        assert!(matches!(build_knn_graph(&x, 3), Err(Error::Param(_))));
        assert!(matches!(build_knn_graph(&x, 0), Err(Error::Param(_))));
    }

    #[test]
    fn prior_frame_sequential_weights() {
        let w = build_prior_frame_graph(&[(0, 4)], 2, SelfWeightMode::Sequential).unwrap();
        assert_eq!(w.get(3, 3), 3.0);
        assert_eq!(w.get(3, 2), 2.0);
        assert_eq!(w.get(3, 1), 1.0);
        assert_eq!(w.get(3, 0), 0.0);
        assert_eq!(w.row(0).collect::<Vec<_>>(), vec![(0, 3.0)]);
    }

    #[test]
    fn prior_frame_star_weights() {
        let w = build_prior_frame_graph(&[(0, 4)], 2, SelfWeightMode::SequentialStar).unwrap();
        assert_eq!(w.get(3, 3), 1.0);
        assert_eq!(w.get(3, 2), 2.0);
        assert_eq!(w.get(3, 1), 1.0);
    }

    #[test]
    fn prior_frame_respects_sequence_boundaries() {
        let w = build_prior_frame_graph(&[(0, 2), (2, 2)], 3, SelfWeightMode::Sequential).unwrap();
        assert_eq!(w.get(2, 1), 0.0);
        assert_eq!(w.get(1, 2), 0.0);
        assert_eq!(w.get(3, 2), 3.0);
    }

    #[test]
    fn prior_frame_rejects_empty_layout() {
        assert!(build_prior_frame_graph(&[], 2, SelfWeightMode::Sequential).is_err());
        assert!(build_prior_frame_graph(&[(0, 3), (4, 1)], 2, SelfWeightMode::Sequential).is_err());
    }

    #[test]
    fn single_self_loop_normalizes_to_one() {
        let g = Graph::prior_frame(Matrix::zeros(1, 2), &[(0, 1)], 2, SelfWeightMode::Sequential).unwrap();
        let p = normalize_propagation(&g).unwrap();
        assert_eq!(p.matrix().to_dense(), Matrix::filled(1, 1, 1.0));
    }

    #[test]
    fn prior_frame_row_is_divided_by_its_sum() {
        let g = Graph::prior_frame(Matrix::zeros(3, 1), &[(0, 3)], 2, SelfWeightMode::Sequential).unwrap();
        let p = normalize_propagation(&g).unwrap();
        let m = p.matrix();
        assert!((m.get(2, 2) - 0.5).abs() < 1e-15);
        assert!((m.get(2, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.get(2, 0) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn knn_pair_normalizes_to_halves() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let g = build_knn_graph(&x, 1).unwrap();
        let p = normalize_propagation(&g).unwrap();
        let d = p.matrix().to_dense();
        assert!(d.max_abs_diff(&Matrix::filled(2, 2, 0.5)).unwrap() < 1e-15);
        assert_eq!(d, d.transpose());
    }

    #[test]
    fn zero_degree_is_a_contract_violation() {
        let g = Graph {
            features: Matrix::zeros(2, 1),
            adjacency: SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0)]).unwrap(),
            directed: true,
            sequence_bounds: vec![(0, 2)],
        };
        assert!(matches!(normalize_propagation(&g), Err(Error::Contract(_))));
    }
}
