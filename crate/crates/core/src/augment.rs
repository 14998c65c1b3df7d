//! Random graph views: edge dropping and column-wise feature masking.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graphs::Graph;
use crate::numeric::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub edge_drop_rate: f64,
    pub feature_mask_rate: f64,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            edge_drop_rate: 0.5,
            feature_mask_rate: 0.5,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("edge_drop_rate", self.edge_drop_rate),
            ("feature_mask_rate", self.feature_mask_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Param(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Draws one augmented view of `graph`.
///
/// Every non-self-loop edge is removed with probability `edge_drop_rate`
/// (once per undirected pair for undirected graphs), and each feature column
/// is zeroed for all nodes with probability `feature_mask_rate`.
pub fn augment<R: Rng + ?Sized>(graph: &Graph, config: &AugmentConfig, rng: &mut R) -> Result<Graph> {
    config.validate()?;
    let adjacency = drop_edges(&graph.adjacency, graph.directed, config.edge_drop_rate, rng)?;
    let mut features = graph.features.clone();
    let mask = column_mask(features.cols(), config.feature_mask_rate, rng);
    apply_column_mask(&mut features, &mask);
    Ok(Graph {
        features,
        adjacency,
        directed: graph.directed,
        sequence_bounds: graph.sequence_bounds.clone(),
    })
}

pub(crate) fn drop_edges<R: Rng + ?Sized>(
    adj: &SparseMatrix,
    directed: bool,
    rate: f64,
    rng: &mut R,
) -> Result<SparseMatrix> {
    let mut kept = Vec::with_capacity(adj.nnz());
    for (i, j, w) in adj.triplets() {
        if i == j {
            kept.push((i, j, w));
        } else if directed {
            if !rng.random_bool(rate) {
                kept.push((i, j, w));
            }
        } else if i < j && !rng.random_bool(rate) {
            kept.push((i, j, w));
            kept.push((j, i, adj.get(j, i)));
        }
    }
    SparseMatrix::from_triplets(adj.rows(), adj.cols(), kept)
}

/// `true` marks a column to zero.
pub(crate) fn column_mask<R: Rng + ?Sized>(cols: usize, rate: f64, rng: &mut R) -> Vec<bool> {
    (0..cols).map(|_| rng.random_bool(rate)).collect()
}

pub(crate) fn apply_column_mask(features: &mut crate::numeric::Matrix, mask: &[bool]) {
    for i in 0..features.rows() {
        for (v, &m) in features.row_mut(i).iter_mut().zip(mask) {
            if m {
                *v = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_knn_graph, SelfWeightMode};
    use crate::numeric::Matrix;
    use crate::rng;

    fn sample_graph() -> Graph {
        let x = Matrix::from_fn(12, 4, |i, j| ((i * 5 + j * 3) % 7) as f64 + 0.01 * i as f64);
        build_knn_graph(&x, 3).unwrap()
    }

    fn cfg(edge: f64, feat: f64) -> AugmentConfig {
        AugmentConfig {
            edge_drop_rate: edge,
            feature_mask_rate: feat,
            rng_seed: 0,
        }
    }

    #[test]
    fn zero_rates_are_identity() {
        let g = sample_graph();
        let v = augment(&g, &cfg(0.0, 0.0), &mut rng::stream(1, 0)).unwrap();
        assert_eq!(v, g);
    }

    #[test]
    fn unit_rates_leave_only_self_loops_and_zero_features() {
        let g = sample_graph();
        let v = augment(&g, &cfg(1.0, 1.0), &mut rng::stream(1, 0)).unwrap();
        assert!(v.adjacency.triplets().all(|(i, j, _)| i == j));
        assert_eq!(v.adjacency.nnz(), g.num_nodes());
        assert!(v.features.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn undirected_views_stay_symmetric() {
        let g = sample_graph();
        let v = augment(&g, &cfg(0.5, 0.0), &mut rng::stream(9, 0)).unwrap();
        assert_eq!(v.adjacency.to_dense(), v.adjacency.to_dense().transpose());
    }

    #[test]
    fn masking_zeroes_whole_columns() {
        let g = Graph::prior_frame(Matrix::filled(10, 40, 1.0), &[(0, 10)], 3, SelfWeightMode::Sequential).unwrap();
        let v = augment(&g, &cfg(0.0, 0.5), &mut rng::stream(3, 0)).unwrap();
        for j in 0..40 {
            let col = v.features.column(j);
            assert!(col.iter().all(|&x| x == 0.0) || col.iter().all(|&x| x == 1.0));
        }
        assert_eq!(v.features.shape(), g.features.shape());
    }

    #[test]
    fn same_stream_gives_same_view() {
        let g = sample_graph();
        let a = augment(&g, &cfg(0.5, 0.5), &mut rng::stream(5, 2)).unwrap();
        let b = augment(&g, &cfg(0.5, 0.5), &mut rng::stream(5, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_rate_is_rejected() {
        let g = sample_graph();
        assert!(augment(&g, &cfg(1.5, 0.0), &mut rng::stream(0, 0)).is_err());
    }
}
