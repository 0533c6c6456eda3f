//! Undirected weighted communication graphs and their Laplacians.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An undirected, connected, weighted communication graph.
///
/// Stores the symmetric adjacency matrix `a_ij` with zero diagonal.
/// Construction fails fast on asymmetric, negative or disconnected input.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    weights: DMatrix<f64>,
}

impl Network {
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        if n == 0 {
            return Err(Error::InvalidGraph(
                "network needs at least one agent".into(),
            ));
        }
        if weights.ncols() != n {
            return Err(Error::InvalidGraph(format!(
                "weight matrix must be square, got {}x{}",
                n,
                weights.ncols()
            )));
        }
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(Error::InvalidGraph(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "weight ({i},{j}) = {w} is not a finite nonnegative number"
                    )));
                }
                if w != weights[(j, i)] {
                    return Err(Error::InvalidGraph(format!(
                        "weights ({i},{j}) and ({j},{i}) differ"
                    )));
                }
            }
        }
        if !is_connected(&weights) {
            return Err(Error::Disconnected);
        }
        Ok(Self { weights })
    }

    /// Cycle of `n` agents with every edge weighted `w`.
    ///
    /// `n = 1` gives an edgeless singleton and `n = 2` a single edge.
    pub fn ring(n: usize, w: f64) -> Result<Self> {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidGraph(format!(
                "ring weight must be positive, got {w}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidGraph("ring needs at least one agent".into()));
        }
        let mut weights = DMatrix::zeros(n, n);
        if n >= 2 {
            for i in 0..n {
                let j = (i + 1) % n;
                weights[(i, j)] = w;
                weights[(j, i)] = w;
            }
        }
        Self::from_weights(weights)
    }

    pub fn n_agents(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Neighbors of `i` with their weights, in ascending index order.
    pub fn neighbors(&self, i: usize) -> Result<Vec<(usize, f64)>> {
        let n = self.n_agents();
        if i >= n {
            return Err(Error::AgentOutOfRange {
                index: i,
                n_agents: n,
            });
        }
        Ok((0..n)
            .filter_map(|j| {
                let w = self.weights[(i, j)];
                (w > 0.0).then_some((j, w))
            })
            .collect())
    }

    /// Undirected edges `(i, j, a_ij)` with `i < j`, ordered lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n_agents();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = self.weights[(i, j)];
                if w > 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// `L = diag(A 1) - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_agents();
        let mut l = -self.weights.clone();
        for i in 0..n {
            l[(i, i)] = self.weights.row(i).sum();
        }
        l
    }
}

/// True iff every node is reachable from node 0 through positive weights.
pub fn is_connected(weights: &DMatrix<f64>) -> bool {
    let n = weights.nrows();
    if n <= 1 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && weights[(i, j)] > 0.0 {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DVector, SymmetricEigen};
    use proptest::prelude::*;

    #[test]
    fn ring_laplacian_entries() {
        let net = Network::ring(5, 4.0).unwrap();
        let l = net.laplacian();
        for i in 0..5 {
            assert_eq!(l[(i, i)], 8.0);
            assert_eq!(l[(i, (i + 1) % 5)], -4.0);
            assert_eq!(l[(i, (i + 4) % 5)], -4.0);
            assert_eq!(l[(i, (i + 2) % 5)], 0.0);
            assert_eq!(l[(i, (i + 3) % 5)], 0.0);
        }
    }

    #[test]
    fn two_node_laplacian() {
        let net = Network::ring(2, 2.5).unwrap();
        assert_eq!(
            net.laplacian(),
            DMatrix::from_row_slice(2, 2, &[2.5, -2.5, -2.5, 2.5])
        );
        assert_eq!(net.edges(), vec![(0, 1, 2.5)]);
    }

    #[test]
    fn laplacian_annihilates_ones() {
        let net = Network::ring(7, 1.3).unwrap();
        let ones = DVector::from_element(7, 1.0);
        assert!((net.laplacian() * ones).amax() < 1e-14);
    }

    #[test]
    fn neighbor_lists() {
        let net = Network::ring(5, 4.0).unwrap();
        assert_eq!(net.neighbors(0).unwrap(), vec![(1, 4.0), (4, 4.0)]);
        let k3 = Network::from_weights(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0],
        ))
        .unwrap();
        assert_eq!(k3.neighbors(2).unwrap(), vec![(0, 1.0), (1, 1.0)]);
        assert!(matches!(
            net.neighbors(5),
            Err(Error::AgentOutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn connectivity() {
        assert!(is_connected(Network::ring(5, 4.0).unwrap().weights()));
        assert!(!is_connected(&DMatrix::zeros(2, 2)));
        assert!(is_connected(&DMatrix::zeros(1, 1)));
        assert_eq!(
            Network::from_weights(DMatrix::zeros(2, 2)),
            Err(Error::Disconnected)
        );
    }

    #[test]
    fn ring_constructor_cases() {
        let tri = Network::ring(3, 2.0).unwrap();
        assert_eq!(tri.edges(), vec![(0, 1, 2.0), (0, 2, 2.0), (1, 2, 2.0)]);
        assert_eq!(Network::ring(1, 1.0).unwrap().edges(), vec![]);
        assert!(Network::ring(4, 0.0).is_err());
        assert!(Network::ring(4, -1.0).is_err());
    }

    #[test]
    fn rejects_bad_matrices() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(
            Network::from_weights(asym),
            Err(Error::InvalidGraph(_))
        ));
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        assert!(Network::from_weights(diag).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        assert!(Network::from_weights(neg).is_err());
    }

    fn connected_weights() -> impl Strategy<Value = DMatrix<f64>> {
        (2usize..8).prop_flat_map(|n| {
            proptest::collection::vec(0.0f64..5.0, n * n).prop_map(move |raw| {
                let mut w = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in (i + 1)..n {
                        let v = if raw[i * n + j] < 2.0 {
                            0.0
                        } else {
                            raw[i * n + j]
                        };
                        w[(i, j)] = v;
                        w[(j, i)] = v;
                    }
                    // spanning path keeps the graph connected
                    if i + 1 < n {
                        let v = 0.5 + raw[i * n + i];
                        w[(i, i + 1)] = v;
                        w[(i + 1, i)] = v;
                    }
                }
                w
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn laplacian_is_psd_with_positive_fiedler_value(w in connected_weights()) {
            let net = Network::from_weights(w).unwrap();
            let l = net.laplacian();
            prop_assert!((&l - l.transpose()).amax() == 0.0);
            let mut eig: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert!(eig[0] >= -1e-10);
            prop_assert!(eig[1] > 0.0);
        }

        #[test]
        fn quadratic_form_nonnegative(
            w in connected_weights(),
            xs in proptest::collection::vec(-10.0f64..10.0, 8),
        ) {
            let net = Network::from_weights(w).unwrap();
            let n = net.n_agents();
            let x = DVector::from_iterator(n, xs.into_iter().take(n));
            let q = x.dot(&(net.laplacian() * &x));
            prop_assert!(q >= -1e-10);
        }
    }
}
