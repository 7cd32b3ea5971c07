//! Adjacency structure for proper CAR priors.
//!
//! `W` is a symmetric binary adjacency matrix with zero diagonal, `D` the
//! diagonal matrix of its row sums. Both are held sparsely (neighbor lists
//! and degrees); the eigenvalues of `S = D^{-1/2} W D^{-1/2}` are computed
//! once at construction so that `|D - rho W|` never needs a fresh
//! factorization inside a chain.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Tolerance for the row-normalized spectral bound `max(gamma) <= 1`.
pub const SPECTRAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SpatialStructure {
    m: usize,
    neighbors: Vec<Vec<usize>>,
    degrees: Vec<f64>,
    gamma: Vec<f64>,
    n_edges: usize,
}

impl SpatialStructure {
    /// Builds the structure from an undirected edge list over areas
    /// `0..m`. Duplicate edges are collapsed; self-edges, out-of-range
    /// indices and degree-0 areas (islands) are construction errors.
    pub fn from_edges(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if m < 2 {
            return Err(Error::Invalid("spatial structure needs at least 2 areas".into()));
        }
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); m];
        for &(a, b) in edges {
            if a == b {
                return Err(Error::Invalid(format!("self-edge on area {}", a)));
            }
            if a >= m || b >= m {
                return Err(Error::Invalid(format!("edge ({}, {}) out of range for m={}", a, b, m)));
            }
            if !neighbors[a].contains(&b) {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        let mut n_edges = 0;
        for (i, nb) in neighbors.iter_mut().enumerate() {
            if nb.is_empty() {
                return Err(Error::Island(i.to_string()));
            }
            nb.sort_unstable();
            n_edges += nb.len();
        }
        n_edges /= 2;
        let degrees: Vec<f64> = neighbors.iter().map(|nb| nb.len() as f64).collect();

        // Eigenvalues of D^{-1/2} W D^{-1/2}, sorted ascending.
        let mut s = DMatrix::<f64>::zeros(m, m);
        for (i, nb) in neighbors.iter().enumerate() {
            for &j in nb {
                s[(i, j)] = 1.0 / (degrees[i] * degrees[j]).sqrt();
            }
        }
        let mut gamma: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
        gamma.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let gmax = *gamma.last().unwrap();
        if gmax > 1.0 + SPECTRAL_TOL {
            return Err(Error::Invalid(format!(
                "spectral bound violated: max eigenvalue {} > 1",
                gmax
            )));
        }

        Ok(Self { m, neighbors, degrees, gamma, n_edges })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Row sum `w_{i+}` of the adjacency matrix.
    pub fn degree(&self, i: usize) -> f64 {
        self.degrees[i]
    }

    /// Eigenvalues of `D^{-1/2} W D^{-1/2}`, ascending.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Sum of all adjacency weights (twice the edge count).
    pub fn weight_total(&self) -> f64 {
        2.0 * self.n_edges as f64
    }

    /// Undirected edge list with `a < b`, sorted.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_edges);
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Dense adjacency matrix; for tests and small-scale diagnostics only.
    pub fn w_dense(&self) -> DMatrix<f64> {
        let mut w = DMatrix::<f64>::zeros(self.m, self.m);
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                w[(i, j)] = 1.0;
            }
        }
        w
    }

    /// Dense `D - rho W`; for tests and small-scale diagnostics only.
    pub fn precision_dense(&self, rho: f64) -> DMatrix<f64> {
        let mut p = -self.w_dense() * rho;
        for i in 0..self.m {
            p[(i, i)] = self.degrees[i];
        }
        p
    }

    /// `sum_i log(1 - rho * gamma_i)`, the grid-cacheable part of
    /// `log|D - rho W|`. Fails if any factor is nonpositive, which cannot
    /// happen for a valid structure and `rho` in `[0, 1)`.
    pub fn log_one_minus_rho_gamma(&self, rho: f64) -> Result<f64> {
        let mut sum = 0.0;
        for &g in &self.gamma {
            let t = 1.0 - rho * g;
            if t <= 0.0 {
                return Err(Error::Invalid(format!(
                    "1 - rho*gamma = {} <= 0 at rho={}, gamma={}",
                    t, rho, g
                )));
            }
            sum += t.ln();
        }
        Ok(sum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Cholesky;

    #[test]
    fn path_graph_basics() {
        let s = SpatialStructure::from_edges(3, &[(0, 1), (1, 2), (1, 0)]).unwrap();
        assert_eq!(s.degree(0), 1.0);
        assert_eq!(s.degree(1), 2.0);
        assert_eq!(s.n_edges(), 2);
        assert_eq!(s.neighbors(1), &[0, 2]);
        // W symmetric with zero diagonal.
        let w = s.w_dense();
        assert_eq!(w, w.transpose());
        for i in 0..3 {
            assert_eq!(w[(i, i)], 0.0);
        }
    }

    #[test]
    fn islands_are_rejected() {
        let err = SpatialStructure::from_edges(3, &[(0, 1)]).unwrap_err();
        assert!(matches!(err, Error::Island(ref a) if a == "2"));
    }

    #[test]
    fn self_edges_are_rejected() {
        assert!(SpatialStructure::from_edges(3, &[(0, 0), (1, 2)]).is_err());
    }

    #[test]
    fn gamma_sorted_and_bounded() {
        let s = SpatialStructure::from_edges(2, &[(0, 1)]).unwrap();
        // Two-area graph: S has eigenvalues -1 and 1.
        assert_relative_eq!(s.gamma()[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(s.gamma()[1], 1.0, epsilon = 1e-12);
        for w in s.gamma().windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert!(*s.gamma().last().unwrap() <= 1.0 + SPECTRAL_TOL);
    }

    #[test]
    fn precision_positive_definite_on_unit_interval() {
        let s = SpatialStructure::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        for &rho in &[0.0, 0.5, 0.9, 0.99] {
            assert!(Cholesky::new(s.precision_dense(rho)).is_some(), "rho={}", rho);
            assert!(s.log_one_minus_rho_gamma(rho).is_ok());
        }
    }
}
