use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::WeightGraph;
use crate::error::Result;

/// Absolute tolerance for grouping equal eigenvalues.
pub const EIGEN_GROUP_TOL: f64 = 1e-9;

/// Eigendecomposition `P = Q Λ Qᵀ` of a symmetric weight matrix, eigenvalues
/// in descending order. Row `i` of `q` is `q_i`.
#[derive(Debug, Clone)]
pub struct EigenStructure {
    pub q: DMatrix<f64>,
    pub lambda: Vec<f64>,
    /// Distinct eigenvalue groups as `(value, start, multiplicity)`.
    pub groups: Vec<(f64, usize, usize)>,
    /// Number of groups with a positive eigenvalue.
    pub s_hat: usize,
}

impl EigenStructure {
    pub fn from_dense(p: &DMatrix<f64>) -> Self {
        let n = p.nrows();
        let eig = SymmetricEigen::new(p.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lambda: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut q = DMatrix::zeros(n, n);
        for (col, &k) in order.iter().enumerate() {
            let mut v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
            // Sign convention: positive column sum, else positive first
            // nonzero entry.
            let sum: f64 = v.iter().sum();
            let flip = if sum.abs() > 1e-12 {
                sum < 0.0
            } else {
                v.iter().find(|x| x.abs() > 1e-12).is_some_and(|x| *x < 0.0)
            };
            if flip {
                v.neg_mut();
            }
            q.set_column(col, &v);
        }
        let groups = group_eigenvalues(&lambda);
        let s_hat = groups
            .iter()
            .take_while(|g| g.0 > EIGEN_GROUP_TOL)
            .count();
        Self {
            q,
            lambda,
            groups,
            s_hat,
        }
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// `μ_j = 1 + λ_j`.
    pub fn mu(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| 1.0 + l).collect()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.q * DMatrix::from_diagonal(&DVector::from_vec(self.lambda.clone())) * self.q.transpose()
    }

    pub fn reconstruction_error(&self, p: &DMatrix<f64>) -> f64 {
        (p - self.reconstruct()).norm()
    }

    /// Width of the gap below eigenvalue one, `1 - max(|λ_2|, |λ_n|)`.
    pub fn spectral_gap(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 1.0;
        }
        1.0 - self.lambda[1].abs().max(self.lambda[n - 1].abs())
    }
}

fn group_eigenvalues(lambda: &[f64]) -> Vec<(f64, usize, usize)> {
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (j, &l) in lambda.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if (g.0 - l).abs() <= EIGEN_GROUP_TOL => g.2 += 1,
            _ => groups.push((l, j, 1)),
        }
    }
    groups
}

/// Eigendecomposition of a symmetric weight graph.
pub fn eigendecompose(p: &WeightGraph) -> Result<EigenStructure> {
    p.require_symmetric()?;
    Ok(EigenStructure::from_dense(&p.to_dense()))
}

/// Max-norm deviation of `P^r` from `ones / n`, and whether it is within
/// `tol`.
pub fn power_limit_check(p: &WeightGraph, r: u64, tol: f64) -> (bool, f64) {
    let dense = p.to_dense();
    let n = dense.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = dense;
    let mut e = r;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    let target = 1.0 / n as f64;
    let dev = result.iter().map(|v| (v - target).abs()).fold(0.0, f64::max);
    (dev <= tol, dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_local_uniform, GridGeometry};

    #[test]
    fn identity_spectrum() {
        let e = eigendecompose(&WeightGraph::identity(5)).unwrap();
        assert!(e.lambda.iter().all(|l| (l - 1.0).abs() < 1e-15));
        assert_eq!(e.groups.len(), 1);
        assert_eq!(e.groups[0], (1.0, 0, 5));
        assert_eq!(e.s_hat, 1);
    }

    #[test]
    fn rank_one_spectrum() {
        let p = WeightGraph::from_dense(&DMatrix::from_element(2, 2, 0.5)).unwrap();
        let e = eigendecompose(&p).unwrap();
        assert!((e.lambda[0] - 1.0).abs() < 1e-15);
        assert!(e.lambda[1].abs() < 1e-15);
        assert_eq!(e.s_hat, 1);
        let inv = 1.0 / 2f64.sqrt();
        assert!((e.q[(0, 0)] - inv).abs() < 1e-15 && (e.q[(1, 0)] - inv).abs() < 1e-15);
    }

    #[test]
    fn local_graph_reconstruction() {
        let g = build_local_uniform(GridGeometry::new(4, 5).unwrap(), 3).unwrap();
        let e = eigendecompose(&g).unwrap();
        assert!(e.reconstruction_error(&g.to_dense()) < 1e-12);
        assert!((e.lambda[0] - 1.0).abs() < 1e-12);
        assert!(e.lambda.iter().all(|l| *l >= -1.0 - 1e-10 && *l <= 1.0 + 1e-10));
        let first = 1.0 / (20f64).sqrt();
        assert!((0..20).all(|i| (e.q[(i, 0)] - first).abs() < 1e-10));
        assert!(e.lambda[1] < 1.0 - 1e-9);
    }

    #[test]
    fn nonsymmetric_is_rejected() {
        let g = WeightGraph::from_rows(vec![vec![(0, 0.5), (1, 0.5)], vec![(1, 1.0)]]).unwrap();
        assert!(eigendecompose(&g).is_err());
    }

    #[test]
    fn power_limits() {
        let n = 4;
        let mut m = DMatrix::from_element(n, n, 0.5 / (n - 1) as f64);
        for i in 0..n {
            m[(i, i)] = 0.5;
        }
        let p = WeightGraph::from_dense(&m).unwrap();
        let (ok, dev) = power_limit_check(&p, 200, 1e-10);
        assert!(ok, "{dev}");

        let half = WeightGraph::from_dense(&DMatrix::from_element(2, 2, 0.5)).unwrap();
        let (ok, dev) = power_limit_check(&half, 1, 0.0);
        assert!(ok && dev == 0.0);

        let (ok, dev) = power_limit_check(&WeightGraph::identity(4), 1000, 1e-6);
        assert!(!ok);
        assert!((dev - 0.75).abs() < 1e-15);
    }
}
