//! Neighborhood weight graphs on image grids.
//!
//! A [`WeightGraph`] is a sparse row-stochastic matrix. One instance supplies
//! the initialization weights and another the filtering weights; they are
//! often the same graph.

mod build;
mod nonlocal;
mod spectral;

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use build::{build_gaussian, build_local_uniform};
pub use nonlocal::{build_nonlocal, patch_distance, NonlocalParams};
pub use spectral::{eigendecompose, power_limit_check, EigenStructure, EIGEN_GROUP_TOL};

pub const ROW_SUM_TOL: f64 = 1e-12;
pub const SYMMETRY_TOL: f64 = 1e-12;
const DUMP_MIN_WEIGHT: f64 = 1e-16;

/// Image grid of `height` rows and `width` columns, indexed row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridGeometry {
    pub height: usize,
    pub width: usize,
}

impl GridGeometry {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid must be non-empty, got {height}x{width}"
            )));
        }
        Ok(Self { height, width })
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    /// Index of `(row, col)` after mirroring out-of-range coordinates.
    pub fn mirrored_index(&self, row: isize, col: isize) -> usize {
        self.index(mirror(row, self.height), mirror(col, self.width))
    }
}

/// Half-sample symmetric reflection of `i` into `0..len`: the edge sample is
/// repeated, so `-1 -> 0` and `len -> len - 1`. This keeps mirrored window
/// weights symmetric.
pub fn mirror(i: isize, len: usize) -> usize {
    let len = len as isize;
    let period = 2 * len;
    let mut m = i.rem_euclid(period);
    if m >= len {
        m = period - 1 - m;
    }
    m as usize
}

/// Sparse row-stochastic weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGraph {
    rows: Vec<Vec<(usize, f64)>>,
    symmetric: bool,
}

impl WeightGraph {
    /// Builds a graph from raw rows. Entries are sorted, duplicates merged and
    /// non-positive weights dropped; rows must already sum to one.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty weight graph".into()));
        }
        let mut clean = Vec::with_capacity(n);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (j, w) in row {
                if j >= n {
                    return Err(Error::InvalidParameter(format!(
                        "row {i} references column {j} outside 0..{n}"
                    )));
                }
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "row {i} has invalid weight {w}"
                    )));
                }
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += w,
                    _ => merged.push((j, w)),
                }
            }
            merged.retain(|e| e.1 > 0.0);
            let sum: f64 = merged.iter().map(|e| e.1).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
            clean.push(merged);
        }
        let mut g = Self {
            rows: clean,
            symmetric: false,
        };
        g.symmetric = g.max_asymmetry() <= SYMMETRY_TOL;
        Ok(g)
    }

    /// Normalizes each row of nonnegative weights to sum one.
    pub fn from_unnormalized_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let sum: f64 = row.iter().map(|e| e.1).sum();
                if !(sum > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "row {i} has no positive weight"
                    )));
                }
                Ok(row.into_iter().map(|(j, w)| (j, w / sum)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows)
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidParameter("weight matrix must be square".into()));
        }
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
            symmetric: true,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map(|pos| self.rows[i][pos].1)
            .unwrap_or(0.0)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                worst = worst.max((w - self.weight(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|e| e.1).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn has_positive_diagonal(&self) -> bool {
        (0..self.len()).all(|i| self.weight(i, i) > 0.0)
    }

    /// Connectivity of the undirected support graph.
    pub fn is_irreducible(&self) -> bool {
        let n = self.len();
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, _) in row {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// Averages with the transpose and renormalizes rows once. Returns the
    /// new graph and the asymmetry left by the renormalization.
    pub fn symmetrized(&self) -> Result<(Self, f64)> {
        let n = self.len();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                rows[i].push((j, 0.5 * w));
                rows[j].push((i, 0.5 * w));
            }
        }
        let g = Self::from_unnormalized_rows(rows)?;
        let asym = g.max_asymmetry();
        Ok((g, asym))
    }

    /// Checks the declared symmetry requirement of the convergence theory.
    pub fn require_symmetric(&self) -> Result<()> {
        if self.symmetric {
            Ok(())
        } else {
            Err(Error::NotSymmetric {
                max_asymmetry: self.max_asymmetry(),
            })
        }
    }

    /// Text dump: header `n rows`, then `i j weight` per entry.
    pub fn dump(&self) -> String {
        let mut out = format!("{} rows\n", self.len());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                if w >= DUMP_MIN_WEIGHT {
                    let _ = writeln!(out, "{i} {j} {w:.17e}");
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let n = loop {
            let Some((idx, line)) = lines.next() else {
                return Err(Error::parse(1, "missing header"));
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let n: usize = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::parse(idx + 1, "header must be `n rows`"))?;
            if parts.next() != Some("rows") {
                return Err(Error::parse(idx + 1, "header must be `n rows`"));
            }
            break n;
        };
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::parse(idx + 1, "expected `i j weight`"));
            }
            let i: usize = parts[0]
                .parse()
                .map_err(|_| Error::parse(idx + 1, "bad row index"))?;
            let j: usize = parts[1]
                .parse()
                .map_err(|_| Error::parse(idx + 1, "bad column index"))?;
            let w: f64 = parts[2]
                .parse()
                .map_err(|_| Error::parse(idx + 1, "bad weight"))?;
            if i >= n || j >= n {
                return Err(Error::parse(idx + 1, format!("index out of range 0..{n}")));
            }
            rows[i].push((j, w));
        }
        Self::from_rows(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// `P x` for a dense vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * x[j]).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_bijection() {
        let g = GridGeometry::new(4, 7).unwrap();
        for i in 0..g.len() {
            let (r, c) = g.coords(i);
            assert_eq!(g.index(r, c), i);
        }
    }

    #[test]
    fn mirror_reflects_with_edge_repeat() {
        let got: Vec<usize> = (-3..8).map(|i| mirror(i, 5)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 4, 4, 3, 2]);
        assert_eq!(mirror(-1, 1), 0);
        assert_eq!(mirror(3, 1), 0);
    }

    #[test]
    fn dump_and_parse_roundtrip() {
        let geom = GridGeometry::new(3, 4).unwrap();
        let g = build_local_uniform(geom, 3).unwrap();
        let back = WeightGraph::parse(&g.dump()).unwrap();
        assert_eq!(back.len(), g.len());
        for i in 0..g.len() {
            for (a, b) in g.row(i).iter().zip(back.row(i)) {
                assert_eq!(a.0, b.0);
                assert!((a.1 - b.1).abs() < 1e-16);
            }
        }
        assert!(back.is_symmetric());
    }

    #[test]
    fn parse_errors_name_lines() {
        assert!(matches!(
            WeightGraph::parse("2 rows\n0 0 1\n1 x 1\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            WeightGraph::parse("two rows\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(WeightGraph::parse("2 rows\n0 0 0.5\n1 1 1\n").is_err());
    }

    #[test]
    fn irreducibility() {
        assert!(!WeightGraph::identity(3).is_irreducible());
        assert!(WeightGraph::identity(1).is_irreducible());
        let geom = GridGeometry::new(1, 5).unwrap();
        assert!(build_local_uniform(geom, 3).unwrap().is_irreducible());
    }

    #[test]
    fn symmetrize_reports_residual() {
        let rows = vec![
            vec![(0, 0.5), (1, 0.5)],
            vec![(1, 0.9), (2, 0.1)],
            vec![(0, 0.3), (2, 0.7)],
        ];
        let g = WeightGraph::from_rows(rows).unwrap();
        assert!(!g.is_symmetric());
        assert!(matches!(g.require_symmetric(), Err(Error::NotSymmetric { .. })));
        let (s, residual) = g.symmetrized().unwrap();
        assert!(s.max_row_sum_error() < ROW_SUM_TOL);
        assert!((residual - s.max_asymmetry()).abs() == 0.0);
        assert!(residual < g.max_asymmetry());
    }
}
