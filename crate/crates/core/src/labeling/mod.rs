//! Multiplicative filtering of label-assignment matrices.
//!
//! Rows of an assignment matrix `W` (n × K) are probability vectors. Each
//! iteration multiplies a row by the weighted geometric mean of its
//! neighbors' rows and projects the result back onto the ε-simplex. All rows
//! update from the previous iterate, so the result does not depend on the
//! number of worker threads.

mod log_domain;
mod update;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{GridGeometry, WeightGraph};
use crate::metric::{MetricSpace, Point};

pub use log_domain::{iterate_log_domain_eps0, LogDomainRun, LogRecursion};
pub use update::{
    iterate, step_apss, step_multiplicative, step_multiplicative_product, IterationConfig,
    LabelState, StoppingRule, Variant,
};

/// Pixel features on a grid, with a validity mask for missing pixels.
#[derive(Debug, Clone)]
pub struct FeatureImage {
    pub geom: GridGeometry,
    pub features: Vec<Point>,
    pub valid: Vec<bool>,
}

impl FeatureImage {
    pub fn new(geom: GridGeometry, features: Vec<Point>, valid: Option<Vec<bool>>) -> Result<Self> {
        if features.len() != geom.len() {
            return Err(Error::DimensionMismatch {
                expected: geom.len(),
                found: features.len(),
            });
        }
        let valid = valid.unwrap_or_else(|| vec![true; geom.len()]);
        if valid.len() != geom.len() {
            return Err(Error::DimensionMismatch {
                expected: geom.len(),
                found: valid.len(),
            });
        }
        if !valid.iter().any(|&v| v) {
            return Err(Error::InvalidParameter("image has no valid pixel".into()));
        }
        Ok(Self {
            geom,
            features,
            valid,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// The `K` prior features.
#[derive(Debug, Clone)]
pub struct PriorSet {
    pub priors: Vec<Point>,
}

impl PriorSet {
    pub fn new(priors: Vec<Point>, space: &MetricSpace) -> Result<Self> {
        if priors.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least two priors, got {}",
                priors.len()
            )));
        }
        for a in 0..priors.len() {
            for b in a + 1..priors.len() {
                if space.distance(&priors[a], &priors[b])? == 0.0 {
                    log::warn!("priors {} and {} coincide", a + 1, b + 1);
                }
            }
        }
        Ok(Self { priors })
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }
}

/// Feature-to-prior distances, one row per pixel. Rows of missing pixels are
/// zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(pub Array2<f64>);

pub fn build_distance_matrix(
    image: &FeatureImage,
    priors: &PriorSet,
    space: &MetricSpace,
) -> Result<DistanceMatrix> {
    let n = image.len();
    let k = priors.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !image.valid[i] {
                return Ok(vec![0.0; k]);
            }
            priors
                .priors
                .iter()
                .map(|p| space.distance(&image.features[i], p))
                .collect::<Result<Vec<f64>>>()
                .map_err(|e| e.at_pixel(i))
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DistanceMatrix(
        Array2::from_shape_vec((n, k), flat).expect("n*K entries"),
    ))
}

/// Softmax of a log-vector with max subtraction.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// `A_i = exp(-Σ_j α_ij D_j) / ‖·‖₁`, computed in the log domain.
pub fn init_assignment(d: &DistanceMatrix, alpha: &WeightGraph) -> Result<Array2<f64>> {
    let (n, k) = d.0.dim();
    if alpha.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: alpha.len(),
        });
    }
    let mut a = Array2::zeros((n, k));
    a.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let mut acc = vec![0.0; k];
            for &(j, w) in alpha.row(i) {
                for (c, v) in acc.iter_mut().zip(d.0.row(j)) {
                    *c -= w * v;
                }
            }
            softmax_in_place(&mut acc);
            for (dst, v) in row.iter_mut().zip(acc) {
                *dst = v;
            }
        });
    Ok(a)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Final labels in `1..=K`, one per row.
pub fn assign_labels(w: &Array2<f64>) -> Vec<usize> {
    w.axis_iter(Axis(0)).map(|r| argmax(r) + 1).collect()
}

/// `F(W) = Σ_k (log W_k)ᵀ P (log W_k)` over the columns of `W`.
pub fn objective_f(w: &Array2<f64>, rho: &WeightGraph) -> Result<f64> {
    rho.require_symmetric()?;
    if w.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("assignment matrix must be positive".into()));
    }
    let logw = w.mapv(f64::ln);
    let mut total = 0.0;
    for col in logw.axis_iter(Axis(1)) {
        let col = col.to_vec();
        let pcol = rho.apply(&col);
        total += col.iter().zip(&pcol).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_local_uniform;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_image(values: &[f64], valid: Option<Vec<bool>>) -> FeatureImage {
        let geom = GridGeometry::new(1, values.len()).unwrap();
        FeatureImage::new(
            geom,
            values.iter().map(|v| Point::Vector(vec![*v])).collect(),
            valid,
        )
        .unwrap()
    }

    #[test]
    fn distance_matrix_rules() {
        let values: Vec<f64> = (0..10).map(|i| i as f64 * 0.37 - 1.0).collect();
        let mut valid = vec![true; 10];
        valid[4] = false;
        let img = scalar_image(&values, Some(valid));
        let space = MetricSpace::Euclidean(1);
        let priors = PriorSet::new(
            vec![
                Point::Vector(vec![-1.0]),
                Point::Vector(vec![0.5]),
                Point::Vector(vec![values[7]]),
            ],
            &space,
        )
        .unwrap();
        let d = build_distance_matrix(&img, &priors, &space).unwrap();
        let pv = [-1.0, 0.5, values[7]];
        for i in 0..10 {
            for k in 0..3 {
                let expected = if i == 4 { 0.0 } else { (values[i] - pv[k]).abs() };
                assert!((d.0[[i, k]] - expected).abs() < 1e-15);
            }
        }
        assert_eq!(d.0[[7, 2]], 0.0);
        assert_eq!(d.0[[0, 0]], 0.0);
    }

    #[test]
    fn distance_errors_carry_pixel_index() {
        let img = scalar_image(&[0.0, 1.0], None);
        let space = MetricSpace::Euclidean(1);
        let bad = PriorSet {
            priors: vec![Point::Vector(vec![0.0, 0.0]), Point::Vector(vec![1.0, 0.0])],
        };
        let err = build_distance_matrix(&img, &bad, &space).unwrap_err();
        assert!(matches!(err, Error::Pixel { index: 0, .. }));
        assert!(PriorSet::new(vec![Point::Vector(vec![0.0])], &space).is_err());
    }

    #[test]
    fn init_examples() {
        let d = DistanceMatrix(array![[0.0, 2f64.ln()]]);
        let a = init_assignment(&d, &WeightGraph::identity(1)).unwrap();
        assert!((a[[0, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert!((a[[0, 1]] - 1.0 / 3.0).abs() < 1e-15);

        let zero = DistanceMatrix(Array2::zeros((6, 4)));
        let g = build_local_uniform(GridGeometry::new(2, 3).unwrap(), 1).unwrap();
        let a = init_assignment(&zero, &g).unwrap();
        assert!(a.iter().all(|v| (v - 0.25).abs() < 1e-16));

        // Huge distances do not underflow to NaN.
        let d = DistanceMatrix(array![[1e4, 1e4 + 1.0]]);
        let a = init_assignment(&d, &WeightGraph::identity(1)).unwrap();
        let e = (-1f64).exp();
        assert!((a[[0, 0]] - 1.0 / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn labels_and_ties() {
        let w = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.3, 0.3, 0.4], [0.5, 0.5, 0.0]];
        assert_eq!(assign_labels(&w), vec![1, 3, 3, 1]);
    }

    #[test]
    fn objective_examples() {
        let geom = GridGeometry::new(3, 4).unwrap();
        let p = build_local_uniform(geom, 3).unwrap();
        let k = 3;
        let w = Array2::from_elem((12, k), 1.0 / k as f64);
        let expected = k as f64 * 12.0 * (1.0 / k as f64).ln().powi(2);
        assert!((objective_f(&w, &p).unwrap() - expected).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Array2::from_shape_fn((12, k), |_| rng.random_range(0.01..1.0));
        let id = WeightGraph::identity(12);
        let sq: f64 = w.iter().map(|v: &f64| v.ln().powi(2)).sum();
        assert!((objective_f(&w, &id).unwrap() - sq).abs() < 1e-12);

        let dense = p.to_dense();
        let mut oracle = 0.0;
        for c in 0..k {
            for i in 0..12 {
                for j in 0..12 {
                    oracle += w[[i, c]].ln() * dense[(i, j)] * w[[j, c]].ln();
                }
            }
        }
        assert!((objective_f(&w, &p).unwrap() - oracle).abs() < 1e-11);
    }
}
