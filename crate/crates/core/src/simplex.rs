//! Probability-simplex primitives.
//!
//! The ε-simplex `Δ_{K,ε}` holds the nonnegative `K`-vectors that sum to one
//! with every component at least `ε`. The KL projection onto it rescales the
//! large components and pins the small ones to `ε`.

use crate::error::{Error, Result};

/// Default lower bound on assignment probabilities.
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// A point of `Δ_{K,ε}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector {
    values: Vec<f64>,
    epsilon: f64,
}

impl SimplexVector {
    pub fn new(values: Vec<f64>, epsilon: f64) -> Result<Self> {
        check_epsilon(values.len(), epsilon)?;
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("components sum to {sum}, expected 1")));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= epsilon)) {
            return Err(Error::Domain(format!("component {v} is below epsilon {epsilon}")));
        }
        Ok(Self { values, epsilon })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub fn check_epsilon(k: usize, epsilon: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("empty vector".into()));
    }
    if !(epsilon >= 0.0) || epsilon * k as f64 >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon {epsilon} must lie in [0, 1/{k})"
        )));
    }
    Ok(())
}

fn check_positive(y: &[f64]) -> Result<()> {
    if let Some((k, v)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "component {k} must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

/// `KL(x, y) = Σ x_k log(x_k / y_k)` with `0 log 0 = 0`.
pub fn kl_divergence(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    check_positive(y)?;
    if let Some(v) = x.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("first argument has negative entry {v}")));
    }
    Ok(x.iter()
        .zip(y)
        .map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() } else { 0.0 })
        .sum())
}

/// Closed-form KL projection, in place. `y` must be nonnegative with a
/// positive sum; zero components are pinned whenever `epsilon > 0`.
pub(crate) fn project_sorted_in_place(y: &mut [f64], epsilon: f64) {
    let k = y.len();
    let total: f64 = y.iter().sum();
    if epsilon == 0.0 {
        y.iter_mut().for_each(|v| *v /= total);
        return;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));

    let mut pinned_mass = 0.0;
    let mut m = 0;
    let mut tau = 1.0 / total;
    while m < k {
        tau = (1.0 - m as f64 * epsilon) / (total - pinned_mass);
        let next = y[order[m]];
        let prev_ok = m == 0 || y[order[m - 1]] * tau <= epsilon;
        if prev_ok && next * tau > epsilon {
            break;
        }
        pinned_mass += next;
        m += 1;
    }
    debug_assert!(m < k, "epsilon < 1/K keeps one component free");
    for (rank, &idx) in order.iter().enumerate() {
        y[idx] = if rank < m { epsilon } else { tau * y[idx] };
    }
}

/// KL projection onto `Δ_{K,ε}` via sorting.
pub fn project_kl_sorted(y: &[f64], epsilon: f64) -> Result<SimplexVector> {
    check_epsilon(y.len(), epsilon)?;
    check_positive(y)?;
    let mut out = y.to_vec();
    project_sorted_in_place(&mut out, epsilon);
    Ok(SimplexVector {
        values: out,
        epsilon,
    })
}

/// The normalize-then-pin loop: repeatedly pin the smallest components to `ε`
/// and rescale the rest until nothing lies below `ε`.
pub(crate) fn project_iterative_in_place(y: &mut [f64], epsilon: f64) {
    let total: f64 = y.iter().sum();
    y.iter_mut().for_each(|v| *v /= total);
    let mut pinned: Vec<bool> = y.iter().map(|&v| v <= epsilon).collect();
    while y.iter().any(|&v| v < epsilon) {
        let min = y.iter().copied().fold(f64::INFINITY, f64::min);
        for (p, &v) in pinned.iter_mut().zip(y.iter()) {
            if v == min {
                *p = true;
            }
        }
        let count = pinned.iter().filter(|&&p| p).count();
        let pinned_sum: f64 = y
            .iter()
            .zip(&pinned)
            .filter(|(_, &p)| p)
            .map(|(v, _)| v)
            .sum();
        let tau = (1.0 - count as f64 * epsilon) / (1.0 - pinned_sum);
        for (v, &p) in y.iter_mut().zip(&pinned) {
            *v = if p { epsilon } else { tau * *v };
        }
    }
}

/// KL projection onto `Δ_{K,ε}` by the iterative pinning loop.
pub fn project_kl_iterative(y: &[f64], epsilon: f64) -> Result<SimplexVector> {
    check_epsilon(y.len(), epsilon)?;
    check_positive(y)?;
    let mut out = y.to_vec();
    project_iterative_in_place(&mut out, epsilon);
    Ok(SimplexVector {
        values: out,
        epsilon,
    })
}

/// Componentwise `Π_j x_j^{γ_j}`, evaluated as `exp(Σ_j γ_j log x_j)`.
pub fn weighted_geometric_mean(points: &[&[f64]], gamma: &[f64]) -> Result<Vec<f64>> {
    if points.is_empty() || points.len() != gamma.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            found: gamma.len(),
        });
    }
    let gsum: f64 = gamma.iter().sum();
    if gamma.iter().any(|g| !(*g >= 0.0)) || (gsum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter("weights must be convex".into()));
    }
    let k = points[0].len();
    let mut acc = vec![0.0; k];
    for (p, &g) in points.iter().zip(gamma) {
        if p.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: p.len(),
            });
        }
        check_positive(p)?;
        for (a, v) in acc.iter_mut().zip(p.iter()) {
            *a += g * v.ln();
        }
    }
    Ok(acc.into_iter().map(f64::exp).collect())
}

/// Shifts `v` so that its minimum equals `ε`, then normalizes. The output
/// components are at least `ε / (1 + Kε)` when `v` is nonnegative.
pub fn additive_shift_renormalize(v: &[f64], epsilon: f64) -> SimplexVector {
    let mut out = v.to_vec();
    additive_in_place(&mut out, epsilon);
    let floor = epsilon / (1.0 + v.len() as f64 * epsilon);
    SimplexVector {
        values: out,
        epsilon: floor,
    }
}

pub(crate) fn additive_in_place(v: &mut [f64], epsilon: f64) {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = epsilon - min;
    v.iter_mut().for_each(|x| *x += shift);
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
}

/// `-Σ_k w_k log w_k` with `0 log 0 = 0`.
pub fn entropy(w: &[f64]) -> f64 {
    -w.iter()
        .map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 })
        .sum::<f64>()
}

/// Mean row entropy, summed in row order.
pub fn average_entropy<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>) -> f64 {
    let n = rows.len();
    if n == 0 {
        return 0.0;
    }
    rows.map(entropy).sum::<f64>() / n as f64
}
