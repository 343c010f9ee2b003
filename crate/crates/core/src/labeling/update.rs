use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::softmax_in_place;
use crate::error::{Error, Result};
use crate::graph::WeightGraph;
use crate::simplex::{
    additive_in_place, average_entropy, check_epsilon, project_iterative_in_place, DEFAULT_EPSILON,
};

/// Which update the iteration performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Geometric-mean filtering followed by the KL projection.
    Standard,
    /// As `Standard`, with the extra factor `A_i` in the product.
    Apss,
    /// Geometric-mean filtering followed by an additive shift.
    Additive,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Variant::Standard),
            "apss" => Ok(Variant::Apss),
            "additive" => Ok(Variant::Additive),
            other => Err(Error::InvalidParameter(format!("unknown variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Standard => "standard",
            Variant::Apss => "apss",
            Variant::Additive => "additive",
        })
    }
}

/// Stop once the mean row entropy drops below the threshold, or after
/// `max_iterations`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub entropy_threshold: f64,
    pub max_iterations: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            entropy_threshold: 1e-3,
            max_iterations: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationConfig {
    pub epsilon: f64,
    pub stop: StoppingRule,
    pub variant: Variant,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            stop: StoppingRule::default(),
            variant: Variant::Standard,
        }
    }
}

/// Final assignment matrix plus run diagnostics.
#[derive(Debug, Clone)]
pub struct LabelState {
    pub w: Array2<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    pub entropy_trace: Vec<f64>,
    pub converged: bool,
}

impl LabelState {
    pub fn labels(&self) -> Vec<usize> {
        super::assign_labels(&self.w)
    }

    pub fn final_entropy(&self) -> f64 {
        self.entropy_trace.last().copied().unwrap_or(f64::NAN)
    }
}

fn check_positive(w: &Array2<f64>, what: &str) -> Result<()> {
    if let Some(((i, k), v)) = w.indexed_iter().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Domain(format!(
            "{what} entry ({i}, {k}) must be positive, got {v}"
        )));
    }
    Ok(())
}

fn check_shapes(w: &Array2<f64>, rho: &WeightGraph) -> Result<()> {
    if w.nrows() != rho.len() {
        return Err(Error::DimensionMismatch {
            expected: rho.len(),
            found: w.nrows(),
        });
    }
    Ok(())
}

/// Log of the unnormalized update, `log W_i + Σ_j ρ_ij log W_j (+ log A_i)`,
/// written into `out`.
fn log_update(
    logw: &Array2<f64>,
    log_a: Option<&Array2<f64>>,
    rho: &WeightGraph,
    out: &mut Array2<f64>,
) {
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            row.assign(&logw.row(i));
            for &(j, w) in rho.row(i) {
                row.scaled_add(w, &logw.row(j));
            }
            if let Some(a) = log_a {
                row += &a.row(i);
            }
        });
}

/// `U = W ∘ exp(P log W)`, the raw multiplicative update.
pub fn step_multiplicative(w: &Array2<f64>, rho: &WeightGraph) -> Result<Array2<f64>> {
    check_shapes(w, rho)?;
    check_positive(w, "assignment")?;
    let logw = w.mapv(f64::ln);
    let mut out = Array2::zeros(w.dim());
    log_update(&logw, None, rho, &mut out);
    Ok(out.mapv_into(f64::exp))
}

/// Elementwise form `U_i = W_i ∘ Π_j W_j^{ρ_ij}` with powers and products.
pub fn step_multiplicative_product(w: &Array2<f64>, rho: &WeightGraph) -> Result<Array2<f64>> {
    check_shapes(w, rho)?;
    check_positive(w, "assignment")?;
    let mut out = w.clone();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        for &(j, weight) in rho.row(i) {
            for (dst, src) in row.iter_mut().zip(w.row(j)) {
                *dst *= src.powf(weight);
            }
        }
    }
    Ok(out)
}

/// `U_i = A_i ∘ W_i ∘ Π_j W_j^{ρ_ij}`.
pub fn step_apss(w: &Array2<f64>, rho: &WeightGraph, a: &Array2<f64>) -> Result<Array2<f64>> {
    check_shapes(w, rho)?;
    if a.dim() != w.dim() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            found: a.len(),
        });
    }
    check_positive(w, "assignment")?;
    check_positive(a, "initialization")?;
    let logw = w.mapv(f64::ln);
    let log_a = a.mapv(f64::ln);
    let mut out = Array2::zeros(w.dim());
    log_update(&logw, Some(&log_a), rho, &mut out);
    Ok(out.mapv_into(f64::exp))
}

/// Runs the filtering iteration from `W⁽⁰⁾ = A` until the stopping rule
/// fires. Unconverged runs return their last iterate with `converged = false`.
pub fn iterate(a: &Array2<f64>, rho: &WeightGraph, config: &IterationConfig) -> Result<LabelState> {
    let (n, k) = a.dim();
    check_shapes(a, rho)?;
    check_epsilon(k, config.epsilon)?;
    if a.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain("initialization must be nonnegative and finite".into()));
    }
    if !(config.stop.entropy_threshold > 0.0) {
        return Err(Error::InvalidParameter("entropy threshold must be positive".into()));
    }
    let eps = config.epsilon;
    let log_a = match config.variant {
        Variant::Apss => Some(a.mapv(f64::ln)),
        _ => None,
    };

    let mut w = a.clone();
    let mut logw = Array2::zeros((n, k));
    let mut next = Array2::zeros((n, k));
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.stop.max_iterations {
        logw.zip_mut_with(&w, |l, v| *l = v.ln());
        log_update(&logw, log_a.as_ref(), rho, &mut next);
        next.axis_iter_mut(Axis(0)).into_par_iter().for_each(|mut row| {
            let row = row.as_slice_mut().expect("row-major rows are contiguous");
            // Normalize first so that the exponentials stay in range.
            softmax_in_place(row);
            match config.variant {
                Variant::Additive => additive_in_place(row, eps),
                _ => project_iterative_in_place(row, eps),
            }
        });
        std::mem::swap(&mut w, &mut next);
        iterations += 1;

        let h = average_entropy(w.axis_iter(Axis(0)).map(|r| r.to_slice().expect("contiguous")));
        trace.push(h);
        if h < config.stop.entropy_threshold {
            converged = true;
            break;
        }
    }
    let floor = match config.variant {
        Variant::Additive => eps / (1.0 + k as f64 * eps),
        _ => eps,
    };
    Ok(LabelState {
        w,
        epsilon: floor,
        iterations,
        entropy_trace: trace,
        converged,
    })
}
