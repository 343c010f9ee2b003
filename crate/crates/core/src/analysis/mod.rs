//! Limit behavior of the unprojected (ε = 0) iteration.
//!
//! With `P = Q Λ Qᵀ` and `â = Qᵀ log A`, the log-ratio of labels `l` and `k`
//! at pixel `i` after `r` steps is `Σ_s c_{l,k}(s) μ_s^r` with `μ_s = 1 + λ_s`
//! and the coefficients `c_{l,k}(s)` summed over each eigenvalue group. The
//! first nonvanishing coefficient over the groups with `λ > 0` decides
//! whether the row runs to a vertex of the simplex and which one.

mod example26;

use std::fmt::Write as _;

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{EigenStructure, WeightGraph, EIGEN_GROUP_TOL};
use crate::labeling::LogRecursion;

pub use example26::{
    example26_initialization, example26_weights, reproduce_example_2_6, reproduce_with, EpsilonRun,
    Example26Report, EPS0_SETTLE_BOUND, REFERENCE_LABELS,
};

/// Relative tolerance below which a coefficient counts as zero.
pub const COEFF_ZERO_TOL: f64 = 1e-9;

/// Per-pixel prediction of the ε = 0 limit.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// The row converges to the unit vector of `label` (1-based); `decisive_s`
    /// is the deepest eigenvalue group consulted.
    Vertex { label: usize, decisive_s: usize },
    /// The row converges to an interior point of a face.
    Interior { limit: Vec<f64> },
    /// A coefficient lies too close to the zero tolerance to decide.
    Indeterminate,
}

impl Verdict {
    pub fn label(&self) -> Option<usize> {
        match self {
            Verdict::Vertex { label, .. } => Some(*label),
            _ => None,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Verdict::Vertex { .. } => "vertex",
            Verdict::Interior { .. } => "interior",
            Verdict::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sign {
    Zero,
    Negative,
    Positive,
    Ambiguous,
}

/// Spectral data of one `(A, P)` instance.
#[derive(Debug, Clone)]
pub struct SpectralAnalysis {
    pub eig: EigenStructure,
    /// `â = Qᵀ log A`, n × K.
    pub a_hat: DMatrix<f64>,
    log_a: DMatrix<f64>,
    recursion: LogRecursion,
    zero_tol: f64,
}

impl SpectralAnalysis {
    pub fn new(a: &Array2<f64>, p: &WeightGraph) -> Result<Self> {
        Self::with_recursion(a, p, LogRecursion::Standard)
    }

    /// Analysis of the recursion with the extra `A_i` factor; requires an
    /// invertible `P`.
    pub fn new_apss(a: &Array2<f64>, p: &WeightGraph) -> Result<Self> {
        Self::with_recursion(a, p, LogRecursion::Apss)
    }

    fn with_recursion(a: &Array2<f64>, p: &WeightGraph, recursion: LogRecursion) -> Result<Self> {
        p.require_symmetric()?;
        let (n, k) = a.dim();
        if n != p.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                found: n,
            });
        }
        if a.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain("initialization must be strictly positive".into()));
        }
        let eig = EigenStructure::from_dense(&p.to_dense());
        if recursion == LogRecursion::Apss {
            if let Some(l) = eig.lambda.iter().find(|l| l.abs() <= EIGEN_GROUP_TOL) {
                return Err(Error::NotApplicable(format!(
                    "weight matrix is singular (eigenvalue {l:e})"
                )));
            }
        }
        let log_a = DMatrix::from_fn(n, k, |i, c| a[[i, c]].ln());
        let a_hat = eig.q.transpose() * &log_a;
        let mut out = Self {
            eig,
            a_hat,
            log_a,
            recursion,
            zero_tol: 0.0,
        };
        let mut max_c: f64 = 0.0;
        for i in 0..n {
            for l in 0..k {
                for c in 0..k {
                    for v in out.coefficients(i, l, c) {
                        max_c = max_c.max(v.abs());
                    }
                }
            }
        }
        out.zero_tol = COEFF_ZERO_TOL * max_c;
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn k(&self) -> usize {
        self.a_hat.ncols()
    }

    pub fn zero_tolerance(&self) -> f64 {
        self.zero_tol
    }

    pub fn log_a(&self) -> &DMatrix<f64> {
        &self.log_a
    }

    /// `c_{l,k}(s)` for `s = 1..=ŝ` at pixel `i` (labels 0-based). For the
    /// APSS recursion each term carries the factor `1/λ_j`.
    pub fn coefficients(&self, i: usize, l: usize, k: usize) -> Vec<f64> {
        self.eig
            .groups
            .iter()
            .take(self.eig.s_hat)
            .map(|&(_, start, mult)| self.group_sum(i, l, k, start, mult))
            .collect()
    }

    fn group_sum(&self, i: usize, l: usize, k: usize, start: usize, mult: usize) -> f64 {
        let apss = self.recursion == LogRecursion::Apss;
        (start..start + mult)
            .map(|j| {
                let t = self.eig.q[(i, j)] * (self.a_hat[(j, l)] - self.a_hat[(j, k)]);
                if apss {
                    t / self.eig.lambda[j]
                } else {
                    t
                }
            })
            .sum()
    }

    /// Log-ratio `g_{l,k}(r) = log(W_{i,l} / W_{i,k})` of the unnormalized
    /// iterate after `r` steps, from the spectral formula.
    pub fn g(&self, i: usize, l: usize, k: usize, r: i32) -> f64 {
        let apss = self.recursion == LogRecursion::Apss;
        (0..self.n())
            .map(|j| {
                let d = self.eig.q[(i, j)] * (self.a_hat[(j, l)] - self.a_hat[(j, k)]);
                let mu = 1.0 + self.eig.lambda[j];
                if apss {
                    d * (mu.powi(r + 1) - 1.0) / self.eig.lambda[j]
                } else {
                    d * mu.powi(r)
                }
            })
            .sum()
    }

    fn classify(&self, c: f64) -> Sign {
        let a = c.abs();
        if a <= self.zero_tol / 10.0 {
            Sign::Zero
        } else if a < self.zero_tol * 10.0 {
            Sign::Ambiguous
        } else if c < 0.0 {
            Sign::Negative
        } else {
            Sign::Positive
        }
    }

    /// First non-zero coefficient sign for the pair, and its 1-based group.
    fn leading(&self, i: usize, l: usize, k: usize) -> (Sign, usize) {
        for (s, c) in self.coefficients(i, l, k).into_iter().enumerate() {
            match self.classify(c) {
                Sign::Zero => continue,
                other => return (other, s + 1),
            }
        }
        (Sign::Zero, 0)
    }

    /// Predicted limit of row `i`.
    pub fn predict(&self, i: usize) -> Verdict {
        let k_count = self.k();
        let mut lead = vec![vec![(Sign::Zero, 0); k_count]; k_count];
        for k in 0..k_count {
            for l in 0..k_count {
                if l != k {
                    lead[k][l] = self.leading(i, l, k);
                    if lead[k][l].0 == Sign::Ambiguous {
                        return Verdict::Indeterminate;
                    }
                }
            }
        }
        for k in 0..k_count {
            let all_negative = (0..k_count)
                .filter(|&l| l != k)
                .all(|l| lead[k][l].0 == Sign::Negative);
            if all_negative {
                let decisive_s = (0..k_count)
                    .filter(|&l| l != k)
                    .map(|l| lead[k][l].1)
                    .max()
                    .unwrap_or(1);
                return Verdict::Vertex {
                    label: k + 1,
                    decisive_s,
                };
            }
        }
        // Components some other label outgrows vanish; the rest keep the
        // bounded part of their log-ratios.
        let survivors: Vec<usize> = (0..k_count)
            .filter(|&k| (0..k_count).all(|l| l == k || lead[k][l].0 != Sign::Positive))
            .collect();
        let h: Vec<f64> = (0..k_count).map(|k| self.bounded_log(i, k)).collect();
        let max = survivors
            .iter()
            .map(|&k| h[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut limit = vec![0.0; k_count];
        let mut total = 0.0;
        for &k in &survivors {
            limit[k] = (h[k] - max).exp();
            total += limit[k];
        }
        limit.iter_mut().for_each(|v| *v /= total);
        Verdict::Interior { limit }
    }

    /// The `r`-independent part of `log W_{i,k}` among the non-growing
    /// eigenvalue groups.
    fn bounded_log(&self, i: usize, k: usize) -> f64 {
        let n = self.n();
        match self.recursion {
            LogRecursion::Standard => (0..n)
                .filter(|&j| self.eig.lambda[j].abs() <= EIGEN_GROUP_TOL)
                .map(|j| self.eig.q[(i, j)] * self.a_hat[(j, k)])
                .sum(),
            LogRecursion::Apss => (0..n)
                .filter(|&j| self.eig.lambda[j] < -EIGEN_GROUP_TOL)
                .map(|j| -self.eig.q[(i, j)] * self.a_hat[(j, k)] / self.eig.lambda[j])
                .sum(),
        }
    }

    pub fn predict_all(&self) -> Vec<Verdict> {
        (0..self.n()).map(|i| self.predict(i)).collect()
    }
}

/// `c_{l,k}(s)` for the standard recursion (labels 0-based).
pub fn coefficients(a: &Array2<f64>, p: &WeightGraph, i: usize, l: usize, k: usize) -> Result<Vec<f64>> {
    Ok(SpectralAnalysis::new(a, p)?.coefficients(i, l, k))
}

/// `c_{l,k}(s)` for the APSS recursion (labels 0-based).
pub fn coefficients_apss(
    a: &Array2<f64>,
    p: &WeightGraph,
    i: usize,
    l: usize,
    k: usize,
) -> Result<Vec<f64>> {
    Ok(SpectralAnalysis::new_apss(a, p)?.coefficients(i, l, k))
}

pub fn predict_limit(a: &Array2<f64>, p: &WeightGraph, i: usize) -> Result<Verdict> {
    Ok(SpectralAnalysis::new(a, p)?.predict(i))
}

/// Column products of `A` and the label every pixel collapses to when one
/// product is strictly largest.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseCheck {
    pub log_column_sums: Vec<f64>,
    pub label: Option<usize>,
}

impl CollapseCheck {
    pub fn products(&self) -> Vec<f64> {
        self.log_column_sums.iter().map(|v| v.exp()).collect()
    }
}

/// Collapse test for a symmetric stochastic `P` with a simple eigenvalue one
/// and no eigenvalue `-1`.
pub fn check_global_collapse(a: &Array2<f64>, p: &WeightGraph) -> Result<CollapseCheck> {
    p.require_symmetric()
        .map_err(|e| Error::NotApplicable(e.to_string()))?;
    let eig = EigenStructure::from_dense(&p.to_dense());
    let n = eig.len();
    if (eig.lambda[0] - 1.0).abs() > EIGEN_GROUP_TOL {
        return Err(Error::NotApplicable(format!(
            "largest eigenvalue is {} rather than 1",
            eig.lambda[0]
        )));
    }
    if n > 1 && eig.lambda[1] > 1.0 - EIGEN_GROUP_TOL {
        return Err(Error::NotApplicable("eigenvalue 1 is not simple".into()));
    }
    if eig.lambda[n - 1] < -1.0 + EIGEN_GROUP_TOL {
        return Err(Error::NotApplicable("-1 is an eigenvalue".into()));
    }
    if a.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("initialization must be strictly positive".into()));
    }
    let sums: Vec<f64> = a
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.ln()).sum())
        .collect();
    let scale = sums.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let best = (0..sums.len())
        .max_by(|&x, &y| sums[x].total_cmp(&sums[y]))
        .expect("K >= 1");
    let strict = sums
        .iter()
        .enumerate()
        .all(|(k, v)| k == best || *v < sums[best] - 1e-12 * scale);
    Ok(CollapseCheck {
        log_column_sums: sums,
        label: strict.then_some(best + 1),
    })
}

/// Human-readable report of per-pixel verdicts.
pub fn render_report(analysis: &SpectralAnalysis, verdicts: &[Verdict], collapse: Option<&CollapseCheck>) -> String {
    let mut out = String::new();
    let eig = &analysis.eig;
    let _ = writeln!(out, "pixels: {}  labels: {}", analysis.n(), analysis.k());
    let _ = writeln!(
        out,
        "distinct eigenvalues: {}  positive groups: {}",
        eig.groups.len(),
        eig.s_hat
    );
    let lambdas: Vec<String> = eig.groups.iter().map(|g| format!("{:.6}x{}", g.0, g.2)).collect();
    let _ = writeln!(out, "spectrum: {}", lambdas.join(" "));
    let _ = writeln!(out, "zero tolerance: {:e}", analysis.zero_tolerance());
    match collapse {
        Some(c) => {
            let prods: Vec<String> = c.products().iter().map(|p| format!("{p:.6e}")).collect();
            let _ = writeln!(out, "column products: {}", prods.join(" "));
            match c.label {
                Some(l) => {
                    let _ = writeln!(out, "global collapse: every pixel tends to label {l}");
                }
                None => {
                    let _ = writeln!(out, "global collapse: no strict maximizer");
                }
            }
        }
        None => {
            let _ = writeln!(out, "global collapse: not applicable");
        }
    }
    for (i, v) in verdicts.iter().enumerate() {
        match v {
            Verdict::Vertex { label, decisive_s } => {
                let _ = writeln!(out, "pixel {i}: vertex {label} (decided at group {decisive_s})");
            }
            Verdict::Interior { limit } => {
                let parts: Vec<String> = limit.iter().map(|x| format!("{x:.6}")).collect();
                let _ = writeln!(out, "pixel {i}: interior ({})", parts.join(", "));
            }
            Verdict::Indeterminate => {
                let _ = writeln!(out, "pixel {i}: indeterminate");
            }
        }
    }
    out
}

/// CSV with columns `pixel,verdict,label,decisive_s`.
pub fn render_csv(verdicts: &[Verdict]) -> String {
    let mut out = String::from("pixel,verdict,label,decisive_s\n");
    for (i, v) in verdicts.iter().enumerate() {
        let (label, s) = match v {
            Verdict::Vertex { label, decisive_s } => (label.to_string(), decisive_s.to_string()),
            _ => (String::new(), String::new()),
        };
        let _ = writeln!(out, "{i},{},{label},{s}", v.kind());
    }
    out
}
