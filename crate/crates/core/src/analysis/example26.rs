//! The ten-pixel signal with three labels used as the worked example of the
//! ε-dependence of the labeling.

use std::fmt::Write as _;

use ndarray::Array2;

use super::{check_global_collapse, CollapseCheck};
use crate::error::Result;
use crate::graph::{build_local_uniform, GridGeometry, WeightGraph};
use crate::labeling::{iterate, iterate_log_domain_eps0, IterationConfig, LogRecursion, StoppingRule};

/// Published labels per ε, pixels left to right.
pub const REFERENCE_LABELS: [(f64, [usize; 10]); 3] = [
    (1e-10, [1, 1, 3, 3, 3, 3, 3, 2, 2, 2]),
    (1e-11, [1, 1, 1, 3, 3, 3, 3, 2, 2, 2]),
    (1e-81, [1, 1, 1, 3, 3, 3, 3, 3, 2, 2]),
];

/// Iteration by which the ε = 0 labels must have settled on label 3.
pub const EPS0_SETTLE_BOUND: usize = 95;
const EPS0_RUN: usize = 200;
const LARGE_EPSILON: f64 = 1e-1;

pub fn example26_initialization() -> Array2<f64> {
    Array2::from_shape_fn((10, 3), |(i, k)| {
        let row = match i {
            0..=1 => [0.8, 0.1, 0.1],
            2..=6 => [0.2, 0.2, 0.6],
            _ => [0.25, 0.5, 0.25],
        };
        row[k]
    })
}

pub fn example26_weights() -> WeightGraph {
    build_local_uniform(GridGeometry::new(1, 10).expect("valid grid"), 3).expect("valid window")
}

#[derive(Debug, Clone)]
pub struct EpsilonRun {
    pub epsilon: f64,
    pub labels: Vec<usize>,
    pub expected: Option<Vec<usize>>,
    pub iterations: usize,
    pub converged: bool,
    pub final_entropy: f64,
    pub w: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Example26Report {
    pub runs: Vec<EpsilonRun>,
    pub eps0_labels: Vec<usize>,
    pub eps0_settled_at: usize,
    pub collapse: CollapseCheck,
    /// Human-readable descriptions of every disagreement with the table.
    pub mismatches: Vec<String>,
}

impl Example26Report {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:<22} {:>6} {:>10}  status", "eps", "labels", "iters", "entropy");
        for run in &self.runs {
            let status = match &run.expected {
                Some(e) if *e == run.labels => "match",
                Some(_) => "MISMATCH",
                None => "-",
            };
            let _ = writeln!(
                out,
                "{:<8.0e} {:<22} {:>6} {:>10.3e}  {status}",
                run.epsilon,
                join(&run.labels),
                run.iterations,
                run.final_entropy
            );
        }
        let _ = writeln!(
            out,
            "{:<8} {:<22} {:>6} {:>10}  settled at iteration {}",
            "0",
            join(&self.eps0_labels),
            EPS0_RUN,
            "-",
            self.eps0_settled_at
        );
        let scaled: Vec<String> = self
            .collapse
            .products()
            .iter()
            .map(|p| format!("{:.6}", p * 2e7))
            .collect();
        let _ = writeln!(out, "column products x 2e7: ({})", scaled.join(", "));
        match self.collapse.label {
            Some(l) => {
                let _ = writeln!(out, "collapse label: {l}");
            }
            None => {
                let _ = writeln!(out, "collapse label: none");
            }
        }
        if self.passed() {
            let _ = writeln!(out, "result: all rows match");
        } else {
            for m in &self.mismatches {
                let _ = writeln!(out, "mismatch: {m}");
            }
        }
        out
    }
}

fn join(labels: &[usize]) -> String {
    labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
}

fn differing(got: &[usize], want: &[usize]) -> Vec<usize> {
    got.iter()
        .zip(want)
        .enumerate()
        .filter(|(_, (g, w))| g != w)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Runs the example with the given stopping rule for the ε > 0 rows.
pub fn reproduce_with(stop: StoppingRule) -> Result<Example26Report> {
    let a = example26_initialization();
    let p = example26_weights();
    let mut runs = Vec::new();
    let mut mismatches = Vec::new();

    let mut cases: Vec<(f64, Option<Vec<usize>>)> =
        REFERENCE_LABELS.iter().map(|(e, l)| (*e, Some(l.to_vec()))).collect();
    // The large-ε row keeps the labels of the first row but stops short of
    // the vertices.
    cases.push((LARGE_EPSILON, Some(REFERENCE_LABELS[0].1.to_vec())));

    for (epsilon, expected) in cases {
        let config = IterationConfig {
            epsilon,
            stop,
            ..IterationConfig::default()
        };
        let state = iterate(&a, &p, &config)?;
        let labels = state.labels();
        if let Some(e) = &expected {
            let diff = differing(&labels, e);
            if !diff.is_empty() {
                mismatches.push(format!("eps {epsilon:e}: pixels {diff:?} differ"));
            }
        }
        runs.push(EpsilonRun {
            epsilon,
            final_entropy: state.final_entropy(),
            labels,
            expected,
            iterations: state.iterations,
            converged: state.converged,
            w: state.w,
        });
    }

    let eps0 = iterate_log_domain_eps0(&a, &p, EPS0_RUN, LogRecursion::Standard)?;
    let diff = differing(&eps0.labels, &[3; 10]);
    if !diff.is_empty() {
        mismatches.push(format!("eps 0: pixels {diff:?} are not label 3"));
    }
    if eps0.settled_at > EPS0_SETTLE_BOUND {
        mismatches.push(format!(
            "eps 0: labels settled at iteration {} (bound {EPS0_SETTLE_BOUND})",
            eps0.settled_at
        ));
    }

    let collapse = check_global_collapse(&a, &p)?;
    if collapse.label != Some(3) {
        mismatches.push(format!("collapse label {:?}, expected 3", collapse.label));
    }

    Ok(Example26Report {
        runs,
        eps0_labels: eps0.labels,
        eps0_settled_at: eps0.settled_at,
        collapse,
        mismatches,
    })
}

pub fn reproduce_example_2_6() -> Result<Example26Report> {
    reproduce_with(StoppingRule::default())
}
