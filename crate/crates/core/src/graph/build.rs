use super::{mirror, GridGeometry, WeightGraph};
use crate::error::{Error, Result};

/// One-dimensional mirrored window weights: `table[a][b]` is the total kernel
/// mass that position `a` places on position `b`. The table is symmetric and
/// is filled from the upper triangle so that `table[a][b] == table[b][a]`
/// holds bitwise.
fn axis_table(len: usize, half: usize, kernel: &dyn Fn(isize) -> f64) -> Vec<Vec<f64>> {
    let mut table = vec![vec![0.0; len]; len];
    for (a, row) in table.iter_mut().enumerate() {
        for d in -(half as isize)..=(half as isize) {
            row[mirror(a as isize + d, len)] += kernel(d);
        }
    }
    for a in 0..len {
        for b in 0..a {
            table[a][b] = table[b][a];
        }
    }
    table
}

fn separable_graph(geom: GridGeometry, half: usize, kernel: &dyn Fn(isize) -> f64) -> Result<WeightGraph> {
    let rows_t = axis_table(geom.height, half, kernel);
    let cols_t = axis_table(geom.width, half, kernel);
    let total: f64 = (-(half as isize)..=(half as isize)).map(kernel).sum::<f64>().powi(2);
    let mut rows = Vec::with_capacity(geom.len());
    for i in 0..geom.len() {
        let (r, c) = geom.coords(i);
        let mut row = Vec::new();
        for (r2, &wr) in rows_t[r].iter().enumerate() {
            if wr == 0.0 {
                continue;
            }
            for (c2, &wc) in cols_t[c].iter().enumerate() {
                if wc == 0.0 {
                    continue;
                }
                row.push((geom.index(r2, c2), wr * wc / total));
            }
        }
        rows.push(row);
    }
    let g = WeightGraph::from_rows(rows)?;
    debug_assert!(g.is_symmetric());
    Ok(g)
}

fn check_window(geom: GridGeometry, s: usize) -> Result<usize> {
    if s == 0 || s % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "window side must be odd and positive, got {s}"
        )));
    }
    if s > geom.height.max(geom.width) {
        return Err(Error::InvalidParameter(format!(
            "window side {s} exceeds the grid {}x{}",
            geom.height, geom.width
        )));
    }
    Ok((s - 1) / 2)
}

/// Uniform `s × s` window weights `1/s²` with mirrored boundary.
pub fn build_local_uniform(geom: GridGeometry, s: usize) -> Result<WeightGraph> {
    let half = check_window(geom, s)?;
    separable_graph(geom, half, &|_| 1.0)
}

/// Gaussian weights on an `s × s` window, cut off outside `[-3σ, 3σ]` per
/// axis, mirrored at the boundary and normalized.
pub fn build_gaussian(geom: GridGeometry, s: usize, sigma: f64) -> Result<WeightGraph> {
    let half = check_window(geom, s)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let cutoff = (3.0 * sigma).floor().min(half as f64) as usize;
    let two_var = 2.0 * sigma * sigma;
    separable_graph(geom, cutoff, &|d| (-((d * d) as f64) / two_var).exp())
}
