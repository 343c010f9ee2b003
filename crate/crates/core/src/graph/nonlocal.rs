use rayon::prelude::*;

use super::{GridGeometry, WeightGraph};
use crate::error::{Error, Result};
use crate::labeling::FeatureImage;
use crate::metric::MetricSpace;

/// Parameters of the patch-similarity graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlocalParams {
    /// Patch half-width: patches span `(2 * patch_half + 1)²` pixels.
    pub patch_half: usize,
    /// Number of most similar pixels kept per pixel before symmetrization.
    pub neighbors: usize,
    /// Side of the square search window.
    pub search_window: usize,
    pub sigma_patch: f64,
    pub sigma_weight: f64,
}

impl NonlocalParams {
    /// Color-image setting with 7, 19 or 37 neighbors.
    pub fn color(neighbors: usize) -> Self {
        Self {
            patch_half: 3,
            neighbors,
            search_window: 11,
            sigma_patch: 1.0,
            sigma_weight: 0.2,
        }
    }

    /// Tensor-image setting.
    pub fn tensor() -> Self {
        Self {
            patch_half: 3,
            neighbors: 9,
            search_window: 15,
            sigma_patch: 3.0,
            sigma_weight: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.neighbors == 0 || self.search_window == 0 {
            return Err(Error::InvalidParameter(
                "neighbor count and search window must be positive".into(),
            ));
        }
        if self.search_window % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "search window side must be odd, got {}",
                self.search_window
            )));
        }
        if !(self.sigma_patch > 0.0) || !(self.sigma_weight > 0.0) {
            return Err(Error::InvalidParameter(
                "patch and weight sigmas must be positive".into(),
            ));
        }
        if self.neighbors > self.search_window * self.search_window {
            return Err(Error::InvalidParameter(format!(
                "{} neighbors do not fit a {}x{} search window",
                self.neighbors, self.search_window, self.search_window
            )));
        }
        Ok(())
    }
}

/// Discrete Gaussian over the patch offsets, normalized to unit mass.
fn patch_kernel(half: usize, sigma: f64) -> Vec<f64> {
    let side = 2 * half + 1;
    let two_var = 2.0 * sigma * sigma;
    let mut k = Vec::with_capacity(side * side);
    for l1 in -(half as isize)..=(half as isize) {
        for l2 in -(half as isize)..=(half as isize) {
            k.push((-((l1 * l1 + l2 * l2) as f64) / two_var).exp());
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

fn patch_distance_with(
    image: &FeatureImage,
    space: &MetricSpace,
    kernel: &[f64],
    half: usize,
    i: usize,
    j: usize,
) -> Result<f64> {
    if i == j {
        return Ok(0.0);
    }
    let geom = image.geom;
    let (ri, ci) = geom.coords(i);
    let (rj, cj) = geom.coords(j);
    let h = half as isize;
    let mut acc = 0.0;
    let mut mass = 0.0;
    let mut k = 0;
    for l1 in -h..=h {
        for l2 in -h..=h {
            let a = geom.mirrored_index(ri as isize + l1, ci as isize + l2);
            let b = geom.mirrored_index(rj as isize + l1, cj as isize + l2);
            if image.valid[a] && image.valid[b] {
                acc += kernel[k] * space.distance(&image.features[a], &image.features[b])?;
                mass += kernel[k];
            }
            k += 1;
        }
    }
    // Missing pixels drop out; the remaining kernel mass is rescaled to one.
    Ok(if mass > 0.0 { acc / mass } else { f64::INFINITY })
}

/// Gaussian-weighted patch distance between pixels `i` and `j`.
pub fn patch_distance(
    image: &FeatureImage,
    space: &MetricSpace,
    params: &NonlocalParams,
    i: usize,
    j: usize,
) -> Result<f64> {
    let kernel = patch_kernel(params.patch_half, params.sigma_patch);
    patch_distance_with(image, space, &kernel, params.patch_half, i, j)
}

fn search_candidates(geom: GridGeometry, i: usize, side: usize) -> Vec<usize> {
    let (r, c) = geom.coords(i);
    let h = side / 2;
    let r0 = r.saturating_sub(h);
    let r1 = (r + h).min(geom.height - 1);
    let c0 = c.saturating_sub(h);
    let c1 = (c + h).min(geom.width - 1);
    let mut out = Vec::with_capacity(side * side);
    for rr in r0..=r1 {
        for cc in c0..=c1 {
            out.push(geom.index(rr, cc));
        }
    }
    out
}

/// Patch-similarity graph: each pixel keeps its `neighbors` most similar
/// pixels in the search window, neighborhoods are made mutual by union and
/// weights `exp(-d / (2 σ_w²))` are normalized per row.
///
/// Ties are broken by scanline distance `|j - i|`, then by index, so the
/// pixel itself always comes first.
pub fn build_nonlocal(
    image: &FeatureImage,
    space: &MetricSpace,
    params: &NonlocalParams,
) -> Result<WeightGraph> {
    params.validate()?;
    let geom = image.geom;
    let n = geom.len();
    if params.neighbors > n {
        return Err(Error::InvalidParameter(format!(
            "{} neighbors requested for {n} pixels",
            params.neighbors
        )));
    }
    let kernel = patch_kernel(params.patch_half, params.sigma_patch);

    let selected: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand = search_candidates(geom, i, params.search_window)
                .into_iter()
                .map(|j| {
                    patch_distance_with(image, space, &kernel, params.patch_half, i, j)
                        .map(|d| (j, d))
                        .map_err(|e| e.at_pixel(i))
                })
                .collect::<Result<Vec<_>>>()?;
            cand.sort_by(|a, b| {
                a.1.total_cmp(&b.1)
                    .then(a.0.abs_diff(i).cmp(&b.0.abs_diff(i)))
                    .then(a.0.cmp(&b.0))
            });
            cand.truncate(params.neighbors);
            Ok(cand)
        })
        .collect::<Result<_>>()?;

    let mut union: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, list) in selected.iter().enumerate() {
        for &(j, d) in list {
            union[i].push((j, d));
            if j != i {
                union[j].push((i, d));
            }
        }
    }
    let two_var = 2.0 * params.sigma_weight * params.sigma_weight;
    let rows = union
        .into_iter()
        .map(|mut list| {
            list.sort_by_key(|e| e.0);
            list.dedup_by_key(|e| e.0);
            list.into_iter()
                .map(|(j, d)| (j, (-d / two_var).exp()))
                .filter(|e| e.1 > 0.0)
                .collect()
        })
        .collect();
    WeightGraph::from_unnormalized_rows(rows)
}
