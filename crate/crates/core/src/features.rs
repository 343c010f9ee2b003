//! Texture descriptors and the smoothed nearest-prior baseline.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{mirror, GridGeometry};
use crate::io::GrayImage;
use crate::labeling::{FeatureImage, PriorSet};
use crate::metric::{MetricSpace, Point, SpdPoint};

/// Length of the per-pixel feature vector `(I, Ix, Iy, Ixx, Iyy)`.
pub const FEATURE_DIM: usize = 5;
const REG_SCALE: f64 = 1e-8;
/// Lower bound on the ridge, for windows that are flat up to rounding.
const FLAT_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureParams {
    pub presmooth_sigma: f64,
    pub cov_window: usize,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self {
            presmooth_sigma: 1.0,
            cov_window: 7,
        }
    }
}

impl TextureParams {
    pub fn new(presmooth_sigma: f64, cov_window: usize) -> Result<Self> {
        let p = Self {
            presmooth_sigma,
            cov_window,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.presmooth_sigma >= 0.0) || !self.presmooth_sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing sigma must be nonnegative, got {}",
                self.presmooth_sigma
            )));
        }
        if self.cov_window % 2 == 0 || self.cov_window * self.cov_window < FEATURE_DIM + 1 {
            return Err(Error::InvalidParameter(format!(
                "covariance window must be odd with at least {} samples, got {}",
                FEATURE_DIM + 1,
                self.cov_window
            )));
        }
        Ok(())
    }
}

/// Mean and covariance of the feature vectors in one window.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFeature {
    pub mu: [f64; FEATURE_DIM],
    pub c: SpdPoint,
}

impl CovarianceFeature {
    pub fn to_point(&self) -> Point {
        Point::Product(vec![Point::Vector(self.mu.to_vec()), Point::Spd(self.c.clone())])
    }

    pub fn space() -> MetricSpace {
        MetricSpace::Product(vec![
            MetricSpace::Euclidean(FEATURE_DIM),
            MetricSpace::Spd(FEATURE_DIM),
        ])
    }
}

/// Normalized 1D Gaussian truncated at `floor(3σ)`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).floor() as usize;
    let mut k: Vec<f64> = (0..=2 * half)
        .map(|t| {
            let d = t as f64 - half as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian smoothing with mirrored boundary. Pixels with
/// `valid[i] == false` carry no mass; the kernel is renormalized over the
/// observed ones, and a pixel with no observed support keeps its own value.
pub fn gaussian_smooth(
    geom: GridGeometry,
    values: &[f64],
    valid: Option<&[bool]>,
    sigma: f64,
) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let half = (kernel.len() / 2) as isize;
    let mask: Vec<f64> = match valid {
        Some(v) => v.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect(),
        None => vec![1.0; values.len()],
    };
    let masked: Vec<f64> = values
        .iter()
        .zip(&mask)
        .map(|(v, m)| if *m > 0.0 { *v } else { 0.0 })
        .collect();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        (0..geom.len())
            .map(|i| {
                let (r, c) = geom.coords(i);
                kernel
                    .iter()
                    .enumerate()
                    .map(|(t, w)| {
                        let off = t as isize - half;
                        let j = if horizontal {
                            geom.index(r, mirror(c as isize + off, geom.width))
                        } else {
                            geom.index(mirror(r as isize + off, geom.height), c)
                        };
                        w * src[j]
                    })
                    .sum()
            })
            .collect()
    };
    let num = pass(&pass(&masked, true), false);
    let den = pass(&pass(&mask, true), false);
    num.iter()
        .zip(&den)
        .zip(values)
        .map(|((n, d), v)| if *d > 0.0 { n / d } else { *v })
        .collect()
}

/// `(I, Ix, Iy, Ixx, Iyy)` per pixel after Gaussian presmoothing, with central
/// differences and mirrored boundary. `x` runs along columns.
pub fn feature_vector_field(image: &GrayImage, params: &TextureParams) -> Result<Vec<[f64; FEATURE_DIM]>> {
    params.validate()?;
    let geom = image.geom;
    let s = gaussian_smooth(geom, &image.pixels, None, params.presmooth_sigma);
    Ok((0..geom.len())
        .map(|i| {
            let (r, c) = geom.coords(i);
            let (r, c) = (r as isize, c as isize);
            let at = |dr: isize, dc: isize| s[geom.mirrored_index(r + dr, c + dc)];
            let v = s[i];
            [
                v,
                (at(0, 1) - at(0, -1)) / 2.0,
                (at(1, 0) - at(-1, 0)) / 2.0,
                at(0, 1) - 2.0 * v + at(0, -1),
                at(1, 0) - 2.0 * v + at(-1, 0),
            ]
        })
        .collect())
}

/// Sample mean and covariance (normalized by `|N| - 1`) of a set of feature
/// vectors. A covariance with a nonpositive eigenvalue gets the ridge
/// `δ I`, `δ = 1e-8 trace(C) / 5` but at least `1e-12`.
pub fn covariance_of(samples: &[[f64; FEATURE_DIM]]) -> Result<CovarianceFeature> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "covariance needs at least two samples, got {m}"
        )));
    }
    let mut mu = [0.0; FEATURE_DIM];
    for f in samples {
        for (a, b) in mu.iter_mut().zip(f) {
            *a += b;
        }
    }
    mu.iter_mut().for_each(|v| *v /= m as f64);
    let mut c = DMatrix::zeros(FEATURE_DIM, FEATURE_DIM);
    for a in 0..FEATURE_DIM {
        for b in a..FEATURE_DIM {
            let s: f64 = samples
                .iter()
                .map(|f| (f[a] - mu[a]) * (f[b] - mu[b]))
                .sum::<f64>()
                / (m - 1) as f64;
            c[(a, b)] = s;
            c[(b, a)] = s;
        }
    }
    let min_eig = SymmetricEigen::new(c.clone()).eigenvalues.min();
    if min_eig <= 0.0 {
        let trace = c.trace();
        let mut delta = (REG_SCALE * trace / FEATURE_DIM as f64).max(FLAT_RIDGE);
        // Rounding can leave an eigenvalue further below zero than δ.
        if min_eig + delta <= 0.0 {
            delta += -min_eig;
        }
        for d in 0..FEATURE_DIM {
            c[(d, d)] += delta;
        }
    }
    Ok(CovarianceFeature {
        mu,
        c: SpdPoint::new(c)?,
    })
}

/// Windowed descriptors, one per pixel, with mirrored windows.
pub fn covariance_descriptors(
    geom: GridGeometry,
    field: &[[f64; FEATURE_DIM]],
    params: &TextureParams,
) -> Result<Vec<CovarianceFeature>> {
    params.validate()?;
    if field.len() != geom.len() {
        return Err(Error::DimensionMismatch {
            expected: geom.len(),
            found: field.len(),
        });
    }
    let half = (params.cov_window / 2) as isize;
    (0..geom.len())
        .into_par_iter()
        .map(|i| {
            let (r, c) = geom.coords(i);
            let mut window = Vec::with_capacity(params.cov_window * params.cov_window);
            for dr in -half..=half {
                for dc in -half..=half {
                    window.push(field[geom.mirrored_index(r as isize + dr, c as isize + dc)]);
                }
            }
            covariance_of(&window).map_err(|e| e.at_pixel(i))
        })
        .collect()
}

/// Axis-aligned rectangle of pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// `count` patches of the given size at uniformly random positions.
pub fn random_patches(
    geom: GridGeometry,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<Patch>> {
    if height == 0 || width == 0 || height > geom.height || width > geom.width {
        return Err(Error::InvalidParameter(format!(
            "patch {height}x{width} does not fit a {}x{} image",
            geom.height, geom.width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| Patch {
            row: rng.random_range(0..=geom.height - height),
            col: rng.random_range(0..=geom.width - width),
            height,
            width,
        })
        .collect())
}

/// Descriptor of all feature vectors inside a patch.
pub fn patch_descriptor(
    geom: GridGeometry,
    field: &[[f64; FEATURE_DIM]],
    patch: &Patch,
) -> Result<CovarianceFeature> {
    let mut samples = Vec::with_capacity(patch.height * patch.width);
    for r in patch.row..patch.row + patch.height {
        for c in patch.col..patch.col + patch.width {
            samples.push(field[geom.index(r, c)]);
        }
    }
    covariance_of(&samples)
}

/// Descriptor CSV: `mu1..mu5` followed by the upper triangle of `C`, row-major.
pub fn descriptors_to_csv(desc: &[CovarianceFeature]) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = (1..=FEATURE_DIM).map(|k| format!("mu{k}")).collect();
    for a in 1..=FEATURE_DIM {
        for b in a..=FEATURE_DIM {
            header.push(format!("c{a}{b}"));
        }
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for d in desc {
        let cells: Vec<String> = d
            .mu
            .iter()
            .chain(d.c.upper().iter())
            .map(|v| format!("{v:.16e}"))
            .collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// Inverse of [`descriptors_to_csv`] for one row of 20 values.
pub fn descriptor_from_row(row: &[f64]) -> Result<CovarianceFeature> {
    let upper = FEATURE_DIM * (FEATURE_DIM + 1) / 2;
    if row.len() != FEATURE_DIM + upper {
        return Err(Error::DimensionMismatch {
            expected: FEATURE_DIM + upper,
            found: row.len(),
        });
    }
    let mut mu = [0.0; FEATURE_DIM];
    mu.copy_from_slice(&row[..FEATURE_DIM]);
    Ok(CovarianceFeature {
        mu,
        c: SpdPoint::from_upper(FEATURE_DIM, &row[FEATURE_DIM..])?,
    })
}

/// Smooths every channel with a Gaussian of width `sigma` and assigns each
/// pixel its nearest prior (lowest label on ties). Only defined for vector
/// features, since smoothing needs a linear structure.
pub fn simple_labeling(
    image: &FeatureImage,
    priors: &PriorSet,
    space: &MetricSpace,
    sigma: f64,
) -> Result<Vec<usize>> {
    let dim = match space {
        MetricSpace::Euclidean(d) => *d,
        other => {
            return Err(Error::Unsupported(format!(
                "smoothing is undefined for {} features",
                other.name()
            )))
        }
    };
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be nonnegative, got {sigma}")));
    }
    let n = image.len();
    let mut channels = vec![vec![0.0; n]; dim];
    for (i, f) in image.features.iter().enumerate() {
        match f {
            Point::Vector(v) if v.len() == dim => {
                for (ch, x) in channels.iter_mut().zip(v) {
                    ch[i] = *x;
                }
            }
            _ if !image.valid[i] => {}
            _ => {
                return Err(Error::Pixel {
                    index: i,
                    source: Box::new(Error::Domain(format!("expected a {dim}-vector"))),
                })
            }
        }
    }
    let smoothed: Vec<Vec<f64>> = channels
        .iter()
        .map(|ch| gaussian_smooth(image.geom, ch, Some(&image.valid), sigma))
        .collect();
    (0..n)
        .map(|i| {
            let f = Point::Vector(smoothed.iter().map(|ch| ch[i]).collect());
            let mut best = (0, f64::INFINITY);
            for (k, p) in priors.priors.iter().enumerate() {
                let d = space.distance(&f, p)?;
                if d < best.1 {
                    best = (k, d);
                }
            }
            Ok(best.0 + 1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::dist_spd;
    use rand_distr::StandardNormal;

    fn image(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> GrayImage {
        let geom = GridGeometry::new(h, w).unwrap();
        GrayImage {
            geom,
            pixels: (0..geom.len()).map(|i| f(i / w, i % w)).collect(),
        }
    }

    #[test]
    fn constant_image_features() {
        let img = image(6, 7, |_, _| 0.4);
        let smooth = TextureParams::new(1.0, 3).unwrap();
        for f in &feature_vector_field(&img, &smooth).unwrap() {
            assert!((f[0] - 0.4).abs() < 1e-15);
            assert!(f[1..].iter().all(|v| v.abs() < 1e-15));
        }
        // Without smoothing the field is exactly flat and the ridge kicks in.
        let p = TextureParams::new(0.0, 3).unwrap();
        let field = feature_vector_field(&img, &p).unwrap();
        let desc = covariance_descriptors(img.geom, &field, &p).unwrap();
        let c = desc[0].c.matrix();
        assert!((c[(0, 0)] - FLAT_RIDGE).abs() < 1e-20);
        assert_eq!(c[(0, 1)], 0.0);
    }

    #[test]
    fn ramp_derivatives() {
        let img = image(5, 8, |_, c| c as f64);
        let p = TextureParams::new(0.0, 3).unwrap();
        let field = feature_vector_field(&img, &p).unwrap();
        for r in 0..5 {
            for c in 1..7 {
                let f = field[r * 8 + c];
                assert_eq!(f[1], 1.0);
                assert_eq!(f[2], 0.0);
                assert_eq!(f[3], 0.0);
                assert_eq!(f[4], 0.0);
            }
        }
    }

    #[test]
    fn field_matches_stencil_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = image(9, 6, |_, _| rng.random_range(0.0..1.0));
        let sigma = 0.7;
        let p = TextureParams::new(sigma, 3).unwrap();
        let field = feature_vector_field(&img, &p).unwrap();
        // 2D convolution with the outer-product kernel, written out directly.
        let half = (3.0 * sigma).floor() as isize;
        let g = |d: isize| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp();
        let norm: f64 = (-half..=half).map(g).sum::<f64>().powi(2);
        let reflect = |i: isize, n: isize| -> usize {
            let mut i = i;
            while i < 0 || i >= n {
                i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
            }
            i as usize
        };
        let (h, w) = (9isize, 6isize);
        let mut s = vec![0.0; 54];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for dr in -half..=half {
                    for dc in -half..=half {
                        acc += g(dr) * g(dc) * img.pixels[reflect(r + dr, h) * 6 + reflect(c + dc, w)];
                    }
                }
                s[(r * w + c) as usize] = acc / norm;
            }
        }
        let at = |r: isize, c: isize| s[reflect(r, h) * 6 + reflect(c, w)];
        for r in 0..h {
            for c in 0..w {
                let f = field[(r * w + c) as usize];
                let want = [
                    at(r, c),
                    (at(r, c + 1) - at(r, c - 1)) / 2.0,
                    (at(r + 1, c) - at(r - 1, c)) / 2.0,
                    at(r, c + 1) - 2.0 * at(r, c) + at(r, c - 1),
                    at(r + 1, c) - 2.0 * at(r, c) + at(r - 1, c),
                ];
                for (x, y) in f.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-13, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn covariance_recovers_generator() {
        // f = L z with z standard normal has covariance L Lᵀ.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = DMatrix::from_fn(5, 5, |i, j| if j <= i { 0.3 + 0.1 * (i + j) as f64 } else { 0.0 });
        let target = &l * l.transpose();
        let m = 4000;
        let samples: Vec<[f64; 5]> = (0..m)
            .map(|_| {
                let z = nalgebra::DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
                let f = &l * z;
                std::array::from_fn(|k| f[k])
            })
            .collect();
        let d = covariance_of(&samples).unwrap();
        let tol = 5.0 / (m as f64).sqrt();
        let scale = target.amax();
        assert!((d.c.matrix() - &target).amax() <= tol * scale);
        assert!(d.mu.iter().all(|v| v.abs() < tol * scale));
    }

    #[test]
    fn covariance_symmetry_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = image(10, 10, |_, _| rng.random_range(0.0..1.0));
        let shifted = GrayImage {
            geom: img.geom,
            pixels: img.pixels.iter().map(|v| v + 3.0).collect(),
        };
        let p = TextureParams::default();
        let d1 = covariance_descriptors(img.geom, &feature_vector_field(&img, &p).unwrap(), &p).unwrap();
        let d2 =
            covariance_descriptors(img.geom, &feature_vector_field(&shifted, &p).unwrap(), &p).unwrap();
        for (a, b) in d1.iter().zip(&d2) {
            let c = a.c.matrix();
            assert_eq!(c, &c.transpose());
            assert!((a.c.matrix() - b.c.matrix()).amax() <= 1e-12);
            assert!((b.mu[0] - a.mu[0] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn descriptor_distance_delegates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = image(12, 12, |_, _| rng.random_range(0.0..1.0));
        let p = TextureParams::default();
        let d = covariance_descriptors(img.geom, &feature_vector_field(&img, &p).unwrap(), &p).unwrap();
        let space = CovarianceFeature::space();
        let (a, b) = (&d[0], &d[77]);
        let mu2: f64 = a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y).powi(2)).sum();
        let s = dist_spd(&a.c, &b.c).unwrap();
        let got = space.distance(&a.to_point(), &b.to_point()).unwrap();
        assert!((got - (mu2 + s * s).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn descriptor_csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = image(4, 4, |_, _| rng.random_range(0.0..1.0));
        let p = TextureParams::new(0.5, 3).unwrap();
        let d = covariance_descriptors(img.geom, &feature_vector_field(&img, &p).unwrap(), &p).unwrap();
        let csv = descriptors_to_csv(&d);
        let table = crate::io::parse_csv(&csv).unwrap();
        assert_eq!(table.columns(), 20);
        for (row, want) in table.rows.iter().zip(&d) {
            assert_eq!(&descriptor_from_row(row).unwrap(), want);
        }
    }

    #[test]
    fn params_and_patches() {
        assert!(TextureParams::new(1.0, 2).is_err());
        assert!(TextureParams::new(1.0, 1).is_err());
        assert!(TextureParams::new(-1.0, 7).is_err());
        let geom = GridGeometry::new(20, 30).unwrap();
        let a = random_patches(geom, 100, 5, 7, 42).unwrap();
        assert_eq!(a, random_patches(geom, 100, 5, 7, 42).unwrap());
        assert!(a.iter().all(|p| p.row + 5 <= 20 && p.col + 7 <= 30));
        assert!(random_patches(geom, 1, 21, 1, 0).is_err());
    }

    #[test]
    fn simple_labeling_cases() {
        let geom = GridGeometry::new(8, 8).unwrap();
        let colors = [[0.9, 0.1, 0.1], [0.1, 0.8, 0.2]];
        let truth: Vec<usize> = (0..64).map(|i| if i % 8 < 3 { 1 } else { 2 }).collect();
        let feats: Vec<Point> = truth
            .iter()
            .map(|l| Point::Vector(colors[l - 1].to_vec()))
            .collect();
        let img = FeatureImage::new(geom, feats, None).unwrap();
        let space = MetricSpace::Euclidean(3);
        let priors = PriorSet::new(
            colors.iter().map(|c| Point::Vector(c.to_vec())).collect(),
            &space,
        )
        .unwrap();
        assert_eq!(simple_labeling(&img, &priors, &space, 0.0).unwrap(), truth);
        assert!(matches!(
            simple_labeling(&img, &priors, &MetricSpace::Spd(2), 1.0),
            Err(Error::Unsupported(_))
        ));
    }
}
