//! Metric spaces for pixel features.
//!
//! Every distance here is a pure function of its inputs. The supported spaces
//! are Euclidean vectors, symmetric positive definite matrices with the
//! affine-invariant distance, rotations modulo a finite symmetry group,
//! multiphase rotations and finite products of these.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Unit quaternion in `(w, x, y, z)` order.
pub type Quaternion = [f64; 4];

const UNIT_TOL: f64 = 1e-12;
const GROUP_FILE_TOL: f64 = 1e-8;

pub fn quat_mul(a: &Quaternion, b: &Quaternion) -> Quaternion {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn quat_dot(a: &Quaternion, b: &Quaternion) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

fn quat_norm(q: &Quaternion) -> f64 {
    quat_dot(q, q).sqrt()
}

/// Geodesic distance on SO(3) in quaternion form, `arccos |<a, b>|`.
pub fn dist_so3(a: &Quaternion, b: &Quaternion) -> f64 {
    // arccos|<a,b>| loses half the digits near 0; the half-chord form does not.
    let s = if quat_dot(a, b) < 0.0 { -1.0 } else { 1.0 };
    let mut minus = 0.0;
    let mut plus = 0.0;
    for k in 0..4 {
        minus += (a[k] - s * b[k]).powi(2);
        plus += (a[k] + s * b[k]).powi(2);
    }
    2.0 * minus.sqrt().atan2(plus.sqrt())
}

/// A symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdPoint {
    matrix: DMatrix<f64>,
}

impl SpdPoint {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Domain(format!(
                "SPD point must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = matrix.amax().max(1.0);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > UNIT_TOL * scale {
            return Err(Error::Domain(format!(
                "matrix is not symmetric (asymmetry {asym:e})"
            )));
        }
        let min_eig = SymmetricEigen::new(matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !(min_eig > 0.0) {
            return Err(Error::Domain(format!(
                "matrix is not positive definite (smallest eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { matrix })
    }

    /// Builds the point from the upper triangle given row-major.
    pub fn from_upper(dim: usize, upper: &[f64]) -> Result<Self> {
        let expected = dim * (dim + 1) / 2;
        if upper.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: upper.len(),
            });
        }
        let mut m = DMatrix::zeros(dim, dim);
        let mut it = upper.iter();
        for r in 0..dim {
            for c in r..dim {
                let v = *it.next().unwrap();
                m[(r, c)] = v;
                m[(c, r)] = v;
            }
        }
        Self::new(m)
    }

    pub fn upper(&self) -> Vec<f64> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(dim * (dim + 1) / 2);
        for r in 0..dim {
            for c in r..dim {
                out.push(self.matrix[(r, c)]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// An orientation given as a unit quaternion plus a phase index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationPoint {
    pub q: Quaternion,
    pub phase: usize,
}

impl RotationPoint {
    pub fn new(q: Quaternion, phase: usize) -> Result<Self> {
        let norm = quat_norm(&q);
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::Domain(format!(
                "quaternion is not unit (norm {norm})"
            )));
        }
        Ok(Self { q, phase })
    }

    /// Normalizes `q` before storing it.
    pub fn normalized(q: Quaternion, phase: usize) -> Result<Self> {
        let norm = quat_norm(&q);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Domain("zero or non-finite quaternion".into()));
        }
        Ok(Self {
            q: q.map(|c| c / norm),
            phase,
        })
    }
}

/// Finite rotation group acting from the right.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryGroup {
    elements: Vec<Quaternion>,
}

impl SymmetryGroup {
    pub fn new(elements: Vec<Quaternion>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidParameter("empty symmetry group".into()));
        }
        for q in &elements {
            let norm = quat_norm(q);
            if (norm - 1.0).abs() > GROUP_FILE_TOL {
                return Err(Error::Domain(format!(
                    "symmetry element {q:?} is not unit (norm {norm})"
                )));
            }
        }
        let elements: Vec<Quaternion> = elements
            .into_iter()
            .map(|q| {
                let n = quat_norm(&q);
                q.map(|c| c / n)
            })
            .collect();
        if !elements.iter().any(|q| q[0].abs() > 1.0 - 1e-9) {
            return Err(Error::InvalidParameter(
                "symmetry group must contain the identity".into(),
            ));
        }
        Ok(Self { elements })
    }

    pub fn trivial() -> Self {
        Self {
            elements: vec![[1.0, 0.0, 0.0, 0.0]],
        }
    }

    /// Rotations by `2πm/order` about the z axis.
    pub fn cyclic(order: usize) -> Self {
        let order = order.max(1);
        let elements = (0..order)
            .map(|m| {
                let half = std::f64::consts::PI * m as f64 / order as f64;
                [half.cos(), 0.0, 0.0, half.sin()]
            })
            .collect();
        Self { elements }
    }

    /// Dihedral group of the given order: the cyclic part about z plus
    /// `order` two-fold axes in the xy plane.
    pub fn dihedral(order: usize) -> Self {
        let order = order.max(1);
        let mut elements = Self::cyclic(order).elements;
        for m in 0..order {
            let angle = std::f64::consts::PI * m as f64 / order as f64;
            elements.push([0.0, angle.cos(), angle.sin(), 0.0]);
        }
        Self { elements }
    }

    /// Hexagonal-type group 622.
    pub fn hexagonal() -> Self {
        Self::dihedral(6)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "trivial" | "c1" => Some(Self::trivial()),
            "c2" => Some(Self::cyclic(2)),
            "c3" => Some(Self::cyclic(3)),
            "c4" => Some(Self::cyclic(4)),
            "c6" => Some(Self::cyclic(6)),
            "d3" => Some(Self::dihedral(3)),
            "hexagonal" | "d6" => Some(Self::hexagonal()),
            _ => None,
        }
    }

    /// Parses one quaternion `w x y z` per line. Blank lines and `#` comments
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut elements = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(idx + 1, e.to_string()))?;
            if values.len() != 4 {
                return Err(Error::parse(
                    idx + 1,
                    format!("expected 4 values, found {}", values.len()),
                ));
            }
            let q = [values[0], values[1], values[2], values[3]];
            let norm = quat_norm(&q);
            if (norm - 1.0).abs() > GROUP_FILE_TOL {
                return Err(Error::parse(
                    idx + 1,
                    format!("quaternion norm {norm} is not 1"),
                ));
            }
            elements.push(q);
        }
        Self::new(elements)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn elements(&self) -> &[Quaternion] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Checks closure under composition up to sign.
    pub fn is_closed(&self, tol: f64) -> bool {
        self.elements.iter().all(|a| {
            self.elements.iter().all(|b| {
                let ab = quat_mul(a, b);
                self.elements
                    .iter()
                    .any(|c| quat_dot(&ab, c).abs() > 1.0 - tol)
            })
        })
    }
}

/// A feature value.
#[derive(Debug, Clone, PartialEq)]
pub enum Point {
    Vector(Vec<f64>),
    Spd(SpdPoint),
    Rotation(RotationPoint),
    Product(Vec<Point>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricSpace {
    Euclidean(usize),
    Spd(usize),
    RotationQuotient(SymmetryGroup),
    MultiphaseRotation {
        groups: Vec<SymmetryGroup>,
        tau_phase: f64,
    },
    Product(Vec<MetricSpace>),
}

impl MetricSpace {
    pub fn distance(&self, x: &Point, y: &Point) -> Result<f64> {
        match (self, x, y) {
            (MetricSpace::Euclidean(d), Point::Vector(a), Point::Vector(b)) => {
                if a.len() != *d {
                    return Err(Error::DimensionMismatch {
                        expected: *d,
                        found: a.len(),
                    });
                }
                dist_euclidean(a, b)
            }
            (MetricSpace::Spd(r), Point::Spd(a), Point::Spd(b)) => {
                if a.dim() != *r {
                    return Err(Error::DimensionMismatch {
                        expected: *r,
                        found: a.dim(),
                    });
                }
                dist_spd(a, b)
            }
            (MetricSpace::RotationQuotient(group), Point::Rotation(a), Point::Rotation(b)) => {
                dist_rotation_quotient(a, b, group)
            }
            (
                MetricSpace::MultiphaseRotation { groups, tau_phase },
                Point::Rotation(a),
                Point::Rotation(b),
            ) => dist_multiphase(a, b, groups, *tau_phase),
            (MetricSpace::Product(spaces), Point::Product(a), Point::Product(b)) => {
                dist_product(a, b, spaces)
            }
            _ => Err(Error::Domain(format!(
                "point kind does not match the metric space {}",
                self.name()
            ))),
        }
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self, MetricSpace::Euclidean(_))
    }

    pub fn name(&self) -> String {
        match self {
            MetricSpace::Euclidean(d) => format!("euclidean({d})"),
            MetricSpace::Spd(r) => format!("spd({r})"),
            MetricSpace::RotationQuotient(g) => format!("rotation({} elements)", g.len()),
            MetricSpace::MultiphaseRotation { groups, tau_phase } => {
                format!("multiphase({} phases, tau={tau_phase})", groups.len())
            }
            MetricSpace::Product(parts) => {
                let names: Vec<String> = parts.iter().map(|p| p.name()).collect();
                format!("product({})", names.join(","))
            }
        }
    }
}

pub fn dist_euclidean(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Affine-invariant distance `‖Log(x^{-1/2} y x^{-1/2})‖_F`.
pub fn dist_spd(x: &SpdPoint, y: &SpdPoint) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    if x.matrix == y.matrix {
        return Ok(0.0);
    }
    // Evaluate in a fixed argument order so the result is exactly symmetric.
    let (x, y) = if lex_le(&x.matrix, &y.matrix) { (x, y) } else { (y, x) };
    // Generalized eigenvalues of (y, x) through x = L Lᵀ and L⁻¹ y L⁻ᵀ.
    let chol = x.matrix.clone().cholesky().ok_or_else(|| {
        Error::Domain("matrix is not positive definite".into())
    })?;
    let l = chol.l();
    let half = l
        .solve_lower_triangular(&y.matrix)
        .ok_or_else(|| Error::Domain("singular Cholesky factor".into()))?;
    let m = l
        .solve_lower_triangular(&half.transpose())
        .ok_or_else(|| Error::Domain("singular Cholesky factor".into()))?;
    let m = (&m + m.transpose()) * 0.5;
    let mu = SymmetricEigen::new(m).eigenvalues;
    let mut acc = 0.0;
    for v in mu.iter() {
        if !(*v > 0.0) {
            return Err(Error::Domain(format!(
                "congruated matrix lost positive definiteness (eigenvalue {v:e})"
            )));
        }
        acc += v.ln().powi(2);
    }
    Ok(acc.sqrt())
}

fn lex_le(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    for (u, v) in a.iter().zip(b.iter()) {
        if u != v {
            return u < v;
        }
    }
    true
}

/// Quotient distance on SO(3)/S. Right multiplication is an isometry, so
/// `min_{s1,s2} d(x s1, y s2) = min_s d(x s, y)`.
pub fn dist_rotation_quotient(
    x: &RotationPoint,
    y: &RotationPoint,
    group: &SymmetryGroup,
) -> Result<f64> {
    if x.phase != y.phase {
        return Err(Error::PhaseMismatch {
            left: x.phase,
            right: y.phase,
        });
    }
    Ok(group
        .elements
        .iter()
        .map(|s| dist_so3(&quat_mul(&x.q, s), &y.q))
        .fold(f64::INFINITY, f64::min))
}

/// Brute-force two-sided quotient distance.
pub fn dist_rotation_quotient_two_sided(
    x: &RotationPoint,
    y: &RotationPoint,
    group: &SymmetryGroup,
) -> f64 {
    let mut best = f64::INFINITY;
    for s1 in &group.elements {
        let xs = quat_mul(&x.q, s1);
        for s2 in &group.elements {
            best = best.min(dist_so3(&xs, &quat_mul(&y.q, s2)));
        }
    }
    best
}

pub fn dist_multiphase(
    x: &RotationPoint,
    y: &RotationPoint,
    groups: &[SymmetryGroup],
    tau_phase: f64,
) -> Result<f64> {
    for p in [x.phase, y.phase] {
        if p >= groups.len() {
            return Err(Error::Domain(format!(
                "phase {p} has no symmetry group ({} phases)",
                groups.len()
            )));
        }
    }
    if x.phase == y.phase {
        dist_rotation_quotient(x, y, &groups[x.phase])
    } else {
        Ok(tau_phase)
    }
}

pub fn dist_product(x: &[Point], y: &[Point], spaces: &[MetricSpace]) -> Result<f64> {
    if x.len() != spaces.len() || y.len() != spaces.len() {
        return Err(Error::DimensionMismatch {
            expected: spaces.len(),
            found: if x.len() != spaces.len() {
                x.len()
            } else {
                y.len()
            },
        });
    }
    let mut acc = 0.0;
    for ((a, b), space) in x.iter().zip(y).zip(spaces) {
        let d = space.distance(a, b)?;
        acc += d * d;
    }
    Ok(acc.sqrt())
}
