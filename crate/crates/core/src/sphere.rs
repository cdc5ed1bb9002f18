//! Exact geometry on the unit sphere S^{n-1}: geodesic distance, the two
//! reflection families used in the uniqueness argument, geodesic midpoints and
//! Haar-random rotations.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streams::SeedStream;

/// Inputs whose norm deviates from 1 by more than this are rejected.
pub const UNIT_INPUT_TOL: f64 = 1e-9;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A point on S^{n-1}, n >= 2. The norm is 1 to within 1e-12.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Accepts coordinates that are already unit length (within 1e-9) and
    /// renormalizes them.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "dimension must be at least 2, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        let r = norm(&coords);
        if (r - 1.0).abs() > UNIT_INPUT_TOL {
            return Err(Error::InvalidInput(format!(
                "expected a unit vector, norm is {r}"
            )));
        }
        Ok(Self::rescale(coords, r))
    }

    /// Projects an arbitrary nonzero vector onto the sphere.
    pub fn normalize(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "dimension must be at least 2, got {}",
                coords.len()
            )));
        }
        let r = norm(&coords);
        if !r.is_finite() || r < 1e-300 {
            return Err(Error::InvalidInput(format!(
                "cannot normalize vector of norm {r}"
            )));
        }
        Ok(Self::rescale(coords, r))
    }

    fn rescale(mut coords: Vec<f64>, r: f64) -> Self {
        coords.iter_mut().for_each(|c| *c /= r);
        Self(coords)
    }

    /// Standard basis vector e_{axis} in dimension `dim`.
    pub fn basis(dim: usize, axis: usize) -> Self {
        assert!(dim >= 2 && axis < dim, "basis({dim}, {axis}) out of range");
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Self(v)
    }

    /// Point at angle `theta` on the unit circle.
    pub fn from_angle(theta: f64) -> Self {
        Self(vec![theta.cos(), theta.sin()])
    }

    /// Polar angle in [0, 2pi) of a point on S^1.
    pub fn angle(&self) -> f64 {
        assert_eq!(self.dim(), 2, "angle() is only defined on the circle");
        self.0[1].atan2(self.0[0]).rem_euclid(std::f64::consts::TAU)
    }

    pub(crate) fn from_raw_unchecked(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn neg(&self) -> UnitVector {
        Self(self.0.iter().map(|c| -c).collect())
    }

    /// Uniform draw from sigma via a normalized Gaussian vector.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        assert!(dim >= 2);
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let r = norm(&v);
            if r > 1e-12 {
                return Self::rescale(v, r);
            }
        }
    }

    /// Retraction: normalize(self + step). `step` need not be tangent.
    pub fn retract(&self, step: &[f64]) -> Result<Self> {
        let v: Vec<f64> = self.0.iter().zip(step).map(|(p, s)| p + s).collect();
        Self::normalize(v)
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        UnitVector::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Self {
        v.0
    }
}

/// Geodesic (great-circle) distance in [0, pi].
///
/// Uses 2 atan2(|a - b|, |a + b|), which stays accurate near 0 and pi where
/// arccos of the inner product loses half the digits.
pub fn geodesic_distance(a: &UnitVector, b: &UnitVector) -> f64 {
    assert_eq!(a.dim(), b.dim(), "dimension mismatch");
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        diff += (x - y) * (x - y);
        sum += (x + y) * (x + y);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// arccos with the argument clamped to [-1, 1].
#[inline]
pub fn angle_from_inner(inner: f64) -> f64 {
    inner.clamp(-1.0, 1.0).acos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionKind {
    /// x -> x - 2<x,z>z; swaps the open hemispheres {<z,.> < 0} and {<z,.> > 0}.
    HyperplaneNormal,
    /// x -> 2<x,w>w - x; reflection on the line spanned by w.
    Axis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reflection {
    pub kind: ReflectionKind,
    pub direction: UnitVector,
}

impl Reflection {
    pub fn hyperplane(normal: UnitVector) -> Self {
        Self {
            kind: ReflectionKind::HyperplaneNormal,
            direction: normal,
        }
    }

    pub fn axis(axis: UnitVector) -> Self {
        Self {
            kind: ReflectionKind::Axis,
            direction: axis,
        }
    }

    pub fn apply_raw(&self, x: &[f64]) -> Vec<f64> {
        let d = self.direction.as_slice();
        let t = dot(x, d);
        match self.kind {
            ReflectionKind::HyperplaneNormal => {
                x.iter().zip(d).map(|(xi, di)| xi - 2.0 * t * di).collect()
            }
            ReflectionKind::Axis => x.iter().zip(d).map(|(xi, di)| 2.0 * t * di - xi).collect(),
        }
    }
}

pub fn reflect(r: &Reflection, p: &UnitVector) -> UnitVector {
    assert_eq!(r.direction.dim(), p.dim(), "dimension mismatch");
    // Orthogonal map; renormalizing only absorbs rounding.
    let v = r.apply_raw(p.as_slice());
    let n = norm(&v);
    UnitVector::rescale(v, n)
}

/// Midpoint of the minimizing geodesic between `a` and `b`, as the normalized
/// chord sum. Fails for (near-)antipodal pairs where the geodesic is not unique.
pub fn geodesic_midpoint(a: &UnitVector, b: &UnitVector) -> Result<UnitVector> {
    assert_eq!(a.dim(), b.dim(), "dimension mismatch");
    let inner = a.dot(b);
    if inner < -1.0 + 1e-9 {
        return Err(Error::DegenerateGeodesic { inner });
    }
    let sum: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect();
    UnitVector::normalize(sum)
}

/// An element of SO(n).
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    matrix: DMatrix<f64>,
}

impl Rotation {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    /// Haar-distributed rotation: QR of a Gaussian matrix with the R-diagonal
    /// sign fix, then the first column flipped if the determinant is negative.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        assert!(dim >= 2, "rotation dimension must be at least 2");
        let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..dim {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        if q.determinant() < 0.0 {
            q.column_mut(0).neg_mut();
        }
        Self { matrix: q }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> Self {
        Self {
            matrix: self.matrix.transpose(),
        }
    }

    pub fn apply_raw(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(x.len(), n, "dimension mismatch");
        let mut out = vec![0.0; n];
        for (j, xj) in x.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.matrix[(i, j)] * xj;
            }
        }
        out
    }

    pub fn apply(&self, p: &UnitVector) -> UnitVector {
        let v = self.apply_raw(p.as_slice());
        let n = norm(&v);
        UnitVector::rescale(v, n)
    }

    /// max |M^T M - I|, entrywise.
    pub fn orthogonality_defect(&self) -> f64 {
        let n = self.dim();
        let g = self.matrix.transpose() * &self.matrix;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }
}

pub fn random_rotation(dim: usize, stream: &SeedStream) -> Rotation {
    Rotation::random(dim, &mut stream.rng())
}
