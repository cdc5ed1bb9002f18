//! Polyhedral cones K = {v : <v, a_i> >= 0 for all i} built from labeled
//! samples, their duals K^ = cone{a_i}, and the projections that go with them.
//!
//! All projections reduce to one kernel: nonnegative least squares onto the
//! conic hull of the normals. The projection onto K itself comes from the
//! Moreau decomposition w = P_K(w) + P_{K°}(w) with K° = -K^.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnls::nnls;
use crate::sphere::{dot, norm, UnitVector};
use crate::streams::SeedStream;

/// Normals closer than this (in inner product to 1) are merged.
pub const DEDUP_INNER: f64 = 1.0 - 1e-12;
pub const NNLS_TOL: f64 = 1e-10;

const MARGIN_RESTARTS: usize = 64;
pub const MARGIN_STEPS: usize = 500;

/// A class label, +1 or -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    /// sign(t) with sign(0) = +1.
    pub fn of(t: f64) -> Self {
        if t >= 0.0 {
            Label::Pos
        } else {
            Label::Neg
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Label::Pos),
            -1 => Ok(Label::Neg),
            other => Err(Error::InvalidInput(format!("label must be +1 or -1, got {other}"))),
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Pos => 1,
            Label::Neg => -1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolyhedralCone {
    dim: usize,
    normals: Vec<UnitVector>,
}

/// Coefficients of a point of K^ in terms of the (deduplicated) normals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualCoefficients {
    pub alpha: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualProjection {
    pub point: Vec<f64>,
    pub coeffs: DualCoefficients,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteriorMargin {
    pub direction: UnitVector,
    pub margin: f64,
}

impl InteriorMargin {
    pub fn has_interior(&self) -> bool {
        self.margin > 0.0
    }
}

impl PolyhedralCone {
    /// Builds the cone from its halfspace normals, merging near-duplicates.
    pub fn new(normals: Vec<UnitVector>) -> Result<Self> {
        let Some(first) = normals.first() else {
            return Err(Error::InvalidInput("a cone needs at least one normal".into()));
        };
        let dim = first.dim();
        if normals.iter().any(|a| a.dim() != dim) {
            return Err(Error::InvalidInput("normals have mixed dimensions".into()));
        }
        let mut kept: Vec<UnitVector> = Vec::with_capacity(normals.len());
        for a in normals {
            if !kept.iter().any(|k| k.dot(&a) > DEDUP_INNER) {
                kept.push(a);
            }
        }
        Ok(Self { dim, normals: kept })
    }

    /// K(x, y) = {v : <v, y_i x_i> >= 0 for all i}.
    pub fn from_labeled_sample(points: &[UnitVector], labels: &[Label]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empty sample".into()));
        }
        if points.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        let normals = points
            .iter()
            .zip(labels)
            .map(|(x, y)| match y {
                Label::Pos => x.clone(),
                Label::Neg => x.neg(),
            })
            .collect();
        Self::new(normals)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normals(&self) -> &[UnitVector] {
        &self.normals
    }

    /// min_i <v, a_i>.
    pub fn min_margin(&self, v: &[f64]) -> f64 {
        self.normals
            .iter()
            .map(|a| dot(a.as_slice(), v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        self.normals.iter().all(|a| dot(a.as_slice(), v) >= -tol)
    }

    fn columns(&self) -> Vec<&[f64]> {
        self.normals.iter().map(|a| a.as_slice()).collect()
    }

    /// Euclidean projection of `w` onto K^ = cone{a_i}.
    pub fn project_dual(&self, w: &[f64]) -> Result<DualProjection> {
        self.check_dim(w)?;
        let cols = self.columns();
        let sol = nnls(&cols, w, 100 * cols.len(), NNLS_TOL)?;
        let mut point = vec![0.0; self.dim];
        for (a, &x) in cols.iter().zip(&sol.x) {
            point.iter_mut().zip(a.iter()).for_each(|(p, ai)| *p += x * ai);
        }
        Ok(DualProjection {
            point,
            coeffs: DualCoefficients {
                alpha: sol.x,
                residual: sol.residual,
            },
        })
    }

    /// Euclidean projection onto K via P_K(w) = w + P_{K^}(-w).
    pub fn project_primal(&self, w: &[f64]) -> Result<Vec<f64>> {
        let neg: Vec<f64> = w.iter().map(|x| -x).collect();
        let dual = self.project_dual(&neg)?;
        Ok(w.iter().zip(&dual.point).map(|(a, b)| a + b).collect())
    }

    /// Unit z with <z, w> < 0 and <z, y> >= 0 on K, as normalize(P_K(w) - w).
    pub fn separating_direction(&self, w: &UnitVector) -> Result<UnitVector> {
        if self.contains(w.as_slice(), 1e-9) {
            return Err(Error::PreconditionViolated(
                "separating_direction requires w outside the cone".into(),
            ));
        }
        let p = self.project_primal(w.as_slice())?;
        let d: Vec<f64> = p.iter().zip(w.as_slice()).map(|(a, b)| a - b).collect();
        UnitVector::normalize(d)
    }

    /// Approximate maximizer of min_i <v, a_i> over the sphere by projected
    /// subgradient ascent (step 1/sqrt(t)) from 64 starts. A positive margin
    /// certifies a nonempty interior.
    pub fn interior_margin(&self, steps: usize) -> InteriorMargin {
        let steps = steps.max(1);
        let stream = SeedStream::new(0x1a7e_5107).child("interior_margin");
        let mut best: Option<InteriorMargin> = None;
        for restart in 0..MARGIN_RESTARTS {
            let start = if restart == 0 {
                let mut mean = vec![0.0; self.dim];
                for a in &self.normals {
                    mean.iter_mut().zip(a.as_slice()).for_each(|(m, x)| *m += x);
                }
                UnitVector::normalize(mean)
                    .unwrap_or_else(|_| UnitVector::random(self.dim, &mut stream.index(0).rng()))
            } else {
                UnitVector::random(self.dim, &mut stream.index(restart as u64).rng())
            };
            let run = self.margin_ascent(start, steps);
            if best.as_ref().map_or(true, |b| run.margin > b.margin) {
                best = Some(run);
            }
        }
        best.expect("at least one restart")
    }

    fn margin_ascent(&self, start: UnitVector, steps: usize) -> InteriorMargin {
        let mut v = start;
        let mut best = InteriorMargin {
            margin: self.min_margin(v.as_slice()),
            direction: v.clone(),
        };
        for t in 1..=steps {
            let (active, _) = self
                .normals
                .iter()
                .map(|a| (a, dot(a.as_slice(), v.as_slice())))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("nonempty");
            let c = dot(active.as_slice(), v.as_slice());
            let step = 1.0 / (t as f64).sqrt();
            let g: Vec<f64> = active
                .as_slice()
                .iter()
                .zip(v.as_slice())
                .map(|(a, x)| step * (a - c * x))
                .collect();
            if norm(&g) < 1e-300 {
                break;
            }
            match v.retract(&g) {
                Ok(next) => v = next,
                Err(_) => break,
            }
            let m = self.min_margin(v.as_slice());
            if m > best.margin {
                best = InteriorMargin {
                    margin: m,
                    direction: v.clone(),
                };
            }
        }
        best
    }

    /// Orthonormal basis of span{a_i} (modified Gram-Schmidt).
    pub fn span_basis(&self) -> Vec<Vec<f64>> {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for a in &self.normals {
            let mut v = a.as_slice().to_vec();
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let r = norm(&v);
            if r > 1e-10 {
                v.iter_mut().for_each(|x| *x /= r);
                basis.push(v);
            }
            if basis.len() == self.dim {
                break;
            }
        }
        basis
    }

    /// For n = 2: the arc K ∩ S^1 as (phi0, phi1) with phi0 in [0, 2pi) and
    /// 0 < phi1 - phi0 <= pi. `None` when the interior is empty.
    pub fn arc_2d(&self) -> Option<(f64, f64)> {
        if self.dim != 2 {
            return None;
        }
        let angle = |a: &UnitVector| a.as_slice()[1].atan2(a.as_slice()[0]);
        let base = angle(&self.normals[0]);
        let mut lo = -FRAC_PI_2;
        let mut hi = FRAC_PI_2;
        for a in &self.normals[1..] {
            let mut d = (angle(a) - base).rem_euclid(TAU);
            if d > PI {
                d -= TAU;
            }
            lo = lo.max(d - FRAC_PI_2);
            hi = hi.min(d + FRAC_PI_2);
        }
        if hi <= lo {
            return None;
        }
        let phi0 = (base + lo).rem_euclid(TAU);
        Some((phi0, phi0 + (hi - lo)))
    }

    fn check_dim(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "vector has dimension {}, cone has {}",
                w.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Random point of K^ ∩ S^{n-1} from a random nonnegative combination of
    /// the normals. Not uniform.
    pub fn random_dual_point<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitVector {
        loop {
            let mut v = vec![0.0; self.dim];
            for a in &self.normals {
                let w: f64 = rng.gen::<f64>().powi(2);
                v.iter_mut().zip(a.as_slice()).for_each(|(x, y)| *x += w * y);
            }
            if let Ok(u) = UnitVector::normalize(v) {
                return u;
            }
        }
    }
}
