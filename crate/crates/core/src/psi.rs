//! The objective psi_K(w) = ∫_{K ∩ S^{n-1}} g(rho(w, y)) dsigma(y).
//!
//! On a fixed cone cloud the integral becomes a sample average. The
//! optimizer works with the plain average (`value`); multiplying by the
//! estimated cap measure gives `scaled_value`, the estimate of psi itself.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::sampling::ConeCloud;
use crate::sphere::{angle_from_inner, UnitVector};

/// Default cutoff on |<w, y>| near 1 for dropping gradient terms.
pub const DEFAULT_CLAMP: f64 = 1e-9;

/// Shape of the distance penalty g on [0, pi].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GKind {
    /// g(t) = t: average geodesic distance.
    Identity,
    /// g(t) = t^2: spherical centroid.
    Square,
    /// g(t) = 2(1 - cos t) = ||w - y||^2.
    TwoOneMinusCos,
}

impl GKind {
    pub const ALL: [GKind; 3] = [GKind::Identity, GKind::Square, GKind::TwoOneMinusCos];

    #[inline]
    pub fn value(self, t: f64) -> f64 {
        match self {
            GKind::Identity => t,
            GKind::Square => t * t,
            GKind::TwoOneMinusCos => 2.0 * (1.0 - t.cos()),
        }
    }

    #[inline]
    pub fn derivative(self, t: f64) -> f64 {
        match self {
            GKind::Identity => 1.0,
            GKind::Square => 2.0 * t,
            GKind::TwoOneMinusCos => 2.0 * t.sin(),
        }
    }

    pub fn max_value(self) -> f64 {
        self.value(PI)
    }

    pub fn name(self) -> &'static str {
        match self {
            GKind::Identity => "identity",
            GKind::Square => "square",
            GKind::TwoOneMinusCos => "two_one_minus_cos",
        }
    }
}

impl std::str::FromStr for GKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(GKind::Identity),
            "square" => Ok(GKind::Square),
            "two_one_minus_cos" | "chord" => Ok(GKind::TwoOneMinusCos),
            other => Err(Error::InvalidInput(format!("unknown g variant '{other}'"))),
        }
    }
}

/// (g(t), g'(t)) for t in [0, pi].
pub fn g_eval(g: GKind, t: f64) -> Result<(f64, f64)> {
    if !(-1e-9..=PI + 1e-9).contains(&t) {
        return Err(Error::InvalidInput(format!("g argument {t} outside [0, pi]")));
    }
    let t = t.clamp(0.0, PI);
    Ok((g.value(t), g.derivative(t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiEstimate {
    /// (1/N) sum_j g(rho(w, y_j)).
    pub value: f64,
    /// value * measure_estimate.
    pub scaled_value: f64,
    /// Sample standard deviation of the terms over sqrt(N).
    pub std_error: f64,
    /// Delta-method error of `scaled_value`, including the binomial noise of
    /// the cap-measure estimate.
    pub scaled_std_error: f64,
}

fn check_dims(w: &UnitVector, cloud: &ConeCloud) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput("empty cloud".into()));
    }
    if w.dim() != cloud.dim() {
        return Err(Error::InvalidInput(format!(
            "w has dimension {}, cloud has {}",
            w.dim(),
            cloud.dim()
        )));
    }
    Ok(())
}

pub fn psi_saa(w: &UnitVector, cloud: &ConeCloud, g: GKind) -> Result<PsiEstimate> {
    check_dims(w, cloud)?;
    let n = cloud.len() as f64;
    let ws = w.as_slice();
    // Same summation as the optimizer's line search, so values agree bit for bit.
    let mean = mean_value(ws, cloud, g);
    let m2: f64 = cloud
        .iter()
        .map(|y| (g.value(angle_from_inner(crate::sphere::dot(ws, y))) - mean).powi(2))
        .sum();
    let std_error = if cloud.len() > 1 {
        (m2 / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    let p = cloud.measure_estimate;
    let p_se = (p * (1.0 - p) / cloud.attempts.max(1) as f64).sqrt();
    Ok(PsiEstimate {
        value: mean,
        scaled_value: mean * p,
        std_error,
        scaled_std_error: ((p * std_error).powi(2) + (mean * p_se).powi(2)).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// Riemannian gradient, tangent at w.
    pub tangent: Vec<f64>,
    /// Terms with sin rho(w, y) <= clamp, left out because the direction
    /// towards y is undefined there.
    pub dropped: usize,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        crate::sphere::norm(&self.tangent)
    }
}

/// Riemannian gradient of the sample-average objective:
/// -(1/N) sum_j g'(rho_j) (y_j - <w,y_j> w) / ||y_j - <w,y_j> w||.
pub fn psi_grad_saa(w: &UnitVector, cloud: &ConeCloud, g: GKind, clamp: f64) -> Result<Gradient> {
    check_dims(w, cloud)?;
    if !(clamp > 0.0 && clamp <= 1e-6) {
        return Err(Error::InvalidInput(format!("clamp {clamp} outside (0, 1e-6]")));
    }
    let (_, grad) = value_and_gradient(w, cloud, g, clamp);
    Ok(grad)
}

/// Mean objective value and gradient in one pass; no validation.
pub(crate) fn value_and_gradient(
    w: &UnitVector,
    cloud: &ConeCloud,
    g: GKind,
    clamp: f64,
) -> (f64, Gradient) {
    let ws = w.as_slice();
    let dim = ws.len();
    let mut acc = vec![0.0; dim];
    let mut total = 0.0;
    let mut dropped = 0usize;
    for y in cloud.iter() {
        let c = crate::sphere::dot(ws, y);
        let rho = angle_from_inner(c);
        total += g.value(rho);
        let sin = ((1.0 - c) * (1.0 + c)).sqrt();
        if !(sin > clamp) {
            dropped += 1;
            continue;
        }
        let coef = g.derivative(rho) / sin;
        acc.iter_mut().zip(y).for_each(|(a, yi)| *a += coef * yi);
    }
    let n = cloud.len() as f64;
    // Tangent projection once, after summation.
    let along = crate::sphere::dot(&acc, ws);
    let tangent: Vec<f64> = acc.iter().zip(ws).map(|(a, wi)| -(a - along * wi) / n).collect();
    (total / n, Gradient { tangent, dropped })
}

/// Mean objective value only; no validation.
pub(crate) fn mean_value(w: &[f64], cloud: &ConeCloud, g: GKind) -> f64 {
    let total: f64 = cloud
        .iter()
        .map(|y| g.value(angle_from_inner(crate::sphere::dot(w, y))))
        .sum();
    total / cloud.len() as f64
}

/// Exact psi on the circle: (1/2pi) ∫_{phi0}^{phi1} g(d(theta, phi)) dphi,
/// where d is the angular distance. The arc must satisfy
/// 0 < phi1 - phi0 <= pi; angles may run past 2pi.
pub fn psi_exact_2d(theta: f64, arc: (f64, f64), g: GKind) -> Result<f64> {
    let (phi0, phi1) = arc;
    if !(phi0.is_finite() && phi1.is_finite() && theta.is_finite()) {
        return Err(Error::InvalidInput("non-finite angle".into()));
    }
    if !(phi0 < phi1 && phi1 - phi0 <= PI + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "arc [{phi0}, {phi1}] must have length in (0, pi]"
        )));
    }
    let dist = |phi: f64| {
        let d = (phi - theta).rem_euclid(TAU);
        if d > PI {
            TAU - d
        } else {
            d
        }
    };
    // Kinks of the angular distance sit at theta + k pi.
    let mut cuts = vec![phi0];
    let k0 = ((phi0 - theta) / PI).floor() as i64 + 1;
    let mut k = k0;
    loop {
        let c = theta + k as f64 * PI;
        if c >= phi1 {
            break;
        }
        if c > phi0 {
            cuts.push(c);
        }
        k += 1;
    }
    cuts.push(phi1);
    let total: f64 = cuts
        .windows(2)
        .map(|ab| quadrature::integrate(|phi| g.value(dist(phi)), ab[0], ab[1], 1e-13))
        .sum();
    Ok(total / TAU)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{Label, PolyhedralCone};
    use crate::sampling::{sample_cone_cap, CapSampler};
    use crate::streams::SeedStream;
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4};

    fn e(n: usize, i: usize) -> UnitVector {
        UnitVector::basis(n, i)
    }

    fn single(p: UnitVector) -> ConeCloud {
        ConeCloud::from_points(&[p], 0.5).unwrap()
    }

    fn quadrant() -> PolyhedralCone {
        PolyhedralCone::from_labeled_sample(&[e(2, 0), e(2, 1)], &[Label::Pos, Label::Pos]).unwrap()
    }

    #[test]
    fn g_examples() {
        assert_eq!(g_eval(GKind::Identity, FRAC_PI_3).unwrap(), (FRAC_PI_3, 1.0));
        assert_eq!(g_eval(GKind::Square, FRAC_PI_2).unwrap(), (PI * PI / 4.0, PI));
        let (v, d) = g_eval(GKind::TwoOneMinusCos, PI).unwrap();
        assert_eq!(v, 4.0);
        assert!(d.abs() < 1e-15);
        assert!(g_eval(GKind::Identity, -1e-3).is_err());
        assert!(g_eval(GKind::Identity, PI + 1e-3).is_err());
        assert!(g_eval(GKind::Identity, PI + 1e-10).is_ok());
    }

    #[test]
    fn g_derivatives_match_finite_differences() {
        for g in GKind::ALL {
            for k in 1..20 {
                let t = k as f64 * PI / 20.0;
                let h = 1e-6;
                let fd = (g.value(t + h) - g.value(t - h)) / (2.0 * h);
                assert!((fd - g.derivative(t)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn saa_single_point() {
        let c = single(e(3, 0));
        assert_eq!(psi_saa(&e(3, 0), &c, GKind::Identity).unwrap().value, 0.0);
        let v = psi_saa(&e(3, 0).neg(), &c, GKind::Identity).unwrap().value;
        assert!((v - PI).abs() < 1e-15);
    }

    #[test]
    fn saa_rejects_mismatched_dims() {
        let c = single(e(3, 0));
        assert!(psi_saa(&e(2, 0), &c, GKind::Identity).is_err());
    }

    #[test]
    fn saa_quadrant_matches_closed_form() {
        // ∫_0^{pi/2} |pi/4 - phi| dphi / 2pi = (pi^2/16) / 2pi = pi/32.
        let exact = PI / 32.0;
        let cloud = sample_cone_cap(&quadrant(), 100_000, &SeedStream::new(21), CapSampler::iid()).unwrap();
        let est = psi_saa(&UnitVector::from_angle(FRAC_PI_4), &cloud, GKind::Identity).unwrap();
        assert!((est.scaled_value - exact).abs() < 3.0 * est.scaled_std_error, "{est:?}");
        assert!(est.value >= 0.0 && est.value <= PI);
    }

    #[test]
    fn gradient_single_term_by_hand() {
        let c = single(e(3, 1));
        let grad = psi_grad_saa(&e(3, 0), &c, GKind::Identity, DEFAULT_CLAMP).unwrap();
        let expected = [0.0, -1.0, 0.0];
        assert!(grad.tangent.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-15));

        let c = single(e(3, 2));
        let grad = psi_grad_saa(&e(3, 2), &c, GKind::Square, DEFAULT_CLAMP).unwrap();
        assert!(grad.norm() < 1e-12);
        assert_eq!(grad.dropped, 1);
        assert!(psi_grad_saa(&e(3, 2), &c, GKind::Square, 1e-3).is_err());
    }

    fn random_case(seed: u64) -> (UnitVector, ConeCloud, GKind) {
        let mut rng = SeedStream::new(seed).rng();
        let n = rng.gen_range(2..6);
        let m = rng.gen_range(1..4);
        let u = UnitVector::random(n, &mut rng);
        let pts: Vec<UnitVector> = (0..m).map(|_| UnitVector::random(n, &mut rng)).collect();
        let labels: Vec<Label> = pts.iter().map(|x| Label::of(x.dot(&u))).collect();
        let k = PolyhedralCone::from_labeled_sample(&pts, &labels).unwrap();
        let cloud = sample_cone_cap(&k, 300, &SeedStream::new(seed).child("c"), CapSampler::default()).unwrap();
        let w = UnitVector::random(n, &mut rng);
        (w, cloud, GKind::ALL[seed as usize % 3])
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..100 {
            let (w, cloud, g) = random_case(seed);
            let grad = psi_grad_saa(&w, &cloud, g, DEFAULT_CLAMP).unwrap();
            assert!(crate::sphere::dot(&grad.tangent, w.as_slice()).abs() < 1e-10);
            // Random unit tangent direction.
            let mut rng = SeedStream::new(seed).child("dir").rng();
            let r = UnitVector::random(w.dim(), &mut rng);
            let c = r.dot(&w);
            let dir: Vec<f64> = r.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a - c * b).collect();
            let len = crate::sphere::norm(&dir);
            let dir: Vec<f64> = dir.iter().map(|x| x / len).collect();
            let h = 1e-5;
            let plus: Vec<f64> = dir.iter().map(|d| h * d).collect();
            let minus: Vec<f64> = dir.iter().map(|d| -h * d).collect();
            let fp = psi_saa(&w.retract(&plus).unwrap(), &cloud, g).unwrap().value;
            let fm = psi_saa(&w.retract(&minus).unwrap(), &cloud, g).unwrap().value;
            let fd = (fp - fm) / (2.0 * h);
            let analytic = crate::sphere::dot(&grad.tangent, &dir);
            assert!((fd - analytic).abs() < 1e-5, "seed {seed}: {fd} vs {analytic}");
        }
    }

    #[test]
    fn exact_2d_examples() {
        let arc = (0.0, FRAC_PI_2);
        let v = psi_exact_2d(FRAC_PI_4, arc, GKind::Identity).unwrap();
        assert!((v - PI / 32.0).abs() < 1e-13);
        // ∫_0^{pi/2} phi dphi / 2pi = (pi^2/8) / 2pi = pi/16.
        let v = psi_exact_2d(0.0, arc, GKind::Identity).unwrap();
        assert!((v - PI / 16.0).abs() < 1e-13);
        let center = psi_exact_2d(FRAC_PI_4, arc, GKind::TwoOneMinusCos).unwrap();
        for k in 0..=40 {
            let theta = k as f64 * TAU / 40.0;
            assert!(psi_exact_2d(theta, arc, GKind::TwoOneMinusCos).unwrap() >= center - 1e-15);
        }
    }

    #[test]
    fn exact_2d_closed_forms_across_kinks() {
        // Identity with theta outside the arc: no kink inside, d = phi - theta.
        // theta = -1, arc [0, 1]: ∫_0^1 (phi + 1) dphi = 1.5.
        let v = psi_exact_2d(-1.0, (0.0, 1.0), GKind::Identity).unwrap();
        assert!((v - 1.5 / TAU).abs() < 1e-13);
        // Kink at theta + pi = 2.5 inside [2, 3]: d = pi - |phi - 2.5| ... integrate by hand:
        // ∫_2^3 (pi - |phi - 2.5|) dphi = pi - 0.25.
        let v = psi_exact_2d(-PI + 2.5, (2.0, 3.0), GKind::Identity).unwrap();
        assert!((v - (PI - 0.25) / TAU).abs() < 1e-13);
        // Square over a full half circle centred on theta: 2 ∫_0^{pi/2} t^2 dt = pi^3/12.
        let v = psi_exact_2d(1.0, (1.0 - FRAC_PI_2, 1.0 + FRAC_PI_2), GKind::Square).unwrap();
        assert!((v - PI.powi(3) / 12.0 / TAU).abs() < 1e-13);
    }

    #[test]
    fn exact_2d_rejects_improper_arcs() {
        assert!(psi_exact_2d(0.0, (1.0, 1.0), GKind::Identity).is_err());
        assert!(psi_exact_2d(0.0, (0.0, 3.5), GKind::Identity).is_err());
    }

    #[test]
    fn exact_2d_agrees_with_saa() {
        let mut within = 0;
        for seed in 0..100u64 {
            let mut rng = SeedStream::new(seed).child("arc").rng();
            let u = UnitVector::random(2, &mut rng);
            let pts: Vec<UnitVector> = (0..rng.gen_range(1..4)).map(|_| UnitVector::random(2, &mut rng)).collect();
            let labels: Vec<Label> = pts.iter().map(|x| Label::of(x.dot(&u))).collect();
            let k = PolyhedralCone::from_labeled_sample(&pts, &labels).unwrap();
            let arc = k.arc_2d().unwrap();
            let cloud = sample_cone_cap(&k, 4000, &SeedStream::new(seed), CapSampler::iid()).unwrap();
            let theta = rng.gen_range(0.0..TAU);
            let g = GKind::ALL[seed as usize % 3];
            let est = psi_saa(&UnitVector::from_angle(theta), &cloud, g).unwrap();
            let exact = psi_exact_2d(theta, arc, g).unwrap();
            if (est.scaled_value - exact).abs() < 3.0 * est.scaled_std_error {
                within += 1;
            }
        }
        assert!(within >= 99, "{within}/100");
    }
}
