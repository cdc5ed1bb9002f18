//! Reduced-scale invariant suite behind the `verify` subcommand.
//!
//! Each check draws everything from `master.child(<check name>)`, so the
//! report is a pure function of the seed.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::Serialize;

use crate::cone::PolyhedralCone;
use crate::error::Result;
use crate::lab::{empirical_disagreement, label_points, misclass_prob, random_instance, LabeledSample, LearningRule};
use crate::optimizer::{minimize_from, multistart_from, OptOptions, DEFAULT_CLUSTER_RADIUS};
use crate::psi::{psi_exact_2d, psi_grad_saa, psi_saa, GKind, DEFAULT_CLAMP};
use crate::sampling::{rotate_cloud, sample_cone_cap, sample_sphere, CapSampler, ConeCloud};
use crate::sphere::{dot, geodesic_distance, geodesic_midpoint, reflect, Reflection, Rotation, UnitVector};
use crate::streams::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

type Check = fn(&SeedStream) -> Result<(bool, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("triangle_inequality", triangle_inequality),
    ("reflection_involution", reflection_involution),
    ("separating_direction", separating_direction),
    ("bipolar_representation", bipolar_representation),
    ("moreau_orthogonality", moreau_orthogonality),
    ("cone_properness", cone_properness),
    ("cap_uniformity_ks", cap_uniformity_ks),
    ("sampling_thread_independence", sampling_thread_independence),
    ("gradient_finite_difference", gradient_finite_difference),
    ("midpoint_convexity", midpoint_convexity),
    ("midpoint_concavity", midpoint_concavity),
    ("exact_2d_agreement", exact_2d_agreement),
    ("armijo_descent", armijo_descent),
    ("minimizer_location", minimizer_location),
    ("rotation_equivariance", rotation_equivariance),
    ("chord_closed_form", chord_closed_form),
    ("misclassification_identity", misclassification_identity),
    ("label_witness", label_witness),
    ("rule_consistency", rule_consistency),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

pub fn run_verify(seed: u64) -> VerifyReport {
    let master = SeedStream::new(seed);
    let checks: Vec<CheckResult> = CHECKS
        .iter()
        .map(|(name, check)| {
            let (pass, detail) = match check(&master.child(name)) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult {
                name: name.to_string(),
                pass,
                detail,
            }
        })
        .collect();
    VerifyReport {
        seed,
        pass: checks.iter().all(|c| c.pass),
        checks,
    }
}

fn random_dim<R: Rng + ?Sized>(rng: &mut R, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

/// Random cone with nonempty interior: normals of a labeled sample.
fn random_cone<R: Rng + ?Sized>(rng: &mut R, dim: usize, m: std::ops::RangeInclusive<usize>) -> Result<PolyhedralCone> {
    let m = rng.gen_range(m);
    random_instance(dim, m, rng).sample.cone()
}

fn triangle_inequality(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..2000 {
        let n = random_dim(&mut rng, 2, 6);
        let [a, b, c] = [0, 1, 2].map(|_| UnitVector::random(n, &mut rng));
        let excess = geodesic_distance(&a, &c) - geodesic_distance(&a, &b) - geodesic_distance(&b, &c);
        worst = worst.max(excess);
    }
    Ok((worst <= 1e-10, format!("max excess {worst:.3e}")))
}

fn reflection_involution(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = random_dim(&mut rng, 2, 6);
        let z = UnitVector::random(n, &mut rng);
        let p = UnitVector::random(n, &mut rng);
        for r in [Reflection::hyperplane(z.clone()), Reflection::axis(z.clone())] {
            let back = reflect(&r, &reflect(&r, &p));
            let d = back.as_slice().iter().zip(p.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(d);
        }
        let swapped = reflect(&Reflection::hyperplane(z.clone()), &p).dot(&z) + p.dot(&z);
        worst = worst.max(swapped.abs());
    }
    Ok((worst <= 1e-12, format!("max deviation {worst:.3e}")))
}

fn separating_direction(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let mut cases = 0;
    let mut worst_w = f64::NEG_INFINITY;
    let mut worst_k = f64::INFINITY;
    while cases < 200 {
        let n = random_dim(&mut rng, 2, 5);
        let cone = random_cone(&mut rng, n, 1..=6)?;
        let w = UnitVector::random(n, &mut rng);
        if cone.contains(w.as_slice(), 1e-9) {
            continue;
        }
        cases += 1;
        let z = cone.separating_direction(&w)?;
        worst_w = worst_w.max(z.dot(&w));
        for _ in 0..10 {
            let v = UnitVector::random(n, &mut rng);
            let y = cone.project_primal(v.as_slice())?;
            worst_k = worst_k.min(dot(z.as_slice(), &y));
        }
    }
    Ok((
        worst_w < 0.0 && worst_k >= -1e-8,
        format!("max <z,w> {worst_w:.3e}, min <z,p> {worst_k:.3e}"),
    ))
}

fn bipolar_representation(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let mut mismatches = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let n = random_dim(&mut rng, 2, 5);
        let cone = random_cone(&mut rng, n, 1..=6)?;
        let mut members = Vec::new();
        for _ in 0..50 {
            let v = UnitVector::random(n, &mut rng);
            let by_normals = cone.normals().iter().all(|a| a.dot(&v) >= 0.0);
            if by_normals != cone.contains(v.as_slice(), 0.0) {
                mismatches += 1;
            }
            if by_normals {
                members.push(v);
            }
        }
        for _ in 0..20 {
            let w = UnitVector::random(n, &mut rng);
            let proj = cone.project_dual(w.as_slice())?;
            let rep: Vec<f64> = {
                let mut p = vec![0.0; n];
                for (a, c) in cone.normals().iter().zip(&proj.coeffs.alpha) {
                    p.iter_mut().zip(a.as_slice()).for_each(|(x, y)| *x += c * y);
                }
                p
            };
            for v in &members {
                worst = worst.min(dot(&rep, v.as_slice()));
            }
        }
    }
    Ok((
        mismatches == 0 && worst >= -1e-8,
        format!("membership mismatches {mismatches}, min <p,v> {worst:.3e}"),
    ))
}

fn moreau_orthogonality(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let n = random_dim(&mut rng, 2, 6);
        let cone = random_cone(&mut rng, n, 1..=7)?;
        let w = UnitVector::random(n, &mut rng);
        let p = cone.project_primal(w.as_slice())?;
        let r: Vec<f64> = w.as_slice().iter().zip(&p).map(|(a, b)| a - b).collect();
        worst = worst.max(dot(&p, &r).abs());
    }
    Ok((worst <= 1e-8, format!("max |<P w, w - P w>| {worst:.3e}")))
}

fn cone_properness(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let mut violations = 0;
    for _ in 0..300 {
        let n = random_dim(&mut rng, 2, 6);
        let cone = random_cone(&mut rng, n, 1..=8)?;
        violations += cone.normals().iter().filter(|a| cone.contains(a.neg().as_slice(), 0.0)).count();
    }
    Ok((violations == 0, format!("{violations} normals with -a in K")))
}

fn cap_uniformity_ks(s: &SeedStream) -> Result<(bool, String)> {
    let cone = PolyhedralCone::new(vec![UnitVector::basis(2, 0), UnitVector::basis(2, 1)])?;
    let n = 20_000;
    let cloud = sample_cone_cap(&cone, n, s, CapSampler::default())?;
    let mut angles: Vec<f64> = cloud.iter().map(|p| p[1].atan2(p[0])).collect();
    angles.sort_by(f64::total_cmp);
    let ks = angles
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let f = a / FRAC_PI_2;
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    let bound = 1.63 / (n as f64).sqrt();
    Ok((ks < bound, format!("KS {ks:.4e} vs {bound:.4e}")))
}

fn sampling_thread_independence(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.child("cone").rng();
    let cone = random_cone(&mut rng, 4, 4..=4)?;
    let draw = |threads: usize| -> Result<ConeCloud> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
            .install(|| sample_cone_cap(&cone, 5000, &s.child("cloud"), CapSampler::default()))
    };
    let a = draw(1)?;
    let b = draw(4)?;
    Ok((a == b, format!("clouds equal: {}", a == b)))
}

fn gradient_finite_difference(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..40u64 {
        let n = random_dim(&mut rng, 2, 5);
        let g = GKind::ALL[k as usize % 3];
        let cone = random_cone(&mut rng, n, 1..=5)?;
        let cloud = sample_cone_cap(&cone, 500, &s.index(k), CapSampler::default())?;
        let w = UnitVector::random(n, &mut rng);
        let grad = psi_grad_saa(&w, &cloud, g, DEFAULT_CLAMP)?;
        let raw = UnitVector::random(n, &mut rng);
        let c = raw.dot(&w);
        let d: Vec<f64> = raw.as_slice().iter().zip(w.as_slice()).map(|(r, wi)| r - c * wi).collect();
        let plus = w.retract(&d.iter().map(|x| h * x).collect::<Vec<_>>())?;
        let minus = w.retract(&d.iter().map(|x| -h * x).collect::<Vec<_>>())?;
        let fd = (psi_saa(&plus, &cloud, g)?.value - psi_saa(&minus, &cloud, g)?.value) / (2.0 * h);
        worst = worst.max((dot(&grad.tangent, &d) - fd).abs());
    }
    Ok((worst < 1e-5, format!("max |D psi - FD| {worst:.3e}")))
}

/// Two distinct points of K^ ∩ S^{n-1} at most pi/2 apart, if the dual cap is
/// not a single point.
fn dual_pair<R: Rng + ?Sized>(cone: &PolyhedralCone, rng: &mut R) -> Option<(UnitVector, UnitVector)> {
    for _ in 0..100 {
        let a = cone.random_dual_point(rng);
        let b = cone.random_dual_point(rng);
        let d = geodesic_distance(&a, &b);
        if d > 1e-2 && d <= FRAC_PI_2 {
            return Some((a, b));
        }
    }
    None
}

/// (1/2)(psi(w1) + psi(w2)) - psi(mid) with the standard error of its
/// per-point terms; exact (zero error) in the plane.
fn midpoint_gap(
    cone: &PolyhedralCone,
    cloud: Option<&ConeCloud>,
    w1: &UnitVector,
    w2: &UnitVector,
    g: GKind,
) -> Result<(f64, f64)> {
    let mid = geodesic_midpoint(w1, w2)?;
    if let Some(arc) = cone.arc_2d() {
        let f = |w: &UnitVector| psi_exact_2d(w.angle(), arc, g);
        return Ok((0.5 * (f(w1)? + f(w2)?) - f(&mid)?, 0.0));
    }
    let cloud = cloud.expect("cloud for n > 2");
    let terms: Vec<f64> = cloud
        .iter()
        .map(|y| {
            let r = |w: &UnitVector| g.value(crate::sphere::angle_from_inner(dot(w.as_slice(), y)));
            0.5 * (r(w1) + r(w2)) - r(&mid)
        })
        .collect();
    let n = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

fn midpoint_check(s: &SeedStream, gs: &[GKind], sign: f64) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let mut trials = 0;
    let mut failures = 0;
    let mut flat = 0;
    let mut worst = f64::INFINITY;
    let mut k = 0u64;
    while trials < 40 {
        k += 1;
        let n = random_dim(&mut rng, 2, 4);
        let cone = random_cone(&mut rng, n, 2..=5)?;
        let Some((a, b)) = dual_pair(&cone, &mut rng) else { continue };
        let (w1, w2) = if sign > 0.0 { (a, b) } else { (a.neg(), b.neg()) };
        let cloud = if n > 2 {
            Some(sample_cone_cap(&cone, 4000, &s.index(k), CapSampler::default())?)
        } else {
            None
        };
        for &g in gs {
            trials += 1;
            let (gap, se) = midpoint_gap(&cone, cloud.as_ref(), &w1, &w2, g)?;
            // On the circle the identity objective is affine on arcs free of
            // cone points, so a zero gap there is exact, not a violation.
            if n == 2 && g == GKind::Identity && gap.abs() <= 1e-12 {
                flat += 1;
                continue;
            }
            let margin = sign * gap - 2.0 * se;
            worst = worst.min(if se > 0.0 { margin / se } else { margin });
            if !(margin > 0.0) {
                failures += 1;
            }
        }
    }
    Ok((
        failures == 0,
        format!("{failures}/{trials} failures, {flat} flat planar cases, worst margin {worst:.3e}"),
    ))
}

fn midpoint_convexity(s: &SeedStream) -> Result<(bool, String)> {
    midpoint_check(s, &[GKind::Identity, GKind::Square], 1.0)
}

fn midpoint_concavity(s: &SeedStream) -> Result<(bool, String)> {
    midpoint_check(s, &[GKind::Identity], -1.0)
}

fn exact_2d_agreement(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let trials = 60;
    let mut inside = 0;
    for k in 0..trials as u64 {
        let cone = random_cone(&mut rng, 2, 1..=4)?;
        let arc = cone.arc_2d().expect("labeled cones have interior");
        let g = GKind::ALL[k as usize % 3];
        let cloud = sample_cone_cap(&cone, 4000, &s.index(k), CapSampler::default())?;
        let w = UnitVector::random(2, &mut rng);
        let est = psi_saa(&w, &cloud, g)?;
        let exact = psi_exact_2d(w.angle(), arc, g)?;
        if (est.scaled_value - exact).abs() < 3.0 * est.scaled_std_error {
            inside += 1;
        }
    }
    Ok((inside * 100 >= trials * 95, format!("{inside}/{trials} within 3 SE")))
}

fn armijo_descent(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let mut increases = 0;
    let mut mismatch = 0;
    let opts = OptOptions {
        record_trace: true,
        ..OptOptions::default()
    };
    for k in 0..20u64 {
        let n = random_dim(&mut rng, 2, 5);
        let cone = random_cone(&mut rng, n, 1..=5)?;
        let cloud = sample_cone_cap(&cone, 2000, &s.index(k), CapSampler::default())?;
        let g = GKind::ALL[k as usize % 3];
        let r = minimize_from(&UnitVector::random(n, &mut rng), &cloud, g, &opts)?;
        let trace = r.trace.as_ref().expect("trace requested");
        increases += trace.windows(2).filter(|p| p[1].psi >= p[0].psi).count();
        if r.psi_value != psi_saa(&r.minimizer, &cloud, g)?.value {
            mismatch += 1;
        }
    }
    Ok((
        increases == 0 && mismatch == 0,
        format!("{increases} non-decreasing steps, {mismatch} value mismatches"),
    ))
}

/// Location of the empirical minimizer relative to K ∩ K^. A finite cloud
/// only pins the minimizer down to its sampling spread, estimated here from
/// the minimizers of disjoint batches of the cloud.
fn minimizer_location(s: &SeedStream) -> Result<(bool, String)> {
    const BATCHES: usize = 8;
    let mut rng = s.rng();
    let mut failures = 0;
    let mut worst_res: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for k in 0..20u64 {
        let n = random_dim(&mut rng, 2, 4);
        let cone = random_cone(&mut rng, n, 1..=5)?;
        let cloud = sample_cone_cap(&cone, 100_000, &s.index(k), CapSampler::default())?;
        let starts = sample_sphere(n, 4, &s.child("starts").index(k))?;
        let opts = OptOptions::default();
        let rep = multistart_from(&starts, &cloud, GKind::Identity, DEFAULT_CLUSTER_RADIUS, &opts)?;
        let w = &rep.best().representative;
        let res = cone.project_dual(w.as_slice())?.coeffs.residual;
        let batch = cloud.len() / BATCHES;
        let mut spread = 0.0;
        for b in 0..BATCHES {
            let points: Vec<UnitVector> = (b * batch..(b + 1) * batch).map(|j| cloud.point(j)).collect();
            let sub = ConeCloud::from_points(&points, cloud.measure_estimate)?;
            let wb = minimize_from(w, &sub, GKind::Identity, &opts)?.minimizer;
            spread += geodesic_distance(w, &wb).powi(2);
        }
        let resolution = (spread / BATCHES as f64).sqrt() / (BATCHES as f64).sqrt();
        let tol = (3.0 * resolution).max(1e-4);
        worst_res = worst_res.max(res);
        worst_ratio = worst_ratio.max(res / tol);
        if !(cone.contains(w.as_slice(), 1e-6) && res < tol) {
            failures += 1;
        }
    }
    Ok((
        failures == 0,
        format!("{failures}/20 outside K ∩ K^, max dual residual {worst_res:.3e}, max residual/tolerance {worst_ratio:.3}"),
    ))
}

fn rotation_equivariance(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let mut worst: f64 = 0.0;
    for k in 0..10u64 {
        let n = random_dim(&mut rng, 2, 5);
        let cone = random_cone(&mut rng, n, 1..=5)?;
        let cloud = sample_cone_cap(&cone, 2000, &s.index(k), CapSampler::default())?;
        let rot = Rotation::random(n, &mut rng);
        let moved = rotate_cloud(&cloud, &rot)?;
        let start = UnitVector::random(n, &mut rng);
        let a = minimize_from(&start, &cloud, GKind::Identity, &OptOptions::default())?;
        let b = minimize_from(&rot.apply(&start), &moved, GKind::Identity, &OptOptions::default())?;
        worst = worst.max(geodesic_distance(&rot.apply(&a.minimizer), &b.minimizer));
    }
    Ok((worst < 1e-6, format!("max geodesic gap {worst:.3e}")))
}

fn chord_closed_form(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let n = random_dim(&mut rng, 2, 5);
        let cone = random_cone(&mut rng, n, 1..=6)?;
        let cloud = sample_cone_cap(&cone, 2000, &s.index(k), CapSampler::default())?;
        let r = minimize_from(&UnitVector::random(n, &mut rng), &cloud, GKind::TwoOneMinusCos, &OptOptions::default())?;
        worst = worst.max(geodesic_distance(&r.minimizer, &cloud.normalized_mean()?));
    }
    Ok((worst < 1e-6, format!("max distance to normalized mean {worst:.3e}")))
}

fn misclassification_identity(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let count = 20_000;
    let mut failures = 0;
    for k in 0..10u64 {
        let v = UnitVector::random(3, &mut rng);
        let u = UnitVector::random(3, &mut rng);
        let p = misclass_prob(&v, &u);
        let rate = empirical_disagreement(&v, &u, count, &s.index(k))?;
        let se = (p * (1.0 - p) / count as f64).sqrt();
        if (rate - p).abs() > 3.0 * se.max(1.0 / count as f64) {
            failures += 1;
        }
    }
    Ok((failures == 0, format!("{failures}/10 outside 3 SE")))
}

fn label_witness(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let mut failures = 0;
    for _ in 0..500 {
        let n = random_dim(&mut rng, 2, 6);
        let u = UnitVector::random(n, &mut rng);
        let xs: Vec<UnitVector> = (0..random_dim(&mut rng, 1, 10)).map(|_| UnitVector::random(n, &mut rng)).collect();
        let labels = label_points(&u, &xs);
        let cone = LabeledSample::new(xs, labels)?.cone()?;
        if !cone.contains(u.as_slice(), 0.0) {
            failures += 1;
        }
    }
    Ok((failures == 0, format!("{failures}/500 targets outside their cone")))
}

fn rule_consistency(s: &SeedStream) -> Result<(bool, String)> {
    let mut rng = s.rng();
    let rules = [
        LearningRule::Optimal {
            cloud_size: 4000,
            n_starts: 2,
        },
        LearningRule::SphericalCentroid {
            cloud_size: 4000,
            n_starts: 2,
        },
        LearningRule::Perceptron { max_epochs: 100_000 },
    ];
    let mut failures = 0;
    let mut trials = 0;
    for k in 0..10u64 {
        let inst = random_instance(3, 5, &mut rng);
        for rule in &rules {
            trials += 1;
            let h = crate::lab::apply_rule(rule, &inst.sample, &s.index(k))?;
            if !inst.sample.is_consistent(&h) {
                failures += 1;
            }
        }
    }
    let _ = PI;
    Ok((failures == 0, format!("{failures}/{trials} inconsistent outputs")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_is_deterministic() {
        let a = run_verify(7);
        for c in &a.checks {
            assert!(c.pass, "{}: {}", c.name, c.detail);
        }
        assert_eq!(a.checks.len(), check_names().len());
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .unwrap()
            .install(|| run_verify(7));
        assert_eq!(a.to_json(), b.to_json());
    }
}
