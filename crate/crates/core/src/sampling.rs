//! Uniform sampling on S^{n-1} and on cone caps K ∩ S^{n-1}.
//!
//! Work is cut into fixed-size blocks, block `b` drawing from substream
//! `stream.index(b)`. Blocks are generated in parallel and merged in block
//! order, so a cloud depends on the seed only and not on the worker count.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::cone::PolyhedralCone;
use crate::error::{Error, Result};
use crate::sphere::{dot, Rotation, UnitVector};
use crate::streams::SeedStream;

const SPHERE_BLOCK: usize = 1024;
const CAP_BLOCK: u64 = 4096;
/// Membership tolerance for cloud points.
pub const CLOUD_TOL: f64 = 1e-9;
pub const DEFAULT_ATTEMPTS_PER_POINT: u64 = 10_000;

/// `count` i.i.d. uniform points on S^{n-1}.
pub fn sample_sphere(dim: usize, count: usize, stream: &SeedStream) -> Result<Vec<UnitVector>> {
    if dim < 2 {
        return Err(Error::InvalidInput(format!("dimension must be >= 2, got {dim}")));
    }
    if count == 0 {
        return Err(Error::InvalidInput("count must be >= 1".into()));
    }
    let blocks = count.div_ceil(SPHERE_BLOCK);
    let out: Vec<Vec<UnitVector>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream.index(b as u64).rng();
            let len = SPHERE_BLOCK.min(count - b * SPHERE_BLOCK);
            (0..len).map(|_| UnitVector::random(dim, &mut rng)).collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// Fixed sample of K ∩ S^{n-1} used as the integration rule for psi.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeCloud {
    dim: usize,
    coords: Vec<f64>,
    /// Accepted draws over attempts; unbiased-in-the-limit estimate of sigma(K_1).
    pub measure_estimate: f64,
    pub attempts: u64,
    /// Key of the substream the cloud was drawn from.
    pub seed: u64,
    /// Whether points come in pairs reflected through span{a_i}.
    pub antithetic: bool,
    /// Orthonormal basis of the subspace the cloud is symmetric about, when
    /// antithetic. The empirical objective is invariant under reflection
    /// through it.
    #[serde(skip)]
    pub symmetry_span: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapSampler {
    /// Attempt cap; defaults to 10^4 per requested point.
    pub max_attempts: Option<u64>,
    /// Pair each draw y = y_par + y_perp with y_par - y_perp, where y_par lies
    /// in span{a_i}. Membership in K depends on y_par only, so both are
    /// uniform on the cap; the pairing makes the empirical objective
    /// symmetric under the same reflection as the exact one. A no-op when the
    /// normals span R^n. The point count is rounded up to even.
    pub antithetic: bool,
}

impl Default for CapSampler {
    fn default() -> Self {
        Self {
            max_attempts: None,
            antithetic: true,
        }
    }
}

impl CapSampler {
    pub fn iid() -> Self {
        Self {
            max_attempts: None,
            antithetic: false,
        }
    }
}

impl ConeCloud {
    /// Builds a cloud from explicit points (test fixtures, imported files).
    pub fn from_points(points: &[UnitVector], measure_estimate: f64) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidInput("empty cloud".into()));
        };
        let dim = first.dim();
        if points.iter().any(|p| p.dim() != dim) {
            return Err(Error::InvalidInput("cloud points have mixed dimensions".into()));
        }
        if !(measure_estimate > 0.0 && measure_estimate <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "measure estimate {measure_estimate} outside (0, 1]"
            )));
        }
        Ok(Self {
            dim,
            coords: points.iter().flat_map(|p| p.as_slice().iter().copied()).collect(),
            measure_estimate,
            attempts: (points.len() as f64 / measure_estimate).round() as u64,
            seed: 0,
            antithetic: false,
            symmetry_span: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Flat row-major coordinates, `dim` per point.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn point(&self, j: usize) -> UnitVector {
        UnitVector::from_raw_unchecked(self.coords[j * self.dim..(j + 1) * self.dim].to_vec())
    }

    /// Normalized Euclidean mean of the points.
    pub fn normalized_mean(&self) -> Result<UnitVector> {
        let mut mean = vec![0.0; self.dim];
        for p in self.iter() {
            mean.iter_mut().zip(p).for_each(|(m, x)| *m += x);
        }
        UnitVector::normalize(mean)
    }

    /// Writes `dim,n_points,measure_estimate`, the corresponding values, then
    /// one point per row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "dim,n_points,measure_estimate")?;
        writeln!(out, "{},{},{}", self.dim, self.len(), self.measure_estimate)?;
        for p in self.iter() {
            let row: Vec<String> = p.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidInput(format!("cloud csv: {msg}"));
        let mut lines = input.lines();
        let mut next = || -> Result<Option<String>> {
            lines
                .next()
                .transpose()
                .map_err(|e| Error::InvalidInput(format!("cloud csv: {e}")))
        };
        if next()?.as_deref().map(str::trim) != Some("dim,n_points,measure_estimate") {
            return Err(bad("missing header"));
        }
        let meta = next()?.ok_or_else(|| bad("missing metadata row"))?;
        let fields: Vec<&str> = meta.trim().split(',').collect();
        if fields.len() != 3 {
            return Err(bad("metadata row needs three fields"));
        }
        let dim: usize = fields[0].parse().map_err(|_| bad("dim"))?;
        let n: usize = fields[1].parse().map_err(|_| bad("n_points"))?;
        let measure: f64 = fields[2].parse().map_err(|_| bad("measure_estimate"))?;
        let mut points = Vec::with_capacity(n);
        while let Some(line) = next()? {
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .trim()
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|_| bad("coordinate")))
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(bad("row length differs from dim"));
            }
            // Validate, but keep the stored coordinates bit-exact.
            UnitVector::new(v.clone())?;
            points.push(UnitVector::from_raw_unchecked(v));
        }
        if points.len() != n {
            return Err(bad("row count differs from n_points"));
        }
        Self::from_points(&points, measure)
    }
}

struct Block {
    /// (attempt offset within the block, point)
    accepted: Vec<(u64, Vec<f64>)>,
}

fn draw_block(cone: &PolyhedralCone, stream: &SeedStream, b: u64) -> Block {
    let mut rng = stream.index(b).rng();
    let dim = cone.dim();
    let mut accepted = Vec::new();
    for t in 0..CAP_BLOCK {
        let p = UnitVector::random(dim, &mut rng);
        if cone.contains(p.as_slice(), 0.0) {
            accepted.push((t, p.into_vec()));
        }
    }
    Block { accepted }
}

/// Rejection sampler for the uniform distribution on K ∩ S^{n-1}.
pub fn sample_cone_cap(
    cone: &PolyhedralCone,
    count: usize,
    stream: &SeedStream,
    opts: CapSampler,
) -> Result<ConeCloud> {
    if count == 0 {
        return Err(Error::InvalidInput("count must be >= 1".into()));
    }
    let dim = cone.dim();
    let basis = cone.span_basis();
    let antithetic = opts.antithetic && basis.len() < dim;
    let draws_needed = if antithetic { count.div_ceil(2) } else { count };
    let max_attempts = opts
        .max_attempts
        .unwrap_or(DEFAULT_ATTEMPTS_PER_POINT.saturating_mul(count as u64));

    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(draws_needed);
    let mut attempts: u64 = 0;
    let mut next_block: u64 = 0;
    let wave = rayon::current_num_threads().max(1) as u64 * 2;
    'outer: while draws.len() < draws_needed {
        let blocks: Vec<Block> = (next_block..next_block + wave)
            .into_par_iter()
            .map(|b| draw_block(cone, stream, b))
            .collect();
        for (k, block) in blocks.into_iter().enumerate() {
            let b = next_block + k as u64;
            for (t, p) in block.accepted {
                let used = b * CAP_BLOCK + t + 1;
                if used > max_attempts {
                    break;
                }
                draws.push(p);
                if draws.len() == draws_needed {
                    attempts = used;
                    break 'outer;
                }
            }
            if (b + 1) * CAP_BLOCK >= max_attempts {
                attempts = max_attempts;
                let accepted = if antithetic { 2 * draws.len() } else { draws.len() };
                return Err(Error::LowAcceptance {
                    requested: count,
                    accepted,
                    attempts,
                    measure_estimate: draws.len() as f64 / attempts as f64,
                });
            }
        }
        next_block += wave;
    }

    let mut coords = Vec::with_capacity(draws_needed * dim * if antithetic { 2 } else { 1 });
    for y in &draws {
        coords.extend_from_slice(y);
        if antithetic {
            // y' = 2 y_par - y
            let mut par = vec![0.0; dim];
            for e in &basis {
                let c = dot(y, e);
                par.iter_mut().zip(e).for_each(|(p, ei)| *p += c * ei);
            }
            let mut twin: Vec<f64> = par.iter().zip(y).map(|(p, yi)| 2.0 * p - yi).collect();
            let r = crate::sphere::norm(&twin);
            twin.iter_mut().for_each(|x| *x /= r);
            coords.extend_from_slice(&twin);
        }
    }
    Ok(ConeCloud {
        dim,
        coords,
        measure_estimate: draws.len() as f64 / attempts as f64,
        attempts,
        seed: stream.key(),
        antithetic,
        symmetry_span: antithetic.then_some(basis),
    })
}

/// Transports a cloud by an orthogonal map.
pub fn rotate_cloud(cloud: &ConeCloud, rotation: &Rotation) -> Result<ConeCloud> {
    if rotation.dim() != cloud.dim {
        return Err(Error::InvalidInput("rotation and cloud dimensions differ".into()));
    }
    let coords = cloud.iter().flat_map(|p| rotation.apply_raw(p)).collect();
    let symmetry_span = cloud
        .symmetry_span
        .as_ref()
        .map(|basis| basis.iter().map(|e| rotation.apply_raw(e)).collect());
    Ok(ConeCloud {
        coords,
        symmetry_span,
        ..cloud.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::Label;
    use crate::sphere::{geodesic_distance, random_rotation};
    use std::f64::consts::FRAC_PI_2;

    fn e(n: usize, i: usize) -> UnitVector {
        UnitVector::basis(n, i)
    }

    fn quadrant() -> PolyhedralCone {
        PolyhedralCone::from_labeled_sample(&[e(2, 0), e(2, 1)], &[Label::Pos, Label::Pos]).unwrap()
    }

    #[test]
    fn sphere_sample_is_isotropic() {
        let n = 100_000;
        let pts = sample_sphere(3, n, &SeedStream::new(1)).unwrap();
        assert_eq!(pts.len(), n);
        let mut mean = [0.0; 3];
        let mut positive = 0;
        for p in &pts {
            assert!((crate::sphere::norm(p.as_slice()) - 1.0).abs() < 1e-12);
            for (m, x) in mean.iter_mut().zip(p.as_slice()) {
                *m += x / n as f64;
            }
            positive += usize::from(p.as_slice()[0] > 0.0);
        }
        assert!(crate::sphere::norm(&mean) < 0.02);
        let frac = positive as f64 / n as f64;
        assert!((frac - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
    }

    #[test]
    fn sphere_sample_rejects_bad_args() {
        assert!(sample_sphere(1, 10, &SeedStream::new(1)).is_err());
        assert!(sample_sphere(3, 0, &SeedStream::new(1)).is_err());
    }

    fn check_measure(cone: &PolyhedralCone, expected: f64, seed: u64) {
        let cloud = sample_cone_cap(cone, 20_000, &SeedStream::new(seed), CapSampler::iid()).unwrap();
        let se = (expected * (1.0 - expected) / cloud.attempts as f64).sqrt();
        assert!(
            (cloud.measure_estimate - expected).abs() < 3.0 * se,
            "{} vs {expected}",
            cloud.measure_estimate
        );
        assert_eq!(cloud.len(), 20_000);
        assert_eq!(cloud.measure_estimate, cloud.len() as f64 / cloud.attempts as f64);
        assert!(cloud.iter().all(|p| cone.contains(p, CLOUD_TOL)));
    }

    #[test]
    fn cap_measures() {
        check_measure(&PolyhedralCone::new(vec![e(3, 0)]).unwrap(), 0.5, 2);
        check_measure(&quadrant(), 0.25, 3);
        let orthant = PolyhedralCone::new(vec![e(3, 0), e(3, 1), e(3, 2)]).unwrap();
        check_measure(&orthant, 0.125, 4);
    }

    #[test]
    fn quadrant_angles_pass_ks() {
        let n = 20_000;
        let cloud = sample_cone_cap(&quadrant(), n, &SeedStream::new(9), CapSampler::iid()).unwrap();
        let mut angles: Vec<f64> = cloud.iter().map(|p| p[1].atan2(p[0]) / FRAC_PI_2).collect();
        angles.sort_by(f64::total_cmp);
        let d = angles
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (a - lo).abs().max((hi - a).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.63 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn low_acceptance_reports_partial() {
        let thin = PolyhedralCone::new(vec![
            e(3, 0),
            UnitVector::normalize(vec![-1.0, 0.02, 0.0]).unwrap(),
        ])
        .unwrap();
        let err = sample_cone_cap(
            &thin,
            1000,
            &SeedStream::new(1),
            CapSampler {
                max_attempts: Some(8192),
                antithetic: false,
            },
        )
        .unwrap_err();
        match err {
            Error::LowAcceptance {
                requested,
                accepted,
                attempts,
                ..
            } => {
                assert_eq!(requested, 1000);
                assert!(accepted < 1000);
                assert_eq!(attempts, 8192);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn antithetic_pairs_are_reflections_in_span() {
        let k = PolyhedralCone::new(vec![e(4, 0), UnitVector::normalize(vec![1.0, 1.0, 0.0, 0.0]).unwrap()]).unwrap();
        let cloud = sample_cone_cap(&k, 1001, &SeedStream::new(2), CapSampler::default()).unwrap();
        assert!(cloud.antithetic);
        assert_eq!(cloud.len(), 1002);
        for j in (0..cloud.len()).step_by(2) {
            let (a, b) = (cloud.point(j), cloud.point(j + 1));
            assert!((a.as_slice()[0] - b.as_slice()[0]).abs() < 1e-12);
            assert!((a.as_slice()[1] - b.as_slice()[1]).abs() < 1e-12);
            assert!((a.as_slice()[2] + b.as_slice()[2]).abs() < 1e-12);
            assert!(k.contains(b.as_slice(), CLOUD_TOL));
        }
        // Full-rank normals: nothing to pair.
        let q = sample_cone_cap(&quadrant(), 11, &SeedStream::new(2), CapSampler::default()).unwrap();
        assert!(!q.antithetic);
        assert_eq!(q.len(), 11);
    }

    #[test]
    fn clouds_are_deterministic_across_pools() {
        let k = PolyhedralCone::new(vec![e(3, 0), e(3, 1)]).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sample_cone_cap(&k, 30_000, &SeedStream::new(5), CapSampler::default()).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(3));
        assert_eq!(a, run(8));
    }

    #[test]
    fn rotation_transport() {
        let k = PolyhedralCone::new(vec![e(3, 0)]).unwrap();
        let cloud = sample_cone_cap(&k, 200, &SeedStream::new(8), CapSampler::iid()).unwrap();
        assert_eq!(rotate_cloud(&cloud, &Rotation::identity(3)).unwrap(), cloud);
        let m = random_rotation(3, &SeedStream::new(4));
        let moved = rotate_cloud(&cloud, &m).unwrap();
        assert_eq!(moved.measure_estimate, cloud.measure_estimate);
        let rotated_cone = PolyhedralCone::new(vec![m.apply(&e(3, 0))]).unwrap();
        assert!(moved.iter().all(|p| rotated_cone.contains(p, 1e-9)));
        let back = rotate_cloud(&moved, &m.inverse()).unwrap();
        for (p, q) in back.iter().zip(cloud.iter()) {
            assert!(p.iter().zip(q).all(|(x, y)| (x - y).abs() < 1e-10));
        }
        for j in 0..20 {
            let d0 = geodesic_distance(&cloud.point(j), &cloud.point(j + 1));
            let d1 = geodesic_distance(&moved.point(j), &moved.point(j + 1));
            assert!((d0 - d1).abs() < 1e-10);
        }
    }

    #[test]
    fn csv_round_trip() {
        let k = PolyhedralCone::new(vec![e(3, 0)]).unwrap();
        let cloud = sample_cone_cap(&k, 50, &SeedStream::new(8), CapSampler::iid()).unwrap();
        let mut buf = Vec::new();
        cloud.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("dim,n_points,measure_estimate\n3,50,"));
        let back = ConeCloud::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 50);
        assert_eq!(back.coords(), cloud.coords());
        assert_eq!(back.measure_estimate, cloud.measure_estimate);
    }
}
