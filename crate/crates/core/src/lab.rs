//! The halfspace-learning experiment.
//!
//! A target u is drawn uniformly from the sphere, m sample points are drawn
//! uniformly and labeled by sign(<u, x_i>), and a learning rule maps the
//! labeled sample to a hypothesis h. The expected error of h on a fresh
//! uniform test point is rho(h, u)/pi, so Omega(f) is estimated by averaging
//! that quantity over trials. All rules see the same trial instances.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::{Label, PolyhedralCone};
use crate::error::{Error, Result};
use crate::optimizer::{multistart_from, OptOptions, DEFAULT_CLUSTER_RADIUS};
use crate::psi::GKind;
use crate::sampling::{sample_cone_cap, sample_sphere, CapSampler, ConeCloud};
use crate::sphere::{dot, geodesic_distance, UnitVector};
use crate::streams::SeedStream;

/// A trial whose sampling or learning fails is redrawn at most this many times.
pub const MAX_TRIAL_ATTEMPTS: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub points: Vec<UnitVector>,
    pub labels: Vec<Label>,
}

impl LabeledSample {
    pub fn new(points: Vec<UnitVector>, labels: Vec<Label>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empty sample".into()));
        }
        if points.len() != labels.len() {
            return Err(Error::InvalidInput("points and labels differ in length".into()));
        }
        let dim = points[0].dim();
        if points.iter().any(|p| p.dim() != dim) {
            return Err(Error::InvalidInput("sample points have mixed dimensions".into()));
        }
        Ok(Self { points, labels })
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// K(x, y), whose unit sphere section is the version space.
    pub fn cone(&self) -> Result<PolyhedralCone> {
        PolyhedralCone::from_labeled_sample(&self.points, &self.labels)
    }

    /// sign(<h, x_i>) = y_i for every i, with sign(0) = +1.
    pub fn is_consistent(&self, h: &UnitVector) -> bool {
        self.points
            .iter()
            .zip(&self.labels)
            .all(|(x, &y)| Label::of(h.dot(x)) == y)
    }
}

/// y_i = sign(<u, x_i>), ties resolved to +1.
pub fn label_points(u: &UnitVector, points: &[UnitVector]) -> Vec<Label> {
    points.iter().map(|x| Label::of(u.dot(x))).collect()
}

/// Probability that a uniform test point is labeled differently by v and u.
pub fn misclass_prob(v: &UnitVector, u: &UnitVector) -> f64 {
    geodesic_distance(v, u) / PI
}

/// Fraction of `count` uniform test points on which sign<v,x> != sign<u,x>.
pub fn empirical_disagreement(v: &UnitVector, u: &UnitVector, count: usize, stream: &SeedStream) -> Result<f64> {
    let xs = sample_sphere(v.dim(), count, stream)?;
    let miss = xs
        .iter()
        .filter(|x| Label::of(v.dot(x)) != Label::of(u.dot(x)))
        .count();
    Ok(miss as f64 / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRule {
    /// Minimizer of the average geodesic distance to the version space.
    Optimal { cloud_size: usize, n_starts: usize },
    /// Minimizer of the average squared geodesic distance.
    SphericalCentroid { cloud_size: usize, n_starts: usize },
    /// Normalized mean of the version-space cloud.
    EuclideanCentroid { cloud_size: usize },
    /// Mistake-driven updates w += y_i x_i from w = 0 until consistent.
    Perceptron { max_epochs: usize },
}

impl LearningRule {
    pub fn name(&self) -> &'static str {
        match self {
            LearningRule::Optimal { .. } => "optimal",
            LearningRule::SphericalCentroid { .. } => "spherical_centroid",
            LearningRule::EuclideanCentroid { .. } => "euclidean_centroid",
            LearningRule::Perceptron { .. } => "perceptron",
        }
    }

    pub fn cloud_size(&self) -> Option<usize> {
        match *self {
            LearningRule::Optimal { cloud_size, .. }
            | LearningRule::SphericalCentroid { cloud_size, .. }
            | LearningRule::EuclideanCentroid { cloud_size } => Some(cloud_size),
            LearningRule::Perceptron { .. } => None,
        }
    }

    fn n_starts(&self) -> usize {
        match *self {
            LearningRule::Optimal { n_starts, .. } | LearningRule::SphericalCentroid { n_starts, .. } => n_starts,
            _ => 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(0) = self.cloud_size() {
            return Err(Error::InvalidInput(format!("{}: cloud_size must be >= 1", self.name())));
        }
        match *self {
            LearningRule::Optimal { n_starts: 0, .. } | LearningRule::SphericalCentroid { n_starts: 0, .. } => {
                Err(Error::InvalidInput(format!("{}: n_starts must be >= 1", self.name())))
            }
            LearningRule::Perceptron { max_epochs: 0 } => {
                Err(Error::InvalidInput("perceptron: max_epochs must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

fn perceptron(sample: &LabeledSample, max_epochs: usize) -> Result<UnitVector> {
    let mut w = vec![0.0; sample.dim()];
    for _ in 0..max_epochs {
        let mut mistakes = 0;
        for (x, y) in sample.points.iter().zip(&sample.labels) {
            let s = y.value();
            if s * dot(&w, x.as_slice()) <= 0.0 {
                w.iter_mut().zip(x.as_slice()).for_each(|(wi, xi)| *wi += s * xi);
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            return UnitVector::normalize(w);
        }
    }
    Err(Error::NonConvergence(format!(
        "perceptron not consistent after {max_epochs} epochs"
    )))
}

/// Applies a rule to a sample given an already drawn cloud and starts.
///
/// Every rule is equivariant here: transporting the sample, the cloud and
/// the starts by a rotation transports the output by the same rotation.
pub fn apply_rule_with(
    rule: &LearningRule,
    sample: &LabeledSample,
    cloud: Option<&ConeCloud>,
    starts: &[UnitVector],
    opts: &OptOptions,
) -> Result<UnitVector> {
    let need_cloud = || cloud.ok_or_else(|| Error::InvalidInput(format!("{} needs a cloud", rule.name())));
    match *rule {
        LearningRule::Optimal { .. } | LearningRule::SphericalCentroid { .. } => {
            let g = if matches!(rule, LearningRule::Optimal { .. }) {
                GKind::Identity
            } else {
                GKind::Square
            };
            let report = multistart_from(starts, need_cloud()?, g, DEFAULT_CLUSTER_RADIUS, opts)?;
            Ok(report.best().representative.clone())
        }
        LearningRule::EuclideanCentroid { .. } => need_cloud()?.normalized_mean(),
        LearningRule::Perceptron { max_epochs } => perceptron(sample, max_epochs),
    }
}

fn cloud_stream(stream: &SeedStream, size: usize) -> SeedStream {
    stream.child("cloud").index(size as u64)
}

fn starts_for(rule: &LearningRule, dim: usize, stream: &SeedStream) -> Result<Vec<UnitVector>> {
    match rule.n_starts() {
        0 => Ok(Vec::new()),
        k => sample_sphere(dim, k, &stream.child("starts")),
    }
}

/// Applies a rule, drawing its cloud and starts from `stream`.
pub fn apply_rule(rule: &LearningRule, sample: &LabeledSample, stream: &SeedStream) -> Result<UnitVector> {
    rule.validate()?;
    let cloud = match rule.cloud_size() {
        Some(n) => Some(sample_cone_cap(&sample.cone()?, n, &cloud_stream(stream, n), CapSampler::default())?),
        None => None,
    };
    let starts = starts_for(rule, sample.dim(), stream)?;
    apply_rule_with(rule, sample, cloud.as_ref(), &starts, &OptOptions::default())
}

/// One draw of steps 1-4: hidden target and its labeled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub target: UnitVector,
    pub sample: LabeledSample,
}

impl Instance {
    pub fn draw(dim: usize, m: usize, stream: &SeedStream) -> Result<Self> {
        if dim < 2 || m == 0 {
            return Err(Error::InvalidInput(format!("need n >= 2 and m >= 1, got n={dim}, m={m}")));
        }
        let target = UnitVector::random(dim, &mut stream.child("target").rng());
        let points = sample_sphere(dim, m, &stream.child("points"))?;
        let labels = label_points(&target, &points);
        Ok(Self {
            target,
            sample: LabeledSample::new(points, labels)?,
        })
    }
}

fn trial_stream(stream: &SeedStream, trial: u64, attempt: u64) -> SeedStream {
    stream.child("trial").index(trial).child("attempt").index(attempt)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OmegaEstimate {
    pub omega: f64,
    pub std_error: f64,
    pub trials: usize,
    /// Trial draws that failed and were replaced by a fresh substream.
    pub failures: usize,
}

/// Monte Carlo estimate of Omega for an arbitrary learner. The learner sees
/// the whole instance, so test-only rules (e.g. "return the target") fit.
pub fn omega_estimate_with<F>(learner: F, dim: usize, m: usize, trials: usize, stream: &SeedStream) -> Result<OmegaEstimate>
where
    F: Fn(&Instance, &SeedStream) -> Result<UnitVector> + Sync,
{
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be >= 1".into()));
    }
    let per_trial: Vec<(f64, usize)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut last = None;
            for attempt in 0..MAX_TRIAL_ATTEMPTS {
                let s = trial_stream(stream, t, attempt);
                let outcome = Instance::draw(dim, m, &s).and_then(|inst| {
                    let h = learner(&inst, &s.child("learner"))?;
                    Ok(misclass_prob(&h, &inst.target))
                });
                match outcome {
                    Ok(err) => return Ok((err, attempt as usize)),
                    Err(e @ Error::InvalidInput(_)) => return Err(e),
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("at least one attempt"))
        })
        .collect::<Result<_>>()?;
    let errs: Vec<f64> = per_trial.iter().map(|p| p.0).collect();
    let (omega, std_error) = mean_and_se(&errs);
    Ok(OmegaEstimate {
        omega,
        std_error,
        trials,
        failures: per_trial.iter().map(|p| p.1).sum(),
    })
}

pub fn omega_estimate(rule: &LearningRule, dim: usize, m: usize, trials: usize, stream: &SeedStream) -> Result<OmegaEstimate> {
    rule.validate()?;
    omega_estimate_with(|inst, s| apply_rule(rule, &inst.sample, s), dim, m, trials, stream)
}

fn default_rules() -> Vec<LearningRule> {
    vec![
        LearningRule::Optimal {
            cloud_size: 20_000,
            n_starts: 4,
        },
        LearningRule::EuclideanCentroid { cloud_size: 20_000 },
        LearningRule::SphericalCentroid {
            cloud_size: 20_000,
            n_starts: 4,
        },
        LearningRule::Perceptron { max_epochs: 100_000 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_rules")]
    pub rules: Vec<LearningRule>,
}

impl ExperimentConfig {
    pub fn new(n: usize, m: usize, trials: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            trials,
            seed,
            rules: default_rules(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput(format!("n must be >= 2, got {}", self.n)));
        }
        if self.m == 0 {
            return Err(Error::InvalidInput("m must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be >= 1".into()));
        }
        if self.rules.is_empty() {
            return Err(Error::InvalidInput("at least one rule is required".into()));
        }
        self.rules.iter().try_for_each(LearningRule::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleRow {
    pub name: String,
    pub omega: f64,
    pub std_error: f64,
    pub trials: usize,
    /// Trial draws this rule failed on (the draw was then replaced for all rules).
    pub failures: usize,
    /// Trials whose output disagrees with some training label.
    pub inconsistent: usize,
}

/// Paired comparison of a rule against the first `optimal` rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: String,
    /// mean(err_baseline - err_optimal) over trials.
    pub mean_difference: f64,
    /// Standard error of that mean difference (common random numbers).
    pub paired_std_error: f64,
    /// sqrt(se_baseline^2 + se_optimal^2), ignoring the pairing.
    pub combined_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rules: Vec<RuleRow>,
    pub comparisons: Vec<Comparison>,
    pub seed: u64,
    /// Substream layout, for reproducing any single trial.
    pub streams: Vec<String>,
}

impl ExperimentReport {
    pub fn rule(&self, name: &str) -> Option<&RuleRow> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "name,omega,std_error,trials,failures,inconsistent")?;
        for r in &self.rules {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.name, r.omega, r.std_error, r.trials, r.failures, r.inconsistent
            )?;
        }
        Ok(())
    }
}

struct TrialOutcome {
    errors: Vec<f64>,
    consistent: Vec<bool>,
    failed_rules: Vec<usize>,
}

fn run_trial(config: &ExperimentConfig, stream: &SeedStream, t: u64) -> Result<TrialOutcome> {
    let mut failed_rules = Vec::new();
    let mut last_err = None;
    for attempt in 0..MAX_TRIAL_ATTEMPTS {
        let s = trial_stream(stream, t, attempt);
        let inst = Instance::draw(config.n, config.m, &s)?;
        let learner = s.child("learner");
        let cone = inst.sample.cone()?;
        let mut clouds: Vec<(usize, Result<ConeCloud>)> = Vec::new();
        let mut outputs = Vec::with_capacity(config.rules.len());
        let mut failed_here = false;
        for (r, rule) in config.rules.iter().enumerate() {
            let cloud = match rule.cloud_size() {
                Some(size) => {
                    if !clouds.iter().any(|(s, _)| *s == size) {
                        let c = sample_cone_cap(&cone, size, &cloud_stream(&learner, size), CapSampler::default());
                        clouds.push((size, c));
                    }
                    match &clouds.iter().find(|(s, _)| *s == size).unwrap().1 {
                        Ok(c) => Some(c),
                        Err(e) => {
                            failed_rules.push(r);
                            last_err = Some(e.clone());
                            failed_here = true;
                            continue;
                        }
                    }
                }
                None => None,
            };
            let result = starts_for(rule, config.n, &learner)
                .and_then(|starts| apply_rule_with(rule, &inst.sample, cloud, &starts, &OptOptions::default()));
            match result {
                Ok(h) => outputs.push(h),
                Err(e) => {
                    failed_rules.push(r);
                    last_err = Some(e);
                    failed_here = true;
                }
            }
        }
        if failed_here {
            continue;
        }
        return Ok(TrialOutcome {
            errors: outputs.iter().map(|h| misclass_prob(h, &inst.target)).collect(),
            consistent: outputs.iter().map(|h| inst.sample.is_consistent(h)).collect(),
            failed_rules,
        });
    }
    Err(last_err.expect("a failed attempt recorded its error"))
}

/// Runs every configured rule on the same stream of trial instances.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let stream = SeedStream::new(config.seed);
    let outcomes: Vec<TrialOutcome> = (0..config.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(config, &stream, t))
        .collect::<Result<_>>()?;

    let per_rule: Vec<Vec<f64>> = (0..config.rules.len())
        .map(|r| outcomes.iter().map(|o| o.errors[r]).collect())
        .collect();
    let rows = config
        .rules
        .iter()
        .enumerate()
        .map(|(r, rule)| {
            let (omega, std_error) = mean_and_se(&per_rule[r]);
            RuleRow {
                name: rule.name().to_string(),
                omega,
                std_error,
                trials: config.trials,
                failures: outcomes
                    .iter()
                    .map(|o| o.failed_rules.iter().filter(|&&f| f == r).count())
                    .sum(),
                inconsistent: outcomes.iter().filter(|o| !o.consistent[r]).count(),
            }
        })
        .collect();

    let comparisons = match config.rules.iter().position(|r| matches!(r, LearningRule::Optimal { .. })) {
        Some(opt) => config
            .rules
            .iter()
            .enumerate()
            .filter(|&(r, _)| r != opt)
            .map(|(r, rule)| {
                let diffs: Vec<f64> = per_rule[r].iter().zip(&per_rule[opt]).map(|(b, o)| b - o).collect();
                let (mean_difference, paired_std_error) = mean_and_se(&diffs);
                let (_, se_b) = mean_and_se(&per_rule[r]);
                let (_, se_o) = mean_and_se(&per_rule[opt]);
                Comparison {
                    baseline: rule.name().to_string(),
                    mean_difference,
                    paired_std_error,
                    combined_std_error: se_b.hypot(se_o),
                }
            })
            .collect(),
        None => Vec::new(),
    };

    Ok(ExperimentReport {
        config: config.clone(),
        rules: rows,
        comparisons,
        seed: config.seed,
        streams: vec![
            "trial/<t>/attempt/<a>/target".into(),
            "trial/<t>/attempt/<a>/points".into(),
            "trial/<t>/attempt/<a>/learner/cloud/<size>".into(),
            "trial/<t>/attempt/<a>/learner/starts".into(),
        ],
    })
}

/// Uniform random labeled sample consistent with a random target; test helper
/// shared by the verification suite.
pub fn random_instance<R: Rng + ?Sized>(dim: usize, m: usize, rng: &mut R) -> Instance {
    let target = UnitVector::random(dim, rng);
    let points: Vec<UnitVector> = (0..m).map(|_| UnitVector::random(dim, rng)).collect();
    let labels = label_points(&target, &points);
    Instance {
        target,
        sample: LabeledSample { points, labels },
    }
}
