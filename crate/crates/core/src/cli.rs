//! Command-line front end.
//!
//! Parameters come from an optional JSON config file and from flags; flags
//! win. Every random quantity derives from `--seed` through named substreams
//! that are echoed in the JSON outputs.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cone::PolyhedralCone;
use crate::error::Error;
use crate::lab::{random_instance, run_experiment, ExperimentConfig, LearningRule};
use crate::optimizer::{multistart_minimize, OptOptions, DEFAULT_CLUSTER_RADIUS};
use crate::psi::{psi_exact_2d, psi_saa, GKind};
use crate::sampling::{sample_cone_cap, CapSampler, ConeCloud};
use crate::sphere::UnitVector;
use crate::streams::SeedStream;
use crate::verify::run_verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEFAULT_SEED: u64 = 1;
const MAX_DIM: usize = 64;
const MAX_POINTS: usize = 100_000_000;

#[derive(Debug, Parser)]
#[command(name = "conecap", version, about = "Version-space cone sampling, psi minimization and halfspace-learning experiments")]
struct Cli {
    /// Master seed for all random substreams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (stdout when absent). `experiment` also writes a CSV next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON file with parameters; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the cone cap K ∩ S^{n-1} and write the cloud as CSV.
    Sample(SampleArgs),
    /// Evaluate the empirical objective at given points or on an angle grid (n = 2).
    Psi(PsiArgs),
    /// Multistart minimization of the empirical objective.
    Optimize(OptimizeArgs),
    /// Compare learning rules on common random instances.
    Experiment(ExperimentArgs),
    /// Run the invariant suite; exits 1 if any check fails.
    Verify,
}

#[derive(Debug, Args, Clone, Default)]
struct ConeArgs {
    /// Cone normals a_i as "x,y,..;x,y,..". Overrides --n/--m.
    #[arg(long)]
    normals: Option<String>,
    /// Dimension of a random instance.
    #[arg(long)]
    n: Option<usize>,
    /// Sample size of a random instance.
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    cone: ConeArgs,
    /// Number of cloud points.
    #[arg(long)]
    count: Option<usize>,
    /// Plain i.i.d. draws, without antithetic pairing.
    #[arg(long)]
    iid: bool,
}

#[derive(Debug, Args)]
struct PsiArgs {
    #[command(flatten)]
    cone: ConeArgs,
    /// Number of cloud points [default: 10000].
    #[arg(long)]
    count: Option<usize>,
    /// identity | square | two_one_minus_cos
    #[arg(long)]
    g: Option<String>,
    /// Evaluation points "x,y,..;x,y,.." (normalized).
    #[arg(long)]
    w: Option<String>,
    /// Number of equally spaced angles on the circle (n = 2 only).
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[command(flatten)]
    cone: ConeArgs,
    /// Number of cloud points [default: 10000].
    #[arg(long)]
    count: Option<usize>,
    /// identity | square | two_one_minus_cos [default: identity].
    #[arg(long)]
    g: Option<String>,
    /// Number of random starts, at least 2 [default: 20].
    #[arg(long)]
    starts: Option<usize>,
    /// Geodesic radius for merging minimizers into clusters.
    #[arg(long)]
    radius: Option<f64>,
    /// Riemannian gradient norm at which a run counts as converged [default: 1e-8].
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap per start.
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Dimension [default: 3].
    #[arg(long)]
    n: Option<usize>,
    /// Labeled points per instance [default: 5].
    #[arg(long)]
    m: Option<usize>,
    /// Number of random instances [default: 500].
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated rule names: optimal, euclidean_centroid, spherical_centroid, perceptron.
    #[arg(long)]
    rules: Option<String>,
    /// Cloud size for the cloud-based rules.
    #[arg(long)]
    cloud_size: Option<usize>,
    /// Multistart count for the optimizing rules.
    #[arg(long)]
    starts: Option<usize>,
    /// Epoch cap for the perceptron.
    #[arg(long)]
    max_epochs: Option<usize>,
}

/// Every parameter any command reads from a config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    threads: Option<usize>,
    normals: Option<Vec<Vec<f64>>>,
    n: Option<usize>,
    m: Option<usize>,
    count: Option<usize>,
    iid: Option<bool>,
    g: Option<GKind>,
    w: Option<Vec<Vec<f64>>>,
    grid: Option<usize>,
    starts: Option<usize>,
    radius: Option<f64>,
    tol: Option<f64>,
    max_iters: Option<usize>,
    trials: Option<usize>,
    rules: Option<Vec<LearningRule>>,
    cloud_size: Option<usize>,
    max_epochs: Option<usize>,
}

enum Failure {
    Usage(String),
    Numerical(Error),
    Io(String),
    Verify,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(msg) => Failure::Usage(msg),
            other => Failure::Numerical(other),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Numerical(e)) => {
            let record = json!({ "error": e.code(), "message": e.to_string(), "detail": e });
            println!("{}", serde_json::to_string_pretty(&record).expect("error record serializes"));
            EXIT_FAILURE
        }
        Err(Failure::Io(msg)) => {
            let record = json!({ "error": "io", "message": msg });
            println!("{}", serde_json::to_string_pretty(&record).expect("error record serializes"));
            EXIT_FAILURE
        }
        Err(Failure::Verify) => EXIT_FAILURE,
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let file = load_config(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let out = cli.out.clone().or_else(|| file.out.clone());
    let threads = cli.threads.or(file.threads);
    if threads == Some(0) {
        return Err(usage("--threads must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| usage(format!("cannot start worker pool: {e}")))?;
    let ctx = Context { seed, out, file };
    pool.install(|| match cli.command {
        Command::Sample(a) => cmd_sample(&ctx, a),
        Command::Psi(a) => cmd_psi(&ctx, a),
        Command::Optimize(a) => cmd_optimize(&ctx, a),
        Command::Experiment(a) => cmd_experiment(&ctx, a),
        Command::Verify => cmd_verify(&ctx),
    })
}

struct Context {
    seed: u64,
    out: Option<PathBuf>,
    file: FileConfig,
}

impl Context {
    fn master(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }

    fn emit(&self, text: &str) -> Result<(), Failure> {
        match &self.out {
            Some(path) => fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display()))),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout
                    .write_all(text.as_bytes())
                    .and_then(|_| stdout.flush())
                    .map_err(|e| Failure::Io(e.to_string()))
            }
        }
    }
}

fn parse_matrix(text: &str, what: &str) -> Result<Vec<Vec<f64>>, Failure> {
    text.split(';')
        .filter(|row| !row.trim().is_empty())
        .map(|row| {
            row.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| usage(format!("{what}: cannot parse '{x}'"))))
                .collect()
        })
        .collect()
}

fn parse_g(flag: Option<&str>, file: Option<GKind>) -> Result<GKind, Failure> {
    match flag {
        Some(s) => s.parse().map_err(|e: Error| usage(e.to_string())),
        None => Ok(file.unwrap_or(GKind::Identity)),
    }
}

fn in_range<T: PartialOrd + std::fmt::Display>(name: &str, v: T, lo: T, hi: T) -> Result<T, Failure> {
    if v < lo || v > hi {
        return Err(usage(format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(v)
}

fn positive(name: &str, v: f64) -> Result<f64, Failure> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(usage(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(v)
}

/// The cone a command works on, and how it was obtained.
struct ResolvedCone {
    cone: PolyhedralCone,
    source: serde_json::Value,
}

fn resolve_cone(ctx: &Context, a: &ConeArgs) -> Result<ResolvedCone, Failure> {
    let normals = match &a.normals {
        Some(text) => Some(parse_matrix(text, "--normals")?),
        None if a.n.is_none() && a.m.is_none() => ctx.file.normals.clone(),
        None => None,
    };
    if let Some(rows) = normals {
        if rows.is_empty() {
            return Err(usage("normals: need at least one row"));
        }
        let vs = rows
            .into_iter()
            .map(UnitVector::normalize)
            .collect::<crate::error::Result<Vec<_>>>()?;
        let cone = PolyhedralCone::new(vs)?;
        let source = json!({ "kind": "explicit", "normals": cone.normals() });
        return Ok(ResolvedCone { cone, source });
    }
    let n = a.n.or(ctx.file.n).ok_or_else(|| usage("give --normals or --n and --m"))?;
    let m = a.m.or(ctx.file.m).ok_or_else(|| usage("give --normals or --n and --m"))?;
    let n = in_range("n", n, 2, MAX_DIM)?;
    let m = in_range("m", m, 1, 10_000)?;
    let mut rng = ctx.master().child("instance").rng();
    let inst = random_instance(n, m, &mut rng);
    let cone = inst.sample.cone()?;
    let source = json!({
        "kind": "random_instance",
        "n": n,
        "m": m,
        "stream": "instance",
        "target": inst.target,
        "normals": cone.normals(),
    });
    Ok(ResolvedCone { cone, source })
}

fn draw_cloud(ctx: &Context, cone: &PolyhedralCone, count: usize, iid: bool) -> Result<ConeCloud, Failure> {
    let opts = if iid { CapSampler::iid() } else { CapSampler::default() };
    Ok(sample_cone_cap(cone, count, &ctx.master().child("cloud"), opts)?)
}

fn cloud_summary(cloud: &ConeCloud) -> serde_json::Value {
    json!({
        "n_points": cloud.len(),
        "measure_estimate": cloud.measure_estimate,
        "attempts": cloud.attempts,
        "antithetic": cloud.antithetic,
        "stream": "cloud",
    })
}

fn count_of(flag: Option<usize>, file: Option<usize>, default: usize) -> Result<usize, Failure> {
    in_range("count", flag.or(file).unwrap_or(default), 1, MAX_POINTS)
}

fn cmd_sample(ctx: &Context, a: SampleArgs) -> Result<(), Failure> {
    let resolved = resolve_cone(ctx, &a.cone)?;
    let count = count_of(a.count, ctx.file.count, 10_000)?;
    let iid = a.iid || ctx.file.iid.unwrap_or(false);
    let cloud = draw_cloud(ctx, &resolved.cone, count, iid)?;
    let mut buf = Vec::new();
    cloud.write_csv(&mut buf).map_err(|e| Failure::Io(e.to_string()))?;
    ctx.emit(&String::from_utf8(buf).expect("csv is utf-8"))
}

fn cmd_psi(ctx: &Context, a: PsiArgs) -> Result<(), Failure> {
    let resolved = resolve_cone(ctx, &a.cone)?;
    let dim = resolved.cone.dim();
    let g = parse_g(a.g.as_deref(), ctx.file.g)?;
    let count = count_of(a.count, ctx.file.count, 10_000)?;
    let points: Vec<UnitVector> = match (&a.w, a.grid.or(ctx.file.grid)) {
        (Some(text), _) => parse_matrix(text, "--w")?
            .into_iter()
            .map(UnitVector::normalize)
            .collect::<crate::error::Result<_>>()?,
        (None, Some(k)) => {
            if dim != 2 {
                return Err(usage("--grid needs a cone in n = 2"));
            }
            let k = in_range("grid", k, 1, 1_000_000)?;
            (0..k)
                .map(|i| UnitVector::from_angle(std::f64::consts::TAU * i as f64 / k as f64))
                .collect()
        }
        (None, None) => match &ctx.file.w {
            Some(rows) => rows
                .iter()
                .cloned()
                .map(UnitVector::normalize)
                .collect::<crate::error::Result<_>>()?,
            None => return Err(usage("give --w or --grid")),
        },
    };
    if points.iter().any(|p| p.dim() != dim) {
        return Err(usage("evaluation points and cone differ in dimension"));
    }
    let cloud = draw_cloud(ctx, &resolved.cone, count, false)?;
    let arc = resolved.cone.arc_2d();
    let mut text = String::new();
    let coords: Vec<String> = (1..=dim).map(|i| format!("w{i}")).collect();
    text.push_str(&coords.join(","));
    if dim == 2 {
        text.push_str(",theta");
    }
    text.push_str(",value,scaled_value,std_error,scaled_std_error");
    if arc.is_some() {
        text.push_str(",exact");
    }
    text.push('\n');
    for w in &points {
        let est = psi_saa(w, &cloud, g)?;
        let cells: Vec<String> = w.as_slice().iter().map(|x| x.to_string()).collect();
        text.push_str(&cells.join(","));
        if dim == 2 {
            text.push_str(&format!(",{}", w.angle()));
        }
        text.push_str(&format!(
            ",{},{},{},{}",
            est.value, est.scaled_value, est.std_error, est.scaled_std_error
        ));
        if let Some(arc) = arc {
            text.push_str(&format!(",{}", psi_exact_2d(w.angle(), arc, g)?));
        }
        text.push('\n');
    }
    ctx.emit(&text)
}

#[derive(Serialize)]
struct BestOut<'a> {
    minimizer: &'a UnitVector,
    #[serde(skip_serializing_if = "Option::is_none")]
    angle: Option<f64>,
    psi_value: f64,
    scaled_psi_value: f64,
    iterations: usize,
    grad_norm: f64,
    converged: bool,
    multiplicity: usize,
}

fn cmd_optimize(ctx: &Context, a: OptimizeArgs) -> Result<(), Failure> {
    let resolved = resolve_cone(ctx, &a.cone)?;
    let g = parse_g(a.g.as_deref(), ctx.file.g)?;
    let count = count_of(a.count, ctx.file.count, 10_000)?;
    let starts = in_range("starts", a.starts.or(ctx.file.starts).unwrap_or(20), 2, 10_000)?;
    let radius = positive("radius", a.radius.or(ctx.file.radius).unwrap_or(DEFAULT_CLUSTER_RADIUS))?;
    let mut opts = OptOptions::default();
    opts.tol = positive("tol", a.tol.or(ctx.file.tol).unwrap_or(opts.tol))?;
    opts.max_iters = in_range("max_iters", a.max_iters.or(ctx.file.max_iters).unwrap_or(opts.max_iters), 1, 10_000_000)?;

    let cloud = draw_cloud(ctx, &resolved.cone, count, false)?;
    let report = multistart_minimize(&cloud, g, starts, &ctx.master().child("starts"), radius, &opts)?;
    let best = report.best();
    let run = report.best_run();
    let out = json!({
        "seed": ctx.seed,
        "g": g,
        "cone": resolved.source,
        "cloud": cloud_summary(&cloud),
        "best": BestOut {
            minimizer: &best.representative,
            angle: (best.representative.dim() == 2).then(|| best.representative.angle()),
            psi_value: best.psi_value,
            scaled_psi_value: best.psi_value * cloud.measure_estimate,
            iterations: run.iterations,
            grad_norm: run.grad_norm,
            converged: run.converged,
            multiplicity: best.multiplicity,
        },
        "clusters": report.clusters,
        "starts": report.starts,
        "converged_runs": report.converged_runs,
        "cluster_radius": report.cluster_radius,
        "streams": ["instance", "cloud", "starts"],
    });
    ctx.emit(&(serde_json::to_string_pretty(&out).expect("json") + "\n"))
}

fn parse_rules(text: &str, cloud_size: usize, starts: usize, max_epochs: usize) -> Result<Vec<LearningRule>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| match name {
            "optimal" => Ok(LearningRule::Optimal { cloud_size, n_starts: starts }),
            "spherical_centroid" => Ok(LearningRule::SphericalCentroid { cloud_size, n_starts: starts }),
            "euclidean_centroid" => Ok(LearningRule::EuclideanCentroid { cloud_size }),
            "perceptron" => Ok(LearningRule::Perceptron { max_epochs }),
            other => Err(usage(format!("unknown rule '{other}'"))),
        })
        .collect()
}

fn cmd_experiment(ctx: &Context, a: ExperimentArgs) -> Result<(), Failure> {
    let f = &ctx.file;
    let n = in_range("n", a.n.or(f.n).unwrap_or(3), 2, MAX_DIM)?;
    let m = in_range("m", a.m.or(f.m).unwrap_or(5), 1, 10_000)?;
    let trials = in_range("trials", a.trials.or(f.trials).unwrap_or(500), 1, 10_000_000)?;
    let cloud_size = in_range("cloud_size", a.cloud_size.or(f.cloud_size).unwrap_or(20_000), 1, MAX_POINTS)?;
    let starts = in_range("starts", a.starts.or(f.starts).unwrap_or(8), 1, 10_000)?;
    let max_epochs = in_range("max_epochs", a.max_epochs.or(f.max_epochs).unwrap_or(100_000), 1, usize::MAX)?;
    let rules = match (&a.rules, &f.rules) {
        (Some(text), _) => parse_rules(text, cloud_size, starts, max_epochs)?,
        (None, Some(rules)) => rules.clone(),
        (None, None) => parse_rules(
            "optimal,euclidean_centroid,spherical_centroid,perceptron",
            cloud_size,
            starts,
            max_epochs,
        )?,
    };
    let config = ExperimentConfig {
        n,
        m,
        trials,
        seed: ctx.seed,
        rules,
    };
    config.validate()?;
    let report = run_experiment(&config)?;
    let json_text = report.to_json() + "\n";
    if let Some(path) = &ctx.out {
        let mut csv = Vec::new();
        report.write_csv(&mut csv).map_err(|e| Failure::Io(e.to_string()))?;
        let csv_path = path.with_extension("csv");
        if csv_path == *path {
            return Err(usage("--out for experiment must not end in .csv"));
        }
        fs::write(&csv_path, csv).map_err(|e| Failure::Io(format!("{}: {e}", csv_path.display())))?;
    }
    ctx.emit(&json_text)
}

fn cmd_verify(ctx: &Context) -> Result<(), Failure> {
    let report = run_verify(ctx.seed);
    ctx.emit(&(report.to_json() + "\n"))?;
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Verify)
    }
}
