//! Retracted gradient descent on S^{n-1} with Armijo backtracking, and a
//! multistart driver that clusters the endpoints to expose every local
//! minimum it finds.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::psi::{mean_value, value_and_gradient, GKind, DEFAULT_CLAMP};
use crate::sampling::{sample_sphere, ConeCloud};
use crate::sphere::{geodesic_distance, UnitVector};
use crate::streams::SeedStream;

pub const DEFAULT_CLUSTER_RADIUS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptOptions {
    pub max_iters: usize,
    /// Converged once the Riemannian gradient norm drops below this.
    pub tol: f64,
    pub clamp: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    /// Step tried on the first iteration.
    pub initial_step: f64,
    /// Later iterations first try the Barzilai-Borwein step <s,s>/<s,y>
    /// from the last move; when that curvature estimate is not positive,
    /// `growth` times the previously accepted step. Both capped at `max_step`.
    pub growth: f64,
    pub max_step: f64,
    /// A trial step shorter than this (in arc length) counts as a stall.
    pub min_step: f64,
    pub record_trace: bool,
}

impl Default for OptOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol: 1e-8,
            clamp: DEFAULT_CLAMP,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            growth: 2.0,
            max_step: 16.0,
            min_step: 1e-14,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    StepStalled,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub psi: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptResult {
    pub minimizer: UnitVector,
    /// Sample-average objective at the minimizer (unscaled).
    pub psi_value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// True only when the gradient tolerance was met.
    pub converged: bool,
    pub termination: Termination,
    /// Gradient terms dropped at the final point.
    pub dropped_terms: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRow>>,
}

impl OptResult {
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,psi,grad_norm")?;
        for row in self.trace.iter().flatten() {
            writeln!(out, "{},{},{}", row.iter, row.psi, row.grad_norm)?;
        }
        Ok(())
    }
}

pub fn minimize_from(
    start: &UnitVector,
    cloud: &ConeCloud,
    g: GKind,
    opts: &OptOptions,
) -> Result<OptResult> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput("empty cloud".into()));
    }
    if start.dim() != cloud.dim() {
        return Err(Error::InvalidInput("start and cloud dimensions differ".into()));
    }
    if opts.max_iters == 0 {
        return Err(Error::InvalidInput("max_iters must be >= 1".into()));
    }

    let mut w = start.clone();
    let (mut f, mut grad) = value_and_gradient(&w, cloud, g, opts.clamp);
    let mut trace = opts.record_trace.then(Vec::new);
    let mut step = opts.initial_step;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let gn = grad.norm();
        if let Some(t) = trace.as_mut() {
            t.push(TraceRow {
                iter: iterations,
                psi: f,
                grad_norm: gn,
            });
        }
        if gn < opts.tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut eta = step;
        let accepted = loop {
            if eta * gn < opts.min_step {
                break None;
            }
            let delta: Vec<f64> = grad.tangent.iter().map(|d| -eta * d).collect();
            let cand = w.retract(&delta)?;
            let fc = mean_value(cand.as_slice(), cloud, g);
            if fc <= f - opts.armijo_c1 * eta * gn * gn && fc < f {
                break Some(cand);
            }
            eta *= opts.backtrack;
        };
        let Some(next) = accepted else {
            termination = Termination::StepStalled;
            break;
        };
        let prev_w = std::mem::replace(&mut w, next);
        let prev_grad = std::mem::take(&mut grad.tangent);
        (f, grad) = value_and_gradient(&w, cloud, g, opts.clamp);
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..w.dim() {
            let si = w.as_slice()[i] - prev_w.as_slice()[i];
            ss += si * si;
            sy += si * (grad.tangent[i] - prev_grad[i]);
        }
        step = if sy > 0.0 { ss / sy } else { eta * opts.growth }.min(opts.max_step);
        iterations += 1;
    }

    if g == GKind::Identity && w.dim() == 2 {
        if let Some(cand) = flat_arc_midpoint(&w, cloud) {
            let (fc, gc) = value_and_gradient(&cand, cloud, g, opts.clamp);
            let keeps_status = termination != Termination::GradientTolerance || gc.norm() < opts.tol;
            if fc <= f + 1e-12 * f.abs().max(1e-300) && keeps_status {
                (w, f, grad) = (cand, fc, gc);
            }
        }
    }

    // The objective of an antithetic cloud is invariant under reflection
    // through its symmetry span, so projecting onto the span keeps a
    // minimizer a minimizer; this picks the symmetric point when the
    // empirical minimum is a flat set (e.g. the 1-D median interval).
    if let Some(basis) = &cloud.symmetry_span {
        let mut p = vec![0.0; w.dim()];
        for e in basis {
            let c = crate::sphere::dot(w.as_slice(), e);
            p.iter_mut().zip(e).for_each(|(x, ei)| *x += c * ei);
        }
        if let Ok(cand) = UnitVector::normalize(p) {
            let (fc, gc) = value_and_gradient(&cand, cloud, g, opts.clamp);
            let keeps_status = termination != Termination::GradientTolerance || gc.norm() < opts.tol;
            // Equal in exact arithmetic on a flat minimum; allow rounding.
            if fc <= f + 1e-12 * f.abs().max(1e-300) && keeps_status {
                (w, f, grad) = (cand, fc, gc);
            }
        }
    }

    let grad_norm = grad.norm();
    if termination != Termination::GradientTolerance && grad_norm < opts.tol {
        termination = Termination::GradientTolerance;
    }
    Ok(OptResult {
        minimizer: w,
        psi_value: f,
        iterations,
        grad_norm,
        converged: termination == Termination::GradientTolerance,
        termination,
        dropped_terms: grad.dropped,
        trace,
    })
}

/// On the circle the mean geodesic distance is piecewise linear, with kinks
/// at the cloud points and their antipodes, so its minimum can be a whole arc
/// between two kinks. Returns the middle of the kink-free arc around `w`,
/// which is the canonical (isometry-equivariant) choice on such an arc.
fn flat_arc_midpoint(w: &UnitVector, cloud: &ConeCloud) -> Option<UnitVector> {
    use std::f64::consts::{PI, TAU};
    let theta = w.angle();
    let (mut below, mut above) = (-PI, PI);
    for y in cloud.iter() {
        let phi = y[1].atan2(y[0]);
        for kink in [phi, phi + PI] {
            let d = (kink - theta + PI).rem_euclid(TAU) - PI;
            if d == 0.0 {
                return None;
            }
            if d < 0.0 {
                below = below.max(d);
            } else {
                above = above.min(d);
            }
        }
    }
    Some(UnitVector::from_angle(theta + 0.5 * (below + above)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    pub representative: UnitVector,
    pub psi_value: f64,
    pub multiplicity: usize,
    /// Index of the start whose endpoint represents the cluster.
    pub start_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimaReport {
    /// Sorted by psi_value, ties by start index.
    pub clusters: Vec<Cluster>,
    pub starts: usize,
    pub converged_runs: usize,
    pub cluster_radius: f64,
    pub runs: Vec<OptResult>,
}

impl MinimaReport {
    pub fn best(&self) -> &Cluster {
        &self.clusters[0]
    }

    /// The run that produced the best cluster's representative.
    pub fn best_run(&self) -> &OptResult {
        &self.runs[self.best().start_index]
    }
}

/// Runs `minimize_from` from each start (in parallel) and clusters endpoints
/// greedily in start order: an endpoint joins the first cluster whose
/// representative lies within `cluster_radius`.
pub fn multistart_from(
    starts: &[UnitVector],
    cloud: &ConeCloud,
    g: GKind,
    cluster_radius: f64,
    opts: &OptOptions,
) -> Result<MinimaReport> {
    if starts.is_empty() {
        return Err(Error::InvalidInput("need at least one start".into()));
    }
    if !(cluster_radius > 0.0) {
        return Err(Error::InvalidInput("cluster radius must be positive".into()));
    }
    let runs: Vec<OptResult> = starts
        .par_iter()
        .map(|s| minimize_from(s, cloud, g, opts))
        .collect::<Result<_>>()?;

    let mut clusters: Vec<Cluster> = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        match clusters
            .iter_mut()
            .find(|c| geodesic_distance(&c.representative, &run.minimizer) <= cluster_radius)
        {
            Some(c) => c.multiplicity += 1,
            None => clusters.push(Cluster {
                representative: run.minimizer.clone(),
                psi_value: run.psi_value,
                multiplicity: 1,
                start_index: i,
            }),
        }
    }
    clusters.sort_by(|a, b| {
        a.psi_value
            .total_cmp(&b.psi_value)
            .then(a.start_index.cmp(&b.start_index))
    });
    Ok(MinimaReport {
        converged_runs: runs.iter().filter(|r| r.converged).count(),
        clusters,
        starts: starts.len(),
        cluster_radius,
        runs,
    })
}

/// Multistart from `n_starts` uniform starts drawn from `stream`.
pub fn multistart_minimize(
    cloud: &ConeCloud,
    g: GKind,
    n_starts: usize,
    stream: &SeedStream,
    cluster_radius: f64,
    opts: &OptOptions,
) -> Result<MinimaReport> {
    if n_starts < 2 {
        return Err(Error::InvalidInput("multistart needs at least two starts".into()));
    }
    let starts = sample_sphere(cloud.dim(), n_starts, stream)?;
    multistart_from(&starts, cloud, g, cluster_radius, opts)
}
