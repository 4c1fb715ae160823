//! Centralized reference solutions, per-round error metrics, decay-rate
//! fitting and the drift checks for the running-average optimum.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{consensus_gap, RoundTrace};
use crate::linalg::{axpy, dist2, dot, norm2, solve_spd, Matrix};
use crate::noise::LearnerNoise;
use crate::privacy::SensitivitySeries;
use crate::problem::{loss_grad, mean_of, DataPoint, LossModel, SampleBuffer, StreamProblem, StreamSource};
use crate::rng::{derive_seed, keyed_rng, Domain};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_SURROGATE_POINTS: usize = 1_000_000;
pub const GD_MAX_ITER: usize = 200_000;

/// How `F` is evaluated for the reference solution.
#[derive(Clone, Debug, PartialEq)]
pub enum Reference {
    /// Quadratic with Gaussian streams: `F(θ) − F(θ*) = ½‖θ − θ*‖²`.
    ClosedForm,
    /// Fixed per-learner samples; `F(θ) = (1/m) Σ_i mean_{p ∈ shard_i} l(θ, p)`.
    Sample(Vec<Vec<DataPoint>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub theta_star: Vec<f64>,
    /// `‖∇F(θ*)‖₂` on the reference.
    pub residual: f64,
    pub iterations: usize,
    /// Points in the frozen surrogate sample, 0 when exact.
    pub surrogate_points: usize,
    /// Optimum at zero loss gap, `F(θ*)` on the reference.
    pub objective: f64,
    pub reference: Reference,
}

impl OracleSolution {
    /// `F(θ) − F(θ*)` on the reference.
    pub fn loss_gap(&self, model: &LossModel, theta: &[f64]) -> Result<f64> {
        match &self.reference {
            Reference::ClosedForm => Ok(0.5 * dist2(theta, &self.theta_star).powi(2)),
            Reference::Sample(shards) => Ok(objective_and_grad(model, shards, theta)?.0 - self.objective),
        }
    }
}

/// `(1/m) Σ_i (1/|P_i|) Σ_{p ∈ P_i} (l, ∇l)` over fixed shards.
pub fn objective_and_grad(model: &LossModel, shards: &[Vec<DataPoint>], theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = theta.len();
    let m = shards.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = shards
        .par_iter()
        .map(|shard| {
            let w = 1.0 / (m * shard.len() as f64);
            let mut f = 0.0;
            let mut g = vec![0.0; n];
            for p in shard {
                let (l, gl) = loss_grad(model, theta, p)?;
                f += w * l;
                axpy(w, &gl, &mut g);
            }
            Ok((f, g))
        })
        .collect::<Result<_>>()?;
    let mut f = 0.0;
    let mut g = vec![0.0; n];
    for (fi, gi) in parts {
        f += fi;
        axpy(1.0, &gi, &mut g);
    }
    Ok((f, g))
}

/// Hessian of the shard objective for the regularised logistic loss.
fn logistic_hessian(reg: f64, shards: &[Vec<DataPoint>], theta: &[f64]) -> Matrix {
    let n = theta.len();
    let m = shards.len() as f64;
    let parts: Vec<Matrix> = shards
        .par_iter()
        .map(|shard| {
            let w = 1.0 / (m * shard.len() as f64);
            let mut h = Matrix::zeros(n, n);
            for p in shard {
                let s = 1.0 / (1.0 + (-p.y * dot(&p.x, theta)).exp());
                let c = w * s * (1.0 - s);
                for a in 0..n {
                    for b in 0..=a {
                        h[(a, b)] += c * p.x[a] * p.x[b];
                    }
                }
            }
            h
        })
        .collect();
    let mut h = Matrix::identity(n);
    for a in 0..n {
        h[(a, a)] *= reg;
    }
    for part in parts {
        for a in 0..n {
            for b in 0..=a {
                h[(a, b)] += part[(a, b)];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
    h
}

/// Damped Newton for the logistic objective. Once backtracking runs into
/// rounding, the full step is taken whenever it shrinks the gradient.
fn newton(
    reg: f64,
    model: &LossModel,
    shards: &[Vec<DataPoint>],
    init: Vec<f64>,
    tol: f64,
) -> Result<(Vec<f64>, f64, f64, usize)> {
    const MAX_NEWTON: usize = 200;
    let mut theta = init;
    let (mut f, mut g) = objective_and_grad(model, shards, &theta)?;
    for it in 0..MAX_NEWTON {
        let gn = norm2(&g);
        if gn < tol {
            return Ok((theta, gn, f, it));
        }
        let h = logistic_hessian(reg, shards, &theta);
        let d = solve_spd(&h, &g).ok_or(Error::NonConvergence { iterations: it, residual: gn })?;
        let slope = dot(&g, &d);
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = theta.iter().zip(&d).map(|(t, di)| t - step * di).collect();
            let (ft, gt) = objective_and_grad(model, shards, &trial)?;
            if ft <= f - 0.25 * step * slope || (step == 1.0 && norm2(&gt) < gn && ft <= f + 1e-14 * f.abs()) {
                theta = trial;
                f = ft;
                g = gt;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return Err(Error::NonConvergence { iterations: it, residual: gn });
            }
        }
    }
    let residual = norm2(&g);
    if residual < tol {
        Ok((theta, residual, f, MAX_NEWTON))
    } else {
        Err(Error::NonConvergence { iterations: MAX_NEWTON, residual })
    }
}

/// Minimises the shard objective to `‖∇F‖₂ < tol`: Newton for the logistic
/// loss, otherwise gradient descent with Armijo backtracking whose trial
/// step grows after every accepted step. Returns `(θ, ‖∇F‖₂, F, iterations)`.
pub fn minimize(
    model: &LossModel,
    shards: &[Vec<DataPoint>],
    init: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64, f64, usize)> {
    if let LossModel::LogisticL2 { reg } = *model {
        return newton(reg, model, shards, init, tol);
    }
    let mut theta = init;
    let (mut f, mut g) = objective_and_grad(model, shards, &theta)?;
    let mut step = 1.0;
    for it in 0..max_iter {
        let gn = norm2(&g);
        if gn < tol {
            return Ok((theta, gn, f, it));
        }
        loop {
            let trial: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let (ft, gt) = objective_and_grad(model, shards, &trial)?;
            if ft <= f - 0.5 * step * gn * gn {
                theta = trial;
                f = ft;
                g = gt;
                break;
            }
            step *= 0.5;
            // No descent left at rounding level.
            if step < 1e-20 {
                return if gn < tol {
                    Ok((theta, gn, f, it))
                } else {
                    Err(Error::NonConvergence { iterations: it, residual: gn })
                };
            }
        }
        step *= 2.0;
    }
    let residual = norm2(&g);
    if residual < tol {
        Ok((theta, residual, f, max_iter))
    } else {
        Err(Error::NonConvergence { iterations: max_iter, residual })
    }
}

/// Frozen surrogate sample for the population objective: `points / m` fresh
/// draws per learner from a stream key disjoint from the run's.
pub fn surrogate_sample(problem: &StreamProblem, points: usize) -> Vec<Vec<DataPoint>> {
    let m = problem.m();
    let per = (points / m.max(1)).max(1);
    (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = keyed_rng(problem.seed, Domain::MonteCarlo, &[u64::MAX, i as u64]);
            (0..per).map(|_| problem.draw(i, &mut rng)).collect()
        })
        .collect()
}

/// `θ* = argmin F`: closed form for quadratic streams, full-data descent for
/// dataset-backed problems and descent on a frozen surrogate otherwise.
pub fn solve_centralized(problem: &StreamProblem, surrogate_points: usize, tol: f64) -> Result<OracleSolution> {
    if let Some(theta_star) = problem.closed_form_optimum() {
        return Ok(OracleSolution {
            theta_star,
            residual: 0.0,
            iterations: 0,
            surrogate_points: 0,
            objective: 0.0,
            reference: Reference::ClosedForm,
        });
    }
    let (shards, surrogate) = match &problem.source {
        StreamSource::Dataset { shards } => (shards.clone(), 0),
        _ => {
            let s = surrogate_sample(problem, surrogate_points);
            let total = s.iter().map(Vec::len).sum();
            (s, total)
        }
    };
    let (theta_star, residual, objective, iterations) =
        minimize(&problem.model, &shards, vec![0.0; problem.dim], tol, GD_MAX_ITER)?;
    Ok(OracleSolution {
        theta_star,
        residual,
        iterations,
        surrogate_points: surrogate,
        objective,
        reference: Reference::Sample(shards),
    })
}

/// Minimiser of `F_t` on the buffered points `0..=t` of every learner.
pub fn solve_running(problem: &StreamProblem, buffer: &SampleBuffer, t: usize, tol: f64) -> Result<Vec<f64>> {
    if buffer.len() < t + 1 {
        return Err(Error::InvalidParameter(format!("buffer holds {} rounds, need {}", buffer.len(), t + 1)));
    }
    let m = problem.m();
    if problem.model == LossModel::Quadratic {
        let means: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let xs: Vec<Vec<f64>> = buffer.points(i)[..=t].iter().map(|p| p.x.clone()).collect();
                mean_of(&xs, problem.dim)
            })
            .collect();
        return Ok(mean_of(&means, problem.dim));
    }
    let shards: Vec<Vec<DataPoint>> = (0..m).map(|i| buffer.points(i)[..=t].to_vec()).collect();
    Ok(minimize(&problem.model, &shards, vec![0.0; problem.dim], tol, GD_MAX_ITER)?.0)
}

/// Same problem with an independent stream for repetition `rep`.
pub fn reseeded(problem: &StreamProblem, rep: usize) -> StreamProblem {
    StreamProblem { seed: derive_seed(problem.seed, Domain::Repetition, &[rep as u64]), ..problem.clone() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub t: usize,
    /// Monte-Carlo `E‖θ*_{t+1} − θ*_t‖²` and its standard error.
    pub step_mean: f64,
    pub step_se: f64,
    /// `16(κ² + D²)(2/μ² + 1/L²)(t+1)^{−2}`.
    pub step_bound: f64,
    /// Monte-Carlo `E‖θ*_t − θ*‖²` and its standard error.
    pub gap_mean: f64,
    pub gap_se: f64,
    /// `4κ²/μ² (t+1)^{−1}`.
    pub gap_bound: f64,
}

impl DriftPoint {
    /// Both bounds hold within two standard errors.
    pub fn holds(&self) -> bool {
        self.step_mean - 2.0 * self.step_se <= self.step_bound && self.gap_mean - 2.0 * self.gap_se <= self.gap_bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub kappa: f64,
    pub mu: f64,
    pub lipschitz: f64,
    pub d: f64,
    pub repetitions: usize,
    pub points: Vec<DriftPoint>,
}

impl DriftReport {
    pub fn holds(&self) -> bool {
        self.points.iter().all(DriftPoint::holds)
    }
}

pub fn drift_step_bound(kappa: f64, d: f64, mu: f64, l: f64, t: usize) -> f64 {
    16.0 * (kappa * kappa + d * d) * (2.0 / (mu * mu) + 1.0 / (l * l)) / ((t + 1) as f64).powi(2)
}

pub fn drift_gap_bound(kappa: f64, mu: f64, t: usize) -> f64 {
    4.0 * kappa * kappa / (mu * mu) / (t + 1) as f64
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo estimates of both drift quantities at each checkpoint over
/// independent stream seeds, against their analytic bounds.
pub fn drift_check(
    problem: &StreamProblem,
    checkpoints: &[usize],
    repetitions: usize,
    tol: f64,
) -> Result<DriftReport> {
    let k = problem.constants();
    let kappa = k.kappa.ok_or_else(|| Error::InvalidParameter("drift check needs a problem with known κ".into()))?;
    let d = k.grad_bound.unwrap_or(0.0);
    if repetitions == 0 {
        return Err(Error::InvalidParameter("drift check needs at least one repetition".into()));
    }
    let oracle = solve_centralized(problem, DEFAULT_SURROGATE_POINTS, tol)?;
    let horizon = checkpoints.iter().copied().max().unwrap_or(0);
    let samples: Vec<Vec<(f64, f64)>> = (0..repetitions)
        .into_par_iter()
        .map(|r| {
            let p = reseeded(problem, r);
            let mut buf = SampleBuffer::new(p.m(), p.dim);
            for _ in 0..horizon + 2 {
                buf.append_round(&p);
            }
            checkpoints
                .iter()
                .map(|&t| {
                    let a = solve_running(&p, &buf, t, tol)?;
                    let b = solve_running(&p, &buf, t + 1, tol)?;
                    Ok((dist2(&a, &b).powi(2), dist2(&a, &oracle.theta_star).powi(2)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let points = checkpoints
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let steps: Vec<f64> = samples.iter().map(|s| s[c].0).collect();
            let gaps: Vec<f64> = samples.iter().map(|s| s[c].1).collect();
            let (step_mean, step_se) = mean_se(&steps);
            let (gap_mean, gap_se) = mean_se(&gaps);
            DriftPoint {
                t,
                step_mean,
                step_se,
                step_bound: drift_step_bound(kappa, d, k.mu, k.lipschitz, t),
                gap_mean,
                gap_se,
                gap_bound: drift_gap_bound(kappa, k.mu, t),
            }
        })
        .collect();
    Ok(DriftReport { kappa, mu: k.mu, lipschitz: k.lipschitz, d, repetitions, points })
}

/// Number of log-spaced points used by [`fit_decay_rate`].
pub const DECAY_FIT_POINTS: usize = 64;

/// `β̂ = −slope` of `ln metric` against `ln t`, fitted on log-spaced rounds
/// (`t ≥ 1`) in the last `window` fraction of log-time.
pub fn fit_decay_rate(rounds: &[usize], values: &[f64], window: f64) -> Result<f64> {
    if rounds.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: rounds.len(), got: values.len() });
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::InvalidParameter(format!("window must lie in (0, 1], got {window}")));
    }
    let pts: Vec<(usize, f64)> = rounds.iter().copied().zip(values.iter().copied()).filter(|&(t, _)| t >= 1).collect();
    if pts.len() < 2 {
        return Err(Error::InvalidParameter("need at least two rounds with t ≥ 1".into()));
    }
    let lo = (pts[0].0 as f64).ln();
    let hi = (pts[pts.len() - 1].0 as f64).ln();
    let cut = hi - window * (hi - lo);
    let mut chosen: Vec<usize> = Vec::new();
    for k in 0..DECAY_FIT_POINTS {
        let target = lo + (hi - lo) * k as f64 / (DECAY_FIT_POINTS - 1) as f64;
        let idx = pts.partition_point(|&(t, _)| (t as f64).ln() < target).min(pts.len() - 1);
        // Pick whichever neighbour is closer in log-time.
        let idx =
            if idx > 0 && (target - (pts[idx - 1].0 as f64).ln()).abs() < ((pts[idx].0 as f64).ln() - target).abs() {
                idx - 1
            } else {
                idx
            };
        if chosen.last() != Some(&idx) {
            chosen.push(idx);
        }
    }
    let mut fit = Vec::new();
    for idx in chosen {
        let (t, v) = pts[idx];
        let lt = (t as f64).ln();
        if lt + 1e-12 < cut {
            continue;
        }
        if !(v > 0.0) {
            return Err(Error::InvalidParameter(format!("nonpositive metric {v} at round {t}")));
        }
        fit.push((lt, v.ln()));
    }
    if fit.len() < 2 {
        return Err(Error::InvalidParameter("fewer than two points in the fit window".into()));
    }
    Ok(-crate::graph::least_squares(&fit).0)
}

/// `min{v + ½ − α, 2 − v − α, 2ς_ϑ − α, 2ς_ζ − α}` at `α = v + 0.01`.
pub fn beta_theory(v: f64, varsigma_theta: f64, varsigma_zeta: f64) -> f64 {
    let alpha = v + 0.01;
    (v + 0.5 - alpha).min(2.0 - v - alpha).min(2.0 * varsigma_theta - alpha).min(2.0 * varsigma_zeta - alpha)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub round: usize,
    pub avg_tracking_error: f64,
    pub avg_loss_gap: f64,
    pub consensus_gap: f64,
    pub eps_s_max: Option<f64>,
    pub eps_theta_max: Option<f64>,
}

/// Running maxima over learners of `ε_s(t)` and `ε_θ(t)` for `t = 0..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetTrajectory {
    pub eps_s_max: Vec<f64>,
    pub eps_theta_max: Vec<f64>,
}

pub fn budget_trajectory(series: &SensitivitySeries, noise: &[LearnerNoise]) -> BudgetTrajectory {
    let horizon = series.horizon();
    let mut eps_s = vec![0.0; noise.len()];
    let mut eps_th = vec![0.0; noise.len()];
    let mut out = BudgetTrajectory { eps_s_max: vec![0.0; horizon + 1], eps_theta_max: vec![0.0; horizon + 1] };
    let term = |rho: f64, sigma0: f64, varsigma: f64, t: usize| {
        let num = std::f64::consts::SQRT_2 * rho * ((t + 1) as f64).powf(varsigma);
        if sigma0 > 0.0 {
            num / sigma0
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    for t in 1..=horizon {
        for (i, n) in noise.iter().enumerate() {
            eps_s[i] += term(series.rho_s[t], n.zeta.sigma0, n.zeta.varsigma, t);
            eps_th[i] += term(series.rho_theta[i][t], n.theta.sigma0, n.theta.varsigma, t);
        }
        out.eps_s_max[t] = eps_s.iter().copied().fold(0.0, f64::max);
        out.eps_theta_max[t] = eps_th.iter().copied().fold(0.0, f64::max);
    }
    out
}

/// One row per recorded round.
pub fn metric_rows(
    trace: &RoundTrace,
    problem: &StreamProblem,
    oracle: &OracleSolution,
    budget: Option<&BudgetTrajectory>,
) -> Result<Vec<MetricRow>> {
    trace
        .records
        .iter()
        .map(|rec| {
            let m = rec.theta.len() as f64;
            let mut err = 0.0;
            let mut gap = 0.0;
            for th in &rec.theta {
                err += dist2(th, &oracle.theta_star) / m;
                gap += oracle.loss_gap(&problem.model, th)? / m;
            }
            let eps = budget.and_then(|b| b.eps_s_max.get(rec.round).map(|&s| (s, b.eps_theta_max[rec.round])));
            Ok(MetricRow {
                round: rec.round,
                avg_tracking_error: err,
                avg_loss_gap: gap,
                consensus_gap: consensus_gap(&rec.theta),
                eps_s_max: eps.map(|e| e.0),
                eps_theta_max: eps.map(|e| e.1),
            })
        })
        .collect()
}

/// Element-wise mean of per-repetition rows, folded in repetition order.
pub fn average_rows(reps: &[Vec<MetricRow>]) -> Result<Vec<MetricRow>> {
    let Some(first) = reps.first() else { return Ok(Vec::new()) };
    if reps.iter().any(|r| r.len() != first.len()) {
        return Err(Error::TraceShape("repetitions recorded different numbers of rounds".into()));
    }
    let k = reps.len() as f64;
    Ok((0..first.len())
        .map(|j| {
            let mut row = MetricRow {
                round: first[j].round,
                avg_tracking_error: 0.0,
                avg_loss_gap: 0.0,
                consensus_gap: 0.0,
                eps_s_max: first[j].eps_s_max,
                eps_theta_max: first[j].eps_theta_max,
            };
            for r in reps {
                row.avg_tracking_error += r[j].avg_tracking_error / k;
                row.avg_loss_gap += r[j].avg_loss_gap / k;
                row.consensus_gap += r[j].consensus_gap / k;
            }
            row
        })
        .collect())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv { path: path.to_path_buf(), source })
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Metrics CSV with columns `round, avg_tracking_error, avg_loss_gap,
/// consensus_gap, eps_s_max, eps_theta_max`.
pub fn emit_metrics(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    if rows.is_empty() {
        w.write_record(["round", "avg_tracking_error", "avg_loss_gap", "consensus_gap", "eps_s_max", "eps_theta_max"])
            .map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    }
    for r in rows {
        w.serialize(r).map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    }
    finish(w, path)
}

/// Per-agent trace CSV: `round, agent, theta_0..theta_{n−1}, tracking_error, consensus_gap`.
pub fn emit_trace(trace: &RoundTrace, theta_star: &[f64], path: &Path) -> Result<()> {
    let cerr = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv_writer(path)?;
    let n = theta_star.len();
    let mut header = vec!["round".to_string(), "agent".to_string()];
    header.extend((0..n).map(|j| format!("theta_{j}")));
    header.extend(["tracking_error".to_string(), "consensus_gap".to_string()]);
    w.write_record(&header).map_err(cerr)?;
    for rec in &trace.records {
        let gap = consensus_gap(&rec.theta);
        for (i, th) in rec.theta.iter().enumerate() {
            let mut row = vec![rec.round.to_string(), i.to_string()];
            row.extend(th.iter().map(|v| v.to_string()));
            row.push(dist2(th, theta_star).to_string());
            row.push(gap.to_string());
            w.write_record(&row).map_err(cerr)?;
        }
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_optimum_is_mean() {
        let p = StreamProblem::quadratic_with_means(vec![vec![1.0, 0.0], vec![3.0, 2.0]], 0.0, 1);
        let o = solve_centralized(&p, 10, DEFAULT_TOL).unwrap();
        assert_eq!(o.theta_star, vec![2.0, 1.0]);
        assert_eq!(o.loss_gap(&p.model, &[2.0, 3.0]).unwrap(), 2.0);
    }

    #[test]
    fn running_optimum_is_buffer_mean() {
        let p = StreamProblem::quadratic(3, 2, 1.0, 1.0, 4);
        let mut buf = SampleBuffer::new(3, 2);
        for _ in 0..5 {
            buf.append_round(&p);
        }
        let got = solve_running(&p, &buf, 4, DEFAULT_TOL).unwrap();
        let all: Vec<Vec<f64>> = (0..3).flat_map(|i| buf.points(i).iter().map(|q| q.x.clone())).collect();
        let want = mean_of(&all, 2);
        assert!(dist2(&got, &want) < 1e-14);
    }

    #[test]
    fn exact_power_law_and_constant() {
        let rounds: Vec<usize> = (0..=5000).collect();
        let pl: Vec<f64> = rounds.iter().map(|&t| (t.max(1) as f64).powf(-0.7)).collect();
        assert!((fit_decay_rate(&rounds, &pl, 0.5).unwrap() - 0.7).abs() < 1e-6);
        let c = vec![3.0; rounds.len()];
        assert!(fit_decay_rate(&rounds, &c, 0.5).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nonpositive_in_window_is_an_error() {
        let rounds: Vec<usize> = (0..100).collect();
        let mut v = vec![1.0; 100];
        v[99] = 0.0;
        assert!(fit_decay_rate(&rounds, &v, 0.5).is_err());
    }

    #[test]
    fn drift_bounds_at_zero() {
        assert_eq!(drift_gap_bound(2.0, 1.0, 0), 16.0);
        assert_eq!(drift_step_bound(1.0, 0.0, 1.0, 1.0, 0), 48.0);
    }

    #[test]
    fn deterministic_streams_have_no_drift() {
        let p = StreamProblem::quadratic(4, 2, 0.0, 1.0, 2);
        let r = drift_check(&p, &[0, 5, 10], 3, DEFAULT_TOL).unwrap();
        for pt in &r.points {
            assert!(pt.step_mean < 1e-28 && pt.gap_mean < 1e-28);
        }
    }
}
