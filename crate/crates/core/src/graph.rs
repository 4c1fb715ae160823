//! Directed interaction matrices, their validation, Perron vectors and the
//! distributed left-eigenvector estimator.
//!
//! `R` mixes model parameters (pull, row sums zero) and `C` mixes tracking
//! variables (push, column sums zero). The stochastic matrices used by the
//! algorithms are `I + R` and `I + C`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, Matrix};
use crate::rng::{keyed_rng, Domain};

/// Absolute tolerance for the zero row/column sum conditions.
pub const SUM_TOL: f64 = 1e-12;

/// Upper bound on the off-diagonal row mass used by the random generator.
pub const RANDOM_ROW_MASS: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectedWeights {
    r: Matrix,
    c: Matrix,
}

impl DirectedWeights {
    /// Wraps a pair of matrices without checking the weight conditions;
    /// use [`validate_weights`] for that. Only shapes are checked here.
    pub fn from_matrices(r: Matrix, c: Matrix) -> Result<Self> {
        let m = r.rows();
        if r.cols() != m || c.rows() != m || c.cols() != m || m == 0 {
            return Err(Error::InvalidParameter(format!(
                "weight matrices must be square and equal-sized (R is {}x{}, C is {}x{})",
                r.rows(),
                r.cols(),
                c.rows(),
                c.cols()
            )));
        }
        Ok(DirectedWeights { r, c })
    }

    /// `C = Rᵀ`, the default pairing.
    pub fn from_r(r: Matrix) -> Result<Self> {
        let c = r.transpose();
        Self::from_matrices(r, c)
    }

    pub fn m(&self) -> usize {
        self.r.rows()
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    /// In-neighbours of `i` in the graph induced by `w`: `{j ≠ i : w_ij > 0}`.
    pub fn in_neighbors(w: &Matrix, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        w.row(i).iter().enumerate().filter(move |&(j, &v)| j != i && v > 0.0).map(|(j, &v)| (j, v))
    }

    /// `min_i |R_ii|`.
    pub fn min_abs_diag_r(&self) -> f64 {
        min_abs_diag(&self.r)
    }

    /// `min_i |C_ii|`.
    pub fn min_abs_diag_c(&self) -> f64 {
        min_abs_diag(&self.c)
    }
}

fn min_abs_diag(w: &Matrix) -> f64 {
    (0..w.rows()).map(|i| w[(i, i)].abs()).fold(f64::INFINITY, f64::min)
}

/// Directed cycle where agent `i` pulls from `i-1 (mod m)` with weight `a`.
pub fn build_ring(m: usize, a: f64) -> Result<DirectedWeights> {
    if m == 0 {
        return Err(Error::InvalidParameter("agent count must be positive".into()));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::InvalidParameter(format!("ring weight {a} not in (0, 1)")));
    }
    let mut r = Matrix::zeros(m, m);
    if m > 1 {
        for i in 0..m {
            let prev = (i + m - 1) % m;
            r[(i, prev)] = a;
            r[(i, i)] = -a;
        }
    }
    DirectedWeights::from_r(r)
}

/// Random directed graph with a superimposed ring, uniform in-weights
/// `RANDOM_ROW_MASS / in_degree(i)`, diagonals per the zero-row-sum rule and
/// `C = Rᵀ`. Deterministic in `seed`.
pub fn build_random_strongly_connected(m: usize, density: f64, seed: u64) -> Result<DirectedWeights> {
    if m < 2 {
        return Err(Error::InvalidParameter("random topology needs at least 2 agents".into()));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidParameter(format!("edge density {density} not in (0, 1]")));
    }
    let mut rng = keyed_rng(seed, Domain::Topology, &[m as u64]);
    let mut adj = vec![vec![false; m]; m];
    for (i, row) in adj.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            if i != j && rng.random::<f64>() < density {
                *cell = true;
            }
        }
        row[(i + m - 1) % m] = true;
    }
    let mut r = Matrix::zeros(m, m);
    for i in 0..m {
        let deg = adj[i].iter().filter(|&&e| e).count();
        let w = RANDOM_ROW_MASS / deg as f64;
        let mut mass = 0.0;
        for j in 0..m {
            if adj[i][j] {
                r[(i, j)] = w;
                mass += w;
            }
        }
        r[(i, i)] = -mass;
    }
    DirectedWeights::from_r(r)
}

/// A violated weight condition.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightViolation {
    NonFinite,
    NegativeOffDiagonal { matrix: char, i: usize, j: usize, value: f64 },
    RowSumNonzero { i: usize, sum: f64 },
    ColSumNonzero { j: usize, sum: f64 },
    DiagonalTooLarge { matrix: char, i: usize, value: f64 },
    NotStronglyConnected { components: usize },
    NoSpanningTree,
}

impl fmt::Display for WeightViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightViolation::NonFinite => write!(f, "non-finite weight entry"),
            WeightViolation::NegativeOffDiagonal { matrix, i, j, value } => {
                write!(f, "negative off-diagonal {matrix}[{i}][{j}] = {value}")
            }
            WeightViolation::RowSumNonzero { i, sum } => {
                write!(f, "R row {i} sums to {sum:e}, expected 0")
            }
            WeightViolation::ColSumNonzero { j, sum } => {
                write!(f, "C column {j} sums to {sum:e}, expected 0")
            }
            WeightViolation::DiagonalTooLarge { matrix, i, value } => {
                write!(f, "1 + {matrix}[{i}][{i}] = {} is not positive", 1.0 + value)
            }
            WeightViolation::NotStronglyConnected { components } => {
                write!(f, "G_R not strongly connected ({components} components)")
            }
            WeightViolation::NoSpanningTree => write!(f, "G_C^T contains no spanning tree"),
        }
    }
}

/// Checks every weight condition; an empty list means the pair is usable.
pub fn validate_weights(w: &DirectedWeights) -> Vec<WeightViolation> {
    let m = w.m();
    let mut out = Vec::new();
    let all_finite = (0..m).all(|i| w.r.row(i).iter().chain(w.c.row(i)).all(|v| v.is_finite()));
    if !all_finite {
        out.push(WeightViolation::NonFinite);
        return out;
    }
    for (name, mat) in [('R', &w.r), ('C', &w.c)] {
        for i in 0..m {
            for j in 0..m {
                if i != j && mat[(i, j)] < 0.0 {
                    out.push(WeightViolation::NegativeOffDiagonal { matrix: name, i, j, value: mat[(i, j)] });
                }
            }
            if 1.0 + mat[(i, i)] <= 0.0 {
                out.push(WeightViolation::DiagonalTooLarge { matrix: name, i, value: mat[(i, i)] });
            }
        }
    }
    for (i, sum) in w.r.row_sums().into_iter().enumerate() {
        if sum.abs() > SUM_TOL {
            out.push(WeightViolation::RowSumNonzero { i, sum });
        }
    }
    for (j, sum) in w.c.col_sums().into_iter().enumerate() {
        if sum.abs() > SUM_TOL {
            out.push(WeightViolation::ColSumNonzero { j, sum });
        }
    }
    let components = strongly_connected_components(&induced_edges(&w.r)).len();
    if components != 1 {
        out.push(WeightViolation::NotStronglyConnected { components });
    }
    if !has_spanning_tree(&induced_edges(&w.c.transpose())) {
        out.push(WeightViolation::NoSpanningTree);
    }
    out
}

/// Adjacency lists of the induced graph: `(i, j)` is an edge iff `w_ij > 0`, `i ≠ j`.
pub fn induced_edges(w: &Matrix) -> Vec<Vec<usize>> {
    (0..w.rows()).map(|i| (0..w.cols()).filter(|&j| j != i && w[(i, j)] > 0.0).collect()).collect()
}

/// Tarjan's algorithm; components are returned in reverse topological order.
pub fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    struct State<'a> {
        adj: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        out: Vec<Vec<usize>>,
    }

    fn visit(s: &mut State<'_>, v: usize) {
        s.index[v] = Some(s.next);
        s.low[v] = s.next;
        s.next += 1;
        s.stack.push(v);
        s.on_stack[v] = true;
        for &w in &s.adj[v] {
            match s.index[w] {
                None => {
                    visit(s, w);
                    s.low[v] = s.low[v].min(s.low[w]);
                }
                Some(iw) if s.on_stack[w] => s.low[v] = s.low[v].min(iw),
                _ => {}
            }
        }
        if Some(s.low[v]) == s.index[v] {
            let mut comp = Vec::new();
            while let Some(w) = s.stack.pop() {
                s.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            s.out.push(comp);
        }
    }

    let n = adj.len();
    let mut s = State {
        adj,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for v in 0..n {
        if s.index[v].is_none() {
            visit(&mut s, v);
        }
    }
    s.out
}

/// True if some root reaches every vertex along directed edges.
pub fn has_spanning_tree(adj: &[Vec<usize>]) -> bool {
    let n = adj.len();
    (0..n).any(|root| {
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        seen[root] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerronVectors {
    /// Left eigenvector of `I + R`, normalised to sum `m`.
    pub u: Vec<f64>,
    /// Right eigenvector of `I + C`, normalised to sum `m`.
    pub omega: Vec<f64>,
}

impl PerronVectors {
    pub fn u_min(&self) -> f64 {
        self.u.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub const PERRON_TOL: f64 = 1e-13;
pub const PERRON_MAX_ITER: usize = 100_000;

fn power_iterate(step: impl Fn(&[f64]) -> Vec<f64>, m: usize) -> Result<Vec<f64>> {
    let mut x = vec![1.0; m];
    let mut change = f64::INFINITY;
    for _ in 0..PERRON_MAX_ITER {
        let mut next = step(&x);
        let total: f64 = next.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::NonConvergence { iterations: 0, residual: f64::NAN });
        }
        next.iter_mut().for_each(|v| *v *= m as f64 / total);
        change = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if change < PERRON_TOL {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence { iterations: PERRON_MAX_ITER, residual: change })
}

/// Perron vectors by power iteration from the all-ones vector.
pub fn left_perron(w: &DirectedWeights) -> Result<PerronVectors> {
    let m = w.m();
    let rr = w.r.shifted_identity();
    let cc = w.c.shifted_identity();
    let u = power_iterate(|x| rr.vec_mul(x), m)?;
    let omega = power_iterate(|x| cc.mul_vec(x), m)?;
    Ok(PerronVectors { u, omega })
}

/// Per-agent estimates `z_i` of the normalised left eigenvector of `I + R`.
#[derive(Clone, Debug, PartialEq)]
pub struct EigEstimate {
    pub z: Vec<Vec<f64>>,
    pub t: usize,
}

impl EigEstimate {
    /// `z_{i,0} = e_i`.
    pub fn new(m: usize) -> Self {
        let z = (0..m)
            .map(|i| {
                let mut e = vec![0.0; m];
                e[i] = 1.0;
                e
            })
            .collect();
        EigEstimate { z, t: 0 }
    }

    /// `m [z_i]_i` for every agent, erroring on a non-positive entry.
    pub fn scaled_diag(&self) -> Result<Vec<f64>> {
        let m = self.z.len();
        (0..m)
            .map(|i| {
                let d = self.z[i][i];
                if d > 0.0 {
                    Ok(m as f64 * d)
                } else {
                    Err(Error::CorruptedEstimate { agent: i, round: self.t, value: d })
                }
            })
            .collect()
    }
}

/// One synchronous round `z_i ← z_i + Σ_j R_ij (z_j − z_i)`.
pub fn eig_estimator_step(est: &EigEstimate, w: &DirectedWeights) -> Result<EigEstimate> {
    est.scaled_diag()?;
    let z = (0..est.z.len()).map(|i| estimator_row(&est.z, w.r(), i)).collect();
    Ok(EigEstimate { z, t: est.t + 1 })
}

pub(crate) fn estimator_row(z: &[Vec<f64>], r: &Matrix, i: usize) -> Vec<f64> {
    let mut next = z[i].clone();
    for (j, rij) in DirectedWeights::in_neighbors(r, i) {
        for ((n, zj), zi) in next.iter_mut().zip(&z[j]).zip(&z[i]) {
            *n += rij * (zj - zi);
        }
    }
    next
}

/// Estimator error sequences over rounds `0..=rounds`.
#[derive(Clone, Debug)]
pub struct EstimatorErrors {
    /// `max_i |m [z_{i,t}]_i − u_i|`.
    pub scaled: Vec<f64>,
    /// `max_i |1/(m [z_{i,t}]_i) − 1/u_i|`, the form used by the privacy bound.
    pub inverse: Vec<f64>,
}

pub fn estimator_errors(w: &DirectedWeights, perron: &PerronVectors, rounds: usize) -> Result<EstimatorErrors> {
    let mut est = EigEstimate::new(w.m());
    let mut scaled = Vec::with_capacity(rounds + 1);
    let mut inverse = Vec::with_capacity(rounds + 1);
    for t in 0..=rounds {
        let d = est.scaled_diag()?;
        scaled.push(d.iter().zip(&perron.u).map(|(d, u)| (d - u).abs()).fold(0.0, f64::max));
        inverse.push(d.iter().zip(&perron.u).map(|(d, u)| (1.0 / d - 1.0 / u).abs()).fold(0.0, f64::max));
        if t < rounds {
            est = eig_estimator_step(&est, w)?;
        }
    }
    Ok(EstimatorErrors { scaled, inverse })
}

/// Envelope `e_t ≤ amplitude · rate^t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricEnvelope {
    pub amplitude: f64,
    pub rate: f64,
}

impl GeometricEnvelope {
    pub fn at(&self, t: usize) -> f64 {
        self.amplitude * self.rate.powi(t as i32)
    }
}

/// Entries at or below this, relative to the largest entry (or 1), are
/// rounding noise and end the fitted prefix.
pub const ENVELOPE_FLOOR: f64 = 1e-13;

/// Least-squares fit of `ln e_t` against `t` over the rounds before the
/// sequence first reaches the rounding floor (`ENVELOPE_FLOOR` relative to its
/// largest entry); the amplitude is then raised until the envelope dominates
/// every fitted round.
pub fn fit_geometric_envelope(errors: &[f64]) -> Result<GeometricEnvelope> {
    if errors.len() < 10 {
        return Err(Error::InvalidParameter(format!(
            "need at least 10 rounds to fit an envelope, got {}",
            errors.len()
        )));
    }
    let scale = errors.iter().copied().fold(1.0, f64::max);
    let floor = ENVELOPE_FLOOR * scale;
    let pts: Vec<(f64, f64)> =
        errors.iter().take_while(|&&e| e > floor).enumerate().map(|(t, &e)| (t as f64, e.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::NoGeometricDecay { slope: f64::NAN });
    }
    let (slope, _) = least_squares(&pts);
    if !(slope < 0.0) {
        return Err(Error::NoGeometricDecay { slope });
    }
    let rate = slope.exp();
    let mut amplitude: f64 = 0.0;
    for &(t, y) in &pts {
        amplitude = amplitude.max(y.exp() / rate.powi(t as i32));
    }
    // Headroom for the rounding of `amplitude · rate^t` itself.
    Ok(GeometricEnvelope { amplitude: amplitude * (1.0 + 1e-12), rate })
}

/// Ordinary least squares; returns `(slope, intercept)`.
pub(crate) fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// `‖uᵀ(I+R) − uᵀ‖_∞` and `‖(I+C)ω − ω‖_∞`.
pub fn perron_residuals(w: &DirectedWeights, p: &PerronVectors) -> (f64, f64) {
    let ru = w.r.vec_mul(&p.u);
    let cw = w.c.mul_vec(&p.omega);
    (max_abs(&ru), max_abs(&cw))
}
