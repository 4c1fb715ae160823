//! Sensitivity series and cumulative LDP budget bounds for the tracker, plus
//! numerical checks of the two envelope lemmas the analysis relies on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    estimator_errors, fit_geometric_envelope, DirectedWeights, GeometricEnvelope, PerronVectors, ENVELOPE_FLOOR,
};
use crate::learners::RoundTrace;
use crate::linalg::dist1;
use crate::noise::{LearnerNoise, StepsizeSchedule};

/// Rounds of the estimator used to fit the default `(c_z, γ_z)`.
pub const ENVELOPE_FIT_ROUNDS: usize = 2000;

/// Fitted `|1/(m[z_{i,t}]_i) − 1/u_i| ≤ c_z γ_z^t` on the actual graph.
pub fn estimator_envelope(w: &DirectedWeights, perron: &PerronVectors) -> Result<GeometricEnvelope> {
    let errs = estimator_errors(w, perron, ENVELOPE_FIT_ROUNDS)?;
    match fit_geometric_envelope(&errs.inverse) {
        Ok(env) => {
            Ok(GeometricEnvelope { amplitude: env.amplitude, rate: env.rate.clamp(f64::MIN_POSITIVE, 1.0 - 1e-12) })
        }
        // Estimator exact from the start (e.g. a single agent).
        Err(Error::NoGeometricDecay { .. }) if errs.inverse.iter().skip(1).all(|&e| e <= ENVELOPE_FLOOR) => {
            Ok(GeometricEnvelope { amplitude: ENVELOPE_FLOOR, rate: 0.5 })
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Finite-horizon bound with the gradient-bound driven recursion.
    FiniteHorizon,
    /// Coupled recursion tracking the `1/(t+1)` weight of a single sample and
    /// the Lipschitz feedback through `θ`; summable as `T → ∞`.
    Refined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    pub c_l: f64,
    /// `min_i |C_ii|`.
    pub c_c: f64,
    /// `min_i |R_ii|`.
    pub c_r: f64,
    pub c_z: f64,
    pub gamma_z: f64,
    pub u: Vec<f64>,
    pub u_min: f64,
    pub step: StepsizeSchedule,
    /// `√n L`, only used by the refined bound.
    pub feedback: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySeries {
    pub kind: BoundKind,
    /// `ϱ_{t,s}` for `t = 0..=T`.
    pub rho_s: Vec<f64>,
    /// `ϱ_{t,θ}` per learner (its own `1/u_i`).
    pub rho_theta: Vec<Vec<f64>>,
    /// `ϱ_{t,θ}` with `u_min`, a uniform bound over learners.
    pub rho_theta_worst: Vec<f64>,
    pub params: SensitivityParams,
}

impl SensitivitySeries {
    pub fn horizon(&self) -> usize {
        self.rho_s.len() - 1
    }
}

fn check_params(w: &DirectedWeights, c_l: f64, c_z: f64, gamma_z: f64) -> Result<(f64, f64)> {
    let c_c = w.min_abs_diag_c();
    let c_r = w.min_abs_diag_r();
    if c_c == 0.0 || c_r == 0.0 {
        return Err(Error::DiagonalFree(format!("min |C_ii| = {c_c}, min |R_ii| = {c_r}")));
    }
    if !(c_c < 1.0 && c_r < 1.0) {
        return Err(Error::InvalidParameter(format!("diagonal magnitudes must be below 1: {c_c}, {c_r}")));
    }
    if !(c_l > 0.0 && c_l.is_finite()) {
        return Err(Error::InvalidParameter(format!("gradient bound c_l must be positive, got {c_l}")));
    }
    if !(gamma_z > 0.0 && gamma_z < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma_z must lie in (0, 1), got {gamma_z}")));
    }
    if !(c_z >= 0.0 && c_z.is_finite()) {
        return Err(Error::InvalidParameter(format!("c_z must be nonnegative, got {c_z}")));
    }
    Ok((c_c, c_r))
}

/// Runs the θ-recursion for one `1/u` value given `ϱ_s`.
fn theta_series(rho_s: &[f64], c_r: f64, c_z: f64, gamma_z: f64, inv_u: f64) -> Vec<f64> {
    let mut out = vec![0.0; rho_s.len()];
    let mut g = 1.0;
    for t in 1..rho_s.len() {
        out[t] = (1.0 - c_r) * out[t - 1] + (c_z * g + inv_u) * (rho_s[t] + rho_s[t - 1]);
        g *= gamma_z;
    }
    out
}

/// `ϱ_{t,s} = 2c_l Σ_{p=1}^t (1−c_C)^{t−p} λ_{p−1}` and
/// `ϱ_{t,θ} = Σ_{q=1}^t (1−c_R)^{t−q}(c_z γ_z^{q−1} + 1/u_i)(ϱ_{q,s} + ϱ_{q−1,s})`,
/// both evaluated by their one-step recursions.
pub fn sensitivity_series(
    w: &DirectedWeights,
    perron: &PerronVectors,
    c_l: f64,
    c_z: f64,
    gamma_z: f64,
    step: StepsizeSchedule,
    horizon: usize,
) -> Result<SensitivitySeries> {
    let (c_c, c_r) = check_params(w, c_l, c_z, gamma_z)?;
    let mut rho_s = vec![0.0; horizon + 1];
    for t in 1..=horizon {
        rho_s[t] = (1.0 - c_c) * rho_s[t - 1] + 2.0 * c_l * step.at(t - 1);
    }
    Ok(assemble(BoundKind::FiniteHorizon, rho_s, perron, c_l, c_c, c_r, c_z, gamma_z, step, None))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    kind: BoundKind,
    rho_s: Vec<f64>,
    perron: &PerronVectors,
    c_l: f64,
    c_c: f64,
    c_r: f64,
    c_z: f64,
    gamma_z: f64,
    step: StepsizeSchedule,
    feedback: Option<f64>,
) -> SensitivitySeries {
    let u_min = perron.u_min();
    let rho_theta = perron.u.iter().map(|u| theta_series(&rho_s, c_r, c_z, gamma_z, 1.0 / u.abs())).collect();
    let rho_theta_worst = theta_series(&rho_s, c_r, c_z, gamma_z, 1.0 / u_min);
    SensitivitySeries {
        kind,
        rho_s,
        rho_theta,
        rho_theta_worst,
        params: SensitivityParams { c_l, c_c, c_r, c_z, gamma_z, u: perron.u.clone(), u_min, step, feedback },
    }
}

/// Coupled bound for the running-average objective: the differing sample
/// enters `∇f_{i,t}` with weight `1/(t+1)` and the remaining `t` samples feed
/// the parameter divergence back through `√n L`:
///
/// `Δ_s(t+1) = (1−c_C)Δ_s(t) + √n L λ_t t/(t+1) Δ_θ(t) + 2c_l λ_t/(t+1)`,
/// `Δ_θ(t+1) = (1−c_R)Δ_θ(t) + (c_z γ_z^t + 1/u)(Δ_s(t+1) + Δ_s(t))`.
///
/// The per-learner θ series use that learner's `1/u_i` in the coupled loop,
/// so each learner gets its own `ϱ_s` as well; `rho_s` holds the worst case.
#[allow(clippy::too_many_arguments)]
pub fn refined_sensitivity_series(
    w: &DirectedWeights,
    perron: &PerronVectors,
    c_l: f64,
    c_z: f64,
    gamma_z: f64,
    step: StepsizeSchedule,
    lipschitz: f64,
    dim: usize,
    horizon: usize,
) -> Result<SensitivitySeries> {
    let (c_c, c_r) = check_params(w, c_l, c_z, gamma_z)?;
    if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
        return Err(Error::InvalidParameter(format!("Lipschitz constant must be nonnegative, got {lipschitz}")));
    }
    let feedback = (dim as f64).sqrt() * lipschitz;
    let coupled = |inv_u: f64| {
        let mut s = vec![0.0; horizon + 1];
        let mut th = vec![0.0; horizon + 1];
        let mut g = 1.0;
        for t in 0..horizon {
            let tf = t as f64;
            let lam = step.at(t);
            s[t + 1] = (1.0 - c_c) * s[t] + feedback * lam * tf / (tf + 1.0) * th[t] + 2.0 * c_l * lam / (tf + 1.0);
            th[t + 1] = (1.0 - c_r) * th[t] + (c_z * g + inv_u) * (s[t + 1] + s[t]);
            g *= gamma_z;
        }
        (s, th)
    };
    let (rho_s, rho_theta_worst) = coupled(1.0 / perron.u_min());
    let rho_theta = perron.u.iter().map(|u| coupled(1.0 / u.abs()).1).collect();
    Ok(SensitivitySeries {
        kind: BoundKind::Refined,
        rho_s,
        rho_theta,
        rho_theta_worst,
        params: SensitivityParams {
            c_l,
            c_c,
            c_r,
            c_z,
            gamma_z,
            u: perron.u.clone(),
            u_min: perron.u_min(),
            step,
            feedback: Some(feedback),
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerBudget {
    pub learner: usize,
    pub eps_s: f64,
    pub eps_theta: f64,
    pub eps_total: f64,
    /// `ε(T) − ε(T−1)`, the last summand.
    pub increment: f64,
    /// Integral estimate of the remaining terms, modelling them as
    /// `c (t+1)^{−(1+v−ς)}` matched at `T`. Non-rigorous; `None` at `T = 0`.
    pub tail_estimate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub kind: BoundKind,
    pub horizon: usize,
    pub learners: Vec<LearnerBudget>,
    /// Per learner, the bound obtained with `u_min` in place of `u_i`.
    pub worst_case: Vec<LearnerBudget>,
}

impl BudgetReport {
    pub fn max_eps_s(&self) -> f64 {
        self.learners.iter().map(|l| l.eps_s).fold(0.0, f64::max)
    }

    pub fn max_eps_theta(&self) -> f64 {
        self.learners.iter().map(|l| l.eps_theta).fold(0.0, f64::max)
    }

    pub fn max_eps_total(&self) -> f64 {
        self.learners.iter().map(|l| l.eps_total).fold(0.0, f64::max)
    }
}

/// `√2 ϱ_t (t+1)^ς / σ₀` for `t = 1..=T`; infinite when the noise is off.
fn terms(rho: &[f64], sigma0: f64, varsigma: f64, horizon: usize) -> impl Iterator<Item = f64> + '_ {
    (1..=horizon).map(move |t| {
        let num = std::f64::consts::SQRT_2 * rho[t] * ((t + 1) as f64).powf(varsigma);
        if sigma0 > 0.0 {
            num / sigma0
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    })
}

fn learner_budget(
    learner: usize,
    rho_s: &[f64],
    rho_theta: &[f64],
    noise: &LearnerNoise,
    v: f64,
    horizon: usize,
) -> LearnerBudget {
    let mut eps_s = 0.0;
    let mut eps_theta = 0.0;
    let mut last = (0.0, 0.0);
    for (a, b) in terms(rho_s, noise.zeta.sigma0, noise.zeta.varsigma, horizon).zip(terms(
        rho_theta,
        noise.theta.sigma0,
        noise.theta.varsigma,
        horizon,
    )) {
        eps_s += a;
        eps_theta += b;
        last = (a, b);
    }
    let tail = |term: f64, varsigma: f64| {
        let gap = v - varsigma;
        if term == 0.0 {
            0.0
        } else if gap > 0.0 {
            term * (horizon + 1) as f64 / gap
        } else {
            f64::INFINITY
        }
    };
    LearnerBudget {
        learner,
        eps_s,
        eps_theta,
        eps_total: eps_s + eps_theta,
        increment: last.0 + last.1,
        tail_estimate: (horizon > 0).then(|| tail(last.0, noise.zeta.varsigma) + tail(last.1, noise.theta.varsigma)),
    }
}

/// `ε_{i,s} = Σ_{t=1}^T √2 ϱ_{t,s}(t+1)^{ς_ζ}/σ_{0,ζ}` and the analogous
/// `ε_{i,θ}`, reported as upper bounds.
pub fn cumulative_budget(series: &SensitivitySeries, noise: &[LearnerNoise], horizon: usize) -> Result<BudgetReport> {
    if series.horizon() < horizon {
        return Err(Error::InvalidParameter(format!(
            "sensitivity series covers {} rounds, budget asked for {horizon}",
            series.horizon()
        )));
    }
    if noise.len() != series.rho_theta.len() {
        return Err(Error::DimensionMismatch { expected: series.rho_theta.len(), got: noise.len() });
    }
    let v = series.params.step.v;
    let learners = noise
        .iter()
        .enumerate()
        .map(|(i, n)| learner_budget(i, &series.rho_s, &series.rho_theta[i], n, v, horizon))
        .collect();
    let worst_case = noise
        .iter()
        .enumerate()
        .map(|(i, n)| learner_budget(i, &series.rho_s, &series.rho_theta_worst, n, v, horizon))
        .collect();
    Ok(BudgetReport { kind: series.kind, horizon, learners, worst_case })
}

/// One report per horizon, from a single series long enough for the largest.
pub fn budget_curve(
    series: &SensitivitySeries,
    noise: &[LearnerNoise],
    horizons: &[usize],
) -> Result<Vec<BudgetReport>> {
    horizons.iter().map(|&t| cumulative_budget(series, noise, t)).collect()
}

/// Realized divergence of one learner's shared variables between two runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSensitivity {
    pub learner: usize,
    pub rounds: Vec<usize>,
    /// `‖s_{i,t} − s'_{i,t}‖₁`.
    pub s_l1: Vec<f64>,
    /// `‖θ_{i,t} − θ'_{i,t}‖₁`.
    pub theta_l1: Vec<f64>,
}

pub fn empirical_sensitivity(a: &RoundTrace, b: &RoundTrace, learner: usize) -> Result<EmpiricalSensitivity> {
    if a.algorithm != b.algorithm || a.records.len() != b.records.len() || a.m() != b.m() {
        return Err(Error::TraceShape(format!(
            "traces differ: {} vs {} records, {} vs {} agents",
            a.records.len(),
            b.records.len(),
            a.m(),
            b.m()
        )));
    }
    if learner >= a.m() {
        return Err(Error::TraceShape(format!("learner {learner} out of range for {} agents", a.m())));
    }
    let mut out = EmpiricalSensitivity { learner, rounds: vec![], s_l1: vec![], theta_l1: vec![] };
    for (ra, rb) in a.records.iter().zip(&b.records) {
        if ra.round != rb.round {
            return Err(Error::TraceShape(format!("round {} vs {}", ra.round, rb.round)));
        }
        out.rounds.push(ra.round);
        out.s_l1.push(dist1(&ra.tracker[learner], &rb.tracker[learner]));
        out.theta_l1.push(dist1(&ra.theta[learner], &rb.theta[learner]));
    }
    Ok(out)
}

/// Relative slack allowed at the equality point of the `aγ^t ≤ t^{−2}` scan.
pub const LEMMA6_REL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub horizon: usize,
    /// `a = (e ln γ)²/4`.
    pub a: f64,
    pub geometric_violations: Vec<usize>,
    /// `max_t a γ^t t²`, equal to 1 at the continuous maximiser.
    pub geometric_max_ratio: f64,
    pub c2: f64,
    pub recursion_violations: Vec<usize>,
    /// `max_t v_t / (C₂ β_t)`.
    pub recursion_max_ratio: f64,
}

impl EnvelopeReport {
    pub fn holds(&self) -> bool {
        self.geometric_violations.is_empty() && self.recursion_violations.is_empty()
    }
}

/// Scans `aγ^t ≤ 1/t²` for `t = 1..=T`, and `v_t ≤ C₂β_t` for `t = 0..=T` on
/// `v_{t+1} = (1−c)v_t + β_t`, `β_t = β₀/(t+1)^q`, with
/// `C₂ = (4q/(e ln(2/(2−c))))^q (v₀(1−c)/β₀ + 2/c)`.
pub fn lemma_envelopes(gamma: f64, c: f64, q: f64, horizon: usize, beta0: f64, v0: f64) -> Result<EnvelopeReport> {
    if !(gamma > 0.0 && gamma < 1.0) || !(c > 0.0 && c < 1.0) || !(q > 0.0) || !(beta0 > 0.0) || !(v0 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need γ, c ∈ (0,1), q > 0, β₀ > 0, v₀ ≥ 0; got γ={gamma}, c={c}, q={q}, β₀={beta0}, v₀={v0}"
        )));
    }
    let e = std::f64::consts::E;
    let a = (gamma.ln() * e).powi(2) / 4.0;
    let mut geometric_violations = vec![];
    let mut geometric_max_ratio: f64 = 0.0;
    for t in 1..=horizon {
        let tf = t as f64;
        // In log space so that underflow of γ^t cannot hide anything.
        let ratio = (a.ln() + tf * gamma.ln() + 2.0 * tf.ln()).exp();
        geometric_max_ratio = geometric_max_ratio.max(ratio);
        if ratio > 1.0 + LEMMA6_REL_TOL {
            geometric_violations.push(t);
        }
    }

    let c2 = (4.0 * q / (e * (2.0 / (2.0 - c)).ln())).powf(q) * (v0 * (1.0 - c) / beta0 + 2.0 / c);
    let beta = |t: usize| beta0 / ((t + 1) as f64).powf(q);
    let mut recursion_violations = vec![];
    let mut recursion_max_ratio: f64 = 0.0;
    let mut vt = v0;
    for t in 0..=horizon {
        let ratio = vt / (c2 * beta(t));
        recursion_max_ratio = recursion_max_ratio.max(ratio);
        if ratio > 1.0 {
            recursion_violations.push(t);
        }
        vt = (1.0 - c) * vt + beta(t);
    }
    Ok(EnvelopeReport {
        horizon,
        a,
        geometric_violations,
        geometric_max_ratio,
        c2,
        recursion_violations,
        recursion_max_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_ring, left_perron};
    use crate::noise::NoiseSchedule;

    fn ring_series(t: usize) -> SensitivitySeries {
        let w = build_ring(10, 0.3).unwrap();
        let p = left_perron(&w).unwrap();
        sensitivity_series(&w, &p, 1.0, 1.0, 0.9, StepsizeSchedule::new(1.0, 0.6), t).unwrap()
    }

    #[test]
    fn first_terms() {
        let s = ring_series(5);
        assert_eq!(s.rho_s[0], 0.0);
        assert_eq!(s.rho_s[1], 2.0);
        assert_eq!(s.rho_theta_worst[0], 0.0);
        assert!(s.rho_s.iter().chain(&s.rho_theta_worst).all(|&x| x >= 0.0));
    }

    #[test]
    fn diagonal_free_is_rejected() {
        let r = crate::linalg::Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let w = DirectedWeights::from_r(r).unwrap();
        let p = PerronVectors { u: vec![1.0, 1.0], omega: vec![1.0, 1.0] };
        let err = sensitivity_series(&w, &p, 1.0, 1.0, 0.5, StepsizeSchedule::new(1.0, 0.6), 3).unwrap_err();
        assert!(err.to_string().contains("diagonal-free weight matrix: sensitivity bound vacuous"));
    }

    #[test]
    fn zero_horizon_is_empty_sum() {
        let s = ring_series(10);
        let noise =
            vec![LearnerNoise { zeta: NoiseSchedule::new(1.0, 0.55), theta: NoiseSchedule::new(1.0, 0.55) }; 10];
        let b = cumulative_budget(&s, &noise, 0).unwrap();
        assert!(b.learners.iter().all(|l| l.eps_total == 0.0 && l.tail_estimate.is_none()));
    }

    #[test]
    fn doubling_sigma_halves_budget() {
        let s = ring_series(200);
        let one = vec![LearnerNoise { zeta: NoiseSchedule::new(1.0, 0.55), theta: NoiseSchedule::new(1.0, 0.52) }; 10];
        let two = vec![LearnerNoise { zeta: NoiseSchedule::new(2.0, 0.55), theta: NoiseSchedule::new(2.0, 0.52) }; 10];
        let a = cumulative_budget(&s, &one, 200).unwrap();
        let b = cumulative_budget(&s, &two, 200).unwrap();
        for (x, y) in a.learners.iter().zip(&b.learners) {
            assert_eq!(x.eps_s, 2.0 * y.eps_s);
            assert_eq!(x.eps_theta, 2.0 * y.eps_theta);
        }
    }

    #[test]
    fn silent_noise_gives_unbounded_budget() {
        let s = ring_series(10);
        let noise =
            vec![LearnerNoise { zeta: NoiseSchedule::new(0.0, 0.55), theta: NoiseSchedule::new(1.0, 0.55) }; 10];
        let b = cumulative_budget(&s, &noise, 10).unwrap();
        assert!(b.learners[0].eps_s.is_infinite());
    }

    #[test]
    fn envelopes_hold_for_spec_examples() {
        let r = lemma_envelopes(0.5, 0.3, 0.6, 10_000, 1.0, 5.0).unwrap();
        assert!(r.holds(), "{r:?}");
        assert!(r.geometric_max_ratio <= 1.0 + LEMMA6_REL_TOL);
    }

    #[test]
    fn underflowed_geometric_terms_hold() {
        let r = lemma_envelopes(1e-3, 0.5, 1.0, 2000, 1.0, 0.0).unwrap();
        assert!(r.geometric_violations.is_empty());
    }

    #[test]
    fn refined_series_is_summable_in_shape() {
        let w = build_ring(4, 0.4).unwrap();
        let p = left_perron(&w).unwrap();
        let s =
            refined_sensitivity_series(&w, &p, 1.0, 1.0, 0.9, StepsizeSchedule::new(0.5, 0.6), 1.0, 1, 4000).unwrap();
        // Eventually ϱ_s decays faster than 1/t.
        let late = s.rho_s[4000] * 4001.0;
        let mid = s.rho_s[2000] * 2001.0;
        assert!(late < mid);
    }
}
