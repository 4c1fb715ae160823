//! Round-synchronous multi-agent engine: the noise-robust gradient-tracking
//! learner and the conventional push-pull baseline under the same noise.
//!
//! Every round reads only the previous snapshot. Each agent draws one noise
//! vector per shared variable per round and the perturbed value is what all
//! of its out-neighbours receive.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{estimator_row, DirectedWeights, EigEstimate};
use crate::linalg::{axpy, column_sum, Matrix};
use crate::noise::{NoisePlan, NoiseTag, StepsizeSchedule};
use crate::problem::{grad_empirical, SampleBuffer, StreamProblem};
use crate::rng::{keyed_rng, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    LdpGradtrack,
    PushpullNoisy,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::LdpGradtrack => "ldp_gradtrack",
            Algorithm::PushpullNoisy => "pushpull_noisy",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Zeros,
    Gaussian,
}

/// One learner's state. For the push-pull baseline `s` holds the gradient
/// tracker `y` and `z` is unused.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub theta: Vec<f64>,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
}

/// `z_{i,0} = e_i`, `s_{i,0} = 0`, `θ_{i,0}` zero or seeded standard normal.
pub fn init_states(w: &DirectedWeights, n: usize, mode: InitMode, seed: u64) -> Vec<AgentState> {
    let est = EigEstimate::new(w.m());
    est.z
        .into_iter()
        .enumerate()
        .map(|(i, z)| {
            let theta = match mode {
                InitMode::Zeros => vec![0.0; n],
                InitMode::Gaussian => {
                    let mut rng = keyed_rng(seed, Domain::Init, &[i as u64]);
                    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
                }
            };
            AgentState { theta, s: vec![0.0; n], z }
        })
        .collect()
}

/// Everything a round needs besides the states.
#[derive(Clone, Copy, Debug)]
pub struct Engine<'a> {
    pub weights: &'a DirectedWeights,
    pub problem: &'a StreamProblem,
    pub step: StepsizeSchedule,
    pub noise: &'a NoisePlan,
    /// Evaluate agents of a round on the rayon pool.
    pub parallel: bool,
}

impl Engine<'_> {
    fn map_agents<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        let m = self.weights.m();
        if self.parallel {
            (0..m).into_par_iter().map(f).collect()
        } else {
            (0..m).map(f).collect()
        }
    }

    fn draw_all(&self, tag: NoiseTag, t: usize) -> Vec<Vec<f64>> {
        let n = self.problem.dim;
        (0..self.weights.m()).map(|j| self.noise.draw(j, tag, t, n)).collect()
    }
}

/// Noise injected by every agent in one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundNoise {
    /// On the tracking variable.
    pub zeta: Vec<Vec<f64>>,
    /// On the model parameter.
    pub vartheta: Vec<Vec<f64>>,
}

/// `Σ_{j∈N_in(i)} w_ij (x_j + e_j)` plus the self term `(1 + w_ii) x_i`.
fn mix(w: &Matrix, i: usize, x: &[Vec<f64>], noise: &[Vec<f64>]) -> Vec<f64> {
    let mut out: Vec<f64> = x[i].iter().map(|v| (1.0 + w[(i, i)]) * v).collect();
    for (j, wij) in DirectedWeights::in_neighbors(w, i) {
        for ((o, xj), ej) in out.iter_mut().zip(&x[j]).zip(&noise[j]) {
            *o += wij * (xj + ej);
        }
    }
    out
}

fn check_finite(states: &[AgentState], round: usize) -> Result<()> {
    for (agent, st) in states.iter().enumerate() {
        if st.theta.iter().chain(&st.s).chain(&st.z).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { agent, round });
        }
    }
    Ok(())
}

/// Result of one round.
#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub states: Vec<AgentState>,
    pub noise: RoundNoise,
    pub lambda: f64,
    /// `∇f_{i,t}(θ_{i,t})` for every agent.
    pub grads: Vec<Vec<f64>>,
    pub clipped: usize,
}

/// Learner `i`'s tracker update from the round-`t` snapshot.
#[allow(clippy::too_many_arguments)]
fn tracker_agent(
    w: &DirectedWeights,
    i: usize,
    s_all: &[Vec<f64>],
    th_all: &[Vec<f64>],
    z_all: &[Vec<f64>],
    noise: &RoundNoise,
    grad: &[f64],
    lambda: f64,
    t: usize,
) -> Result<AgentState> {
    let zii = z_all[i][i];
    if !(zii > 0.0) {
        return Err(Error::CorruptedEstimate { agent: i, round: t, value: zii });
    }
    let mut s = mix(w.c(), i, s_all, &noise.zeta);
    axpy(lambda, grad, &mut s);
    let mut theta = mix(w.r(), i, th_all, &noise.vartheta);
    let inv = 1.0 / (w.m() as f64 * zii);
    for ((th, sn), so) in theta.iter_mut().zip(&s).zip(&s_all[i]) {
        *th -= (sn - so) * inv;
    }
    let z = estimator_row(z_all, w.r(), i);
    Ok(AgentState { theta, s, z })
}

/// One round of the noise-robust tracker. `buffers` must hold points `0..=t`.
pub fn algorithm1_round(
    states: &[AgentState],
    engine: &Engine<'_>,
    buffers: &SampleBuffer,
    t: usize,
) -> Result<RoundOutput> {
    let lambda = engine.step.at(t);
    let evals = engine.map_agents(|i| grad_empirical(engine.problem, buffers, i, &states[i].theta, t))?;
    let noise = RoundNoise { zeta: engine.draw_all(NoiseTag::Zeta, t), vartheta: engine.draw_all(NoiseTag::Theta, t) };
    let s_all: Vec<Vec<f64>> = states.iter().map(|a| a.s.clone()).collect();
    let th_all: Vec<Vec<f64>> = states.iter().map(|a| a.theta.clone()).collect();
    let z_all: Vec<Vec<f64>> = states.iter().map(|a| a.z.clone()).collect();

    let next = engine
        .map_agents(|i| tracker_agent(engine.weights, i, &s_all, &th_all, &z_all, &noise, &evals[i].grad, lambda, t))?;
    check_finite(&next, t + 1)?;
    Ok(RoundOutput {
        states: next,
        noise,
        lambda,
        clipped: evals.iter().map(|e| e.clipped).sum(),
        grads: evals.into_iter().map(|e| e.grad).collect(),
    })
}

/// One round of noisy push-pull. `prev_grads` are `∇f_{i,t}(θ_{i,t})`;
/// `buffers` must already hold points `0..=t+1`. The returned `grads` are the
/// new `∇f_{i,t+1}(θ_{i,t+1})`.
pub fn pushpull_noisy_round(
    states: &[AgentState],
    prev_grads: &[Vec<f64>],
    engine: &Engine<'_>,
    buffers: &SampleBuffer,
    t: usize,
) -> Result<RoundOutput> {
    let lambda = engine.step.at(t);
    let noise = RoundNoise { zeta: engine.draw_all(NoiseTag::Zeta, t), vartheta: engine.draw_all(NoiseTag::Theta, t) };
    let y_all: Vec<Vec<f64>> = states.iter().map(|a| a.s.clone()).collect();
    let th_all: Vec<Vec<f64>> = states.iter().map(|a| a.theta.clone()).collect();

    let thetas = engine.map_agents(|i| {
        let mut theta = mix(engine.weights.r(), i, &th_all, &noise.vartheta);
        axpy(-lambda, &states[i].s, &mut theta);
        Ok(theta)
    })?;
    let evals = engine.map_agents(|i| grad_empirical(engine.problem, buffers, i, &thetas[i], t + 1))?;
    let next: Vec<AgentState> = thetas
        .into_iter()
        .enumerate()
        .map(|(i, theta)| {
            let mut y = mix(engine.weights.c(), i, &y_all, &noise.zeta);
            axpy(1.0, &evals[i].grad, &mut y);
            axpy(-1.0, &prev_grads[i], &mut y);
            AgentState { theta, s: y, z: states[i].z.clone() }
        })
        .collect();
    check_finite(&next, t + 1)?;
    Ok(RoundOutput {
        states: next,
        noise,
        lambda,
        clipped: evals.iter().map(|e| e.clipped).sum(),
        grads: evals.into_iter().map(|e| e.grad).collect(),
    })
}

/// Snapshot of round `t` plus what was injected during the round `t → t+1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub theta: Vec<Vec<f64>>,
    /// `s_t` for the tracker, `y_t` for push-pull.
    pub tracker: Vec<Vec<f64>>,
    /// `m [z_{i,t}]_i` (tracker only).
    pub z_scaled: Option<Vec<f64>>,
    /// `∇f_{i,t}(θ_{i,t})`.
    pub grads: Option<Vec<Vec<f64>>>,
    pub noise: Option<RoundNoise>,
    pub lambda: Option<f64>,
    /// `1ᵀ` of the tracker after the round.
    pub tracker_sum_next: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub record_every: usize,
    pub records: Vec<RoundRecord>,
    /// Total number of clipped per-sample gradients.
    pub clipped: usize,
}

impl RoundTrace {
    pub fn m(&self) -> usize {
        self.records.first().map_or(0, |r| r.theta.len())
    }

    pub fn final_record(&self) -> Option<&RoundRecord> {
        self.records.last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub record_every: usize,
    pub init: InitMode,
    pub init_seed: u64,
}

fn snapshot(states: &[AgentState], t: usize, with_z: bool) -> RoundRecord {
    let m = states.len() as f64;
    RoundRecord {
        round: t,
        theta: states.iter().map(|a| a.theta.clone()).collect(),
        tracker: states.iter().map(|a| a.s.clone()).collect(),
        z_scaled: with_z.then(|| states.iter().enumerate().map(|(i, a)| m * a.z[i]).collect()),
        grads: None,
        noise: None,
        lambda: None,
        tracker_sum_next: None,
    }
}

/// Runs `spec.rounds` rounds, appending one fresh point per learner per round
/// before it is used, and records every `record_every`-th round.
pub fn run(engine: &Engine<'_>, spec: &RunSpec) -> Result<RoundTrace> {
    if spec.record_every == 0 {
        return Err(Error::InvalidParameter("record_every must be at least 1".into()));
    }
    let m = engine.weights.m();
    let n = engine.problem.dim;
    if engine.problem.m() != m || engine.noise.learners.len() != m {
        return Err(Error::InvalidParameter(format!(
            "graph has {m} agents, problem has {}, noise plan has {}",
            engine.problem.m(),
            engine.noise.learners.len()
        )));
    }
    let mut states = init_states(engine.weights, n, spec.init, spec.init_seed);
    let mut buffers = SampleBuffer::new(m, n);
    let mut records = Vec::with_capacity(spec.rounds / spec.record_every + 1);
    let mut clipped = 0;
    let keep = |t: usize| t.is_multiple_of(spec.record_every);
    let with_z = spec.algorithm == Algorithm::LdpGradtrack;

    // Push-pull starts from y_0 = ∇f_0(θ_0).
    let mut grads: Vec<Vec<f64>> = Vec::new();
    if spec.algorithm == Algorithm::PushpullNoisy {
        buffers.append_round(engine.problem);
        let evals = engine.map_agents(|i| grad_empirical(engine.problem, &buffers, i, &states[i].theta, 0))?;
        for (st, e) in states.iter_mut().zip(&evals) {
            st.s = e.grad.clone();
            clipped += e.clipped;
        }
        grads = evals.into_iter().map(|e| e.grad).collect();
    }

    for t in 0..spec.rounds {
        buffers.append_round(engine.problem);
        let out = match spec.algorithm {
            Algorithm::LdpGradtrack => algorithm1_round(&states, engine, &buffers, t)?,
            Algorithm::PushpullNoisy => pushpull_noisy_round(&states, &grads, engine, &buffers, t)?,
        };
        clipped += out.clipped;
        if keep(t) {
            let mut rec = snapshot(&states, t, with_z);
            rec.grads = Some(match spec.algorithm {
                Algorithm::LdpGradtrack => out.grads.clone(),
                Algorithm::PushpullNoisy => grads.clone(),
            });
            rec.noise = Some(out.noise);
            rec.lambda = Some(out.lambda);
            rec.tracker_sum_next = Some(column_sum(out.states.iter().map(|a| &a.s), n));
            records.push(rec);
        }
        if spec.algorithm == Algorithm::PushpullNoisy {
            grads = out.grads;
        }
        states = out.states;
    }
    if keep(spec.rounds) {
        let mut rec = snapshot(&states, spec.rounds, with_z);
        if spec.algorithm == Algorithm::PushpullNoisy {
            rec.grads = Some(grads);
        }
        records.push(rec);
    }
    Ok(RoundTrace { algorithm: spec.algorithm, rounds: spec.rounds, record_every: spec.record_every, records, clipped })
}

/// Re-runs only `learner` of a tracker run on `engine.problem` (typically an
/// adjacent dataset) while every message it receives is taken from
/// `reference`, as the sensitivity definition requires. All other agents are
/// copied from `reference`. The reference must record every round.
pub fn replay_learner(engine: &Engine<'_>, reference: &RoundTrace, learner: usize) -> Result<RoundTrace> {
    if reference.algorithm != Algorithm::LdpGradtrack || reference.record_every != 1 {
        return Err(Error::TraceShape("replay needs a tracker trace recorded every round".into()));
    }
    let m = engine.weights.m();
    if learner >= m || reference.m() != m {
        return Err(Error::TraceShape(format!("learner {learner} / agent count {m} does not match trace")));
    }
    let n = engine.problem.dim;
    let first = &reference.records[0];
    let mut theta = first.theta[learner].clone();
    let mut s = first.tracker[learner].clone();
    let mut z_all = EigEstimate::new(m).z;
    let mut buffers = SampleBuffer::new(m, n);
    let mut records = Vec::with_capacity(reference.records.len());
    let mut clipped = 0;

    for rec in &reference.records {
        let t = rec.round;
        let mut out = rec.clone();
        out.theta[learner] = theta.clone();
        out.tracker[learner] = s.clone();
        let (Some(noise), Some(lambda)) = (&rec.noise, rec.lambda) else {
            records.push(out);
            break;
        };
        buffers.append_round(engine.problem);
        let eval = grad_empirical(engine.problem, &buffers, learner, &theta, t)?;
        clipped += eval.clipped;
        let next =
            tracker_agent(engine.weights, learner, &out.tracker, &out.theta, &z_all, noise, &eval.grad, lambda, t)?;
        if next.theta.iter().chain(&next.s).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { agent: learner, round: t + 1 });
        }
        if let Some(g) = out.grads.as_mut() {
            g[learner] = eval.grad;
        }
        records.push(out);
        theta = next.theta;
        s = next.s;
        z_all = (0..m).map(|j| estimator_row(&z_all, engine.weights.r(), j)).collect();
    }
    Ok(RoundTrace { records, clipped, ..reference.clone() })
}

/// Largest pairwise Euclidean distance between agents' parameters.
pub fn consensus_gap(theta: &[Vec<f64>]) -> f64 {
    let mut gap: f64 = 0.0;
    for i in 0..theta.len() {
        for j in i + 1..theta.len() {
            gap = gap.max(crate::linalg::dist2(&theta[i], &theta[j]));
        }
    }
    gap
}
