//! JSON run configuration and the experiment driver built on it.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    build_random_strongly_connected, build_ring, left_perron, validate_weights, DirectedWeights, PerronVectors,
};
use crate::learners::{run, Algorithm, Engine, InitMode, RoundTrace, RunSpec};
use crate::linalg::Matrix;
use crate::metrics::{
    average_rows, budget_trajectory, fit_decay_rate, metric_rows, reseeded, solve_centralized, BudgetTrajectory,
    MetricRow, OracleSolution, DEFAULT_SURROGATE_POINTS, DEFAULT_TOL,
};
use crate::noise::{validate_compat, ExponentSpec, LearnerNoise, NoisePlan, NoiseSchedule, StepsizeSchedule};
use crate::privacy::{estimator_envelope, sensitivity_series, SensitivitySeries};
use crate::problem::{load_dataset_csv, StreamProblem};
use crate::rng::{derive_seed, Domain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphConfig {
    /// Directed ring `i−1 → i` with off-diagonal weight `weight`.
    Ring { m: usize, weight: f64 },
    /// Random digraph with a superimposed ring; `seed` defaults to the run seed.
    Random { m: usize, density: f64, seed: Option<u64> },
    /// Explicit `R` and optionally `C` (defaults to `Rᵀ`).
    Explicit { r: Vec<Vec<f64>>, c: Option<Vec<Vec<f64>>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Quadratic {
        dim: usize,
        #[serde(default = "one")]
        data_std: f64,
        #[serde(default = "one")]
        heterogeneity: f64,
    },
    LogisticSynthetic {
        dim: usize,
        reg: f64,
        #[serde(default = "one")]
        heterogeneity: f64,
    },
    /// CSV with a `label` column in `{+1, −1}`; relative paths are resolved
    /// against the config file's directory.
    LogisticDataset { path: PathBuf, reg: f64 },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma0_zeta: f64,
    pub sigma0_theta: f64,
    pub varsigma_zeta: ExponentSpec,
    pub varsigma_theta: ExponentSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    pub lambda0: f64,
    pub v: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    /// Per-sample L1 gradient bound; defaults to the clipping level.
    pub c_l: Option<f64>,
    /// Estimator envelope; fitted on the graph when absent.
    pub c_z: Option<f64>,
    pub gamma_z: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub graph: GraphConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub clip_l1: Option<f64>,
    pub noise: NoiseConfig,
    pub stepsize: StepConfig,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    pub rounds: usize,
    #[serde(default = "one_usize")]
    pub record_every: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitMode,
    #[serde(default)]
    pub privacy: PrivacyConfig,
    #[serde(default = "default_surrogate")]
    pub surrogate_points: usize,
    #[serde(default = "default_true")]
    pub parallel: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_algorithm() -> Algorithm {
    Algorithm::LdpGradtrack
}
fn one_usize() -> usize {
    1
}
fn default_repetitions() -> usize {
    20
}
fn default_surrogate() -> usize {
    DEFAULT_SURROGATE_POINTS
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    /// Parses JSON, reporting the failing field path with line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            Error::Config(format!("at `{}` (line {}, column {}): {}", e.path(), inner.line(), inner.column(), inner))
        })
    }

    /// Reads a config file; a relative dataset path is made relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let ProblemConfig::LogisticDataset { path: data, .. } = &mut cfg.problem {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Everything a config resolves to before any simulation.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: RunConfig,
    pub weights: DirectedWeights,
    pub perron: PerronVectors,
    pub problem: StreamProblem,
    pub noise: Vec<LearnerNoise>,
    pub step: StepsizeSchedule,
}

pub fn build_weights(g: &GraphConfig, seed: u64) -> Result<DirectedWeights> {
    match g {
        GraphConfig::Ring { m, weight } => build_ring(*m, *weight),
        GraphConfig::Random { m, density, seed: s } => {
            build_random_strongly_connected(*m, *density, s.unwrap_or_else(|| derive_seed(seed, Domain::Topology, &[])))
        }
        GraphConfig::Explicit { r, c } => {
            let bad = |name: &str| Error::Config(format!("graph.{name} is not a rectangular matrix"));
            let r = Matrix::from_rows(r).ok_or_else(|| bad("r"))?;
            match c {
                Some(c) => DirectedWeights::from_matrices(r, Matrix::from_rows(c).ok_or_else(|| bad("c"))?),
                None => DirectedWeights::from_r(r),
            }
        }
    }
}

pub fn build_problem(p: &ProblemConfig, m: usize, clip: Option<f64>, seed: u64) -> Result<StreamProblem> {
    let seed = derive_seed(seed, Domain::Data, &[]);
    let prob = match p {
        ProblemConfig::Quadratic { dim, data_std, heterogeneity } => {
            StreamProblem::quadratic(m, *dim, *data_std, *heterogeneity, seed)
        }
        ProblemConfig::LogisticSynthetic { dim, reg, heterogeneity } => {
            StreamProblem::logistic_synthetic(m, *dim, *reg, *heterogeneity, seed)
        }
        ProblemConfig::LogisticDataset { path, reg } => {
            StreamProblem::logistic_dataset(load_dataset_csv(path)?, m, *reg, seed)?
        }
    };
    Ok(prob.with_clip(clip))
}

pub fn build_noise(n: &NoiseConfig, m: usize) -> Result<Vec<LearnerNoise>> {
    let zeta = n.varsigma_zeta.expand(m).map_err(Error::Config)?;
    let theta = n.varsigma_theta.expand(m).map_err(Error::Config)?;
    Ok(zeta
        .into_iter()
        .zip(theta)
        .map(|(z, t)| LearnerNoise {
            zeta: NoiseSchedule::new(n.sigma0_zeta, z),
            theta: NoiseSchedule::new(n.sigma0_theta, t),
        })
        .collect())
}

/// Builds all components and runs every validation before simulation.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let mut problems = Vec::new();
    if config.rounds > 0 && config.record_every == 0 {
        problems.push("record_every must be at least 1".to_string());
    }
    if config.repetitions == 0 {
        problems.push("repetitions must be at least 1".to_string());
    }
    if let Some(c) = config.clip_l1 {
        if !(c > 0.0 && c.is_finite()) {
            problems.push(format!("clip_l1 must be positive, got {c}"));
        }
    }
    let weights = build_weights(&config.graph, config.seed)?;
    problems.extend(validate_weights(&weights).iter().map(ToString::to_string));
    let noise = build_noise(&config.noise, weights.m())?;
    let step = StepsizeSchedule::new(config.stepsize.lambda0, config.stepsize.v);
    problems.extend(validate_compat(&noise, &step).iter().map(ToString::to_string));
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let perron = left_perron(&weights)?;
    let problem = build_problem(&config.problem, weights.m(), config.clip_l1, config.seed)?;
    Ok(Prepared { config: config.clone(), weights, perron, problem, noise, step })
}

impl Prepared {
    pub fn noise_plan(&self, rep: usize) -> NoisePlan {
        NoisePlan {
            learners: self.noise.clone(),
            seed: derive_seed(self.config.seed, Domain::Repetition, &[rep as u64, 1]),
        }
    }

    pub fn problem_for(&self, rep: usize) -> StreamProblem {
        reseeded(&self.problem, rep)
    }

    pub fn run_spec(&self, algorithm: Algorithm, rep: usize) -> RunSpec {
        RunSpec {
            algorithm,
            rounds: self.config.rounds,
            record_every: self.config.record_every.max(1),
            init: self.config.init,
            init_seed: derive_seed(self.config.seed, Domain::Init, &[rep as u64]),
        }
    }

    /// One repetition; both algorithms see identical streams and noise.
    pub fn run_once(&self, algorithm: Algorithm, rep: usize, parallel: bool) -> Result<RoundTrace> {
        let problem = self.problem_for(rep);
        let noise = self.noise_plan(rep);
        let engine = Engine { weights: &self.weights, problem: &problem, step: self.step, noise: &noise, parallel };
        run(&engine, &self.run_spec(algorithm, rep))
    }

    /// `c_l` from the config, else the clipping level.
    pub fn gradient_bound(&self) -> Result<f64> {
        self.config.privacy.c_l.or(self.config.clip_l1).ok_or_else(|| {
            Error::Config("privacy accounting needs a gradient bound: set privacy.c_l or clip_l1".into())
        })
    }

    /// `(c_z, γ_z)` from the config or fitted on the graph.
    pub fn envelope(&self) -> Result<(f64, f64)> {
        match (self.config.privacy.c_z, self.config.privacy.gamma_z) {
            (Some(c), Some(g)) => Ok((c, g)),
            (c, g) => {
                let env = estimator_envelope(&self.weights, &self.perron)?;
                Ok((c.unwrap_or(env.amplitude), g.unwrap_or(env.rate)))
            }
        }
    }

    pub fn sensitivity(&self, horizon: usize) -> Result<SensitivitySeries> {
        let (c_z, gamma_z) = self.envelope()?;
        sensitivity_series(&self.weights, &self.perron, self.gradient_bound()?, c_z, gamma_z, self.step, horizon)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub repetitions: usize,
    pub rounds: usize,
    pub beta_hat: Option<f64>,
    pub final_errors: FinalErrors,
    pub oracle_residual: f64,
    pub oracle_surrogate_points: usize,
    pub theta_star: Vec<f64>,
    pub clipped_gradients: usize,
    /// Why the budget columns are empty, when they are.
    pub budget_note: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinalErrors {
    pub avg_tracking_error: f64,
    pub avg_loss_gap: f64,
    pub consensus_gap: f64,
}

/// Outcome of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct Experiment {
    /// Trace of repetition 0.
    pub trace: RoundTrace,
    /// Per-round mean over repetitions.
    pub rows: Vec<MetricRow>,
    pub oracle: OracleSolution,
    pub summary: Summary,
}

/// Runs every repetition of `algorithm`, reduces metrics in repetition order
/// and keeps the first trace.
pub fn run_experiment(prep: &Prepared, algorithm: Algorithm) -> Result<Experiment> {
    let cfg = &prep.config;
    let oracle = solve_centralized(&prep.problem, cfg.surrogate_points, DEFAULT_TOL)?;
    let (budget, budget_note): (Option<BudgetTrajectory>, Option<String>) = if algorithm == Algorithm::LdpGradtrack {
        match prep.sensitivity(cfg.rounds) {
            Ok(series) => (Some(budget_trajectory(&series, &prep.noise)), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("privacy accounting applies to ldp_gradtrack only".into()))
    };
    // Repetitions in parallel, agents sequential inside each.
    let per_rep = |rep: usize| -> Result<(Option<RoundTrace>, Vec<MetricRow>, usize)> {
        let inner = cfg.parallel && cfg.repetitions == 1;
        let trace = prep.run_once(algorithm, rep, inner)?;
        let rows = metric_rows(&trace, &prep.problem_for(rep), &oracle, budget.as_ref())?;
        let clipped = trace.clipped;
        Ok(((rep == 0).then_some(trace), rows, clipped))
    };
    let results: Vec<_> = if cfg.parallel {
        (0..cfg.repetitions).into_par_iter().map(per_rep).collect::<Result<_>>()?
    } else {
        (0..cfg.repetitions).map(per_rep).collect::<Result<_>>()?
    };
    let mut trace = None;
    let mut reps = Vec::with_capacity(results.len());
    let mut clipped = 0;
    for (t, rows, c) in results {
        if t.is_some() {
            trace = t;
        }
        reps.push(rows);
        clipped += c;
    }
    let rows = average_rows(&reps)?;
    let trace = trace.ok_or_else(|| Error::Config("no repetitions were run".into()))?;
    let last = rows.last().cloned().ok_or_else(|| Error::TraceShape("no rounds recorded".into()))?;
    let rounds: Vec<usize> = rows.iter().map(|r| r.round).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.avg_tracking_error).collect();
    let beta_hat = fit_decay_rate(&rounds, &errs, 0.5).ok();
    let summary = Summary {
        algorithm,
        repetitions: cfg.repetitions,
        rounds: cfg.rounds,
        beta_hat,
        final_errors: FinalErrors {
            avg_tracking_error: last.avg_tracking_error,
            avg_loss_gap: last.avg_loss_gap,
            consensus_gap: last.consensus_gap,
        },
        oracle_residual: oracle.residual,
        oracle_surrogate_points: oracle.surrogate_points,
        theta_star: oracle.theta_star.clone(),
        clipped_gradients: clipped,
        budget_note,
    };
    Ok(Experiment { trace, rows, oracle, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "graph": {"kind": "ring", "m": 4, "weight": 0.3},
        "problem": {"kind": "quadratic", "dim": 2},
        "noise": {"sigma0_zeta": 0.1, "sigma0_theta": 0.1, "varsigma_zeta": 0.55, "varsigma_theta": "0.5+0.01i"},
        "stepsize": {"lambda0": 0.5, "v": 0.61},
        "rounds": 20,
        "repetitions": 2,
        "seed": 3
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_json(BASE).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::LdpGradtrack);
        assert_eq!(cfg.record_every, 1);
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn parse_error_names_the_field() {
        let bad = BASE.replace("\"rounds\": 20", "\"rounds\": \"many\"");
        let msg = RunConfig::from_json(&bad).unwrap_err().to_string();
        assert!(msg.contains("rounds") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn validation_collects_all_violations() {
        let bad = BASE.replace("\"v\": 0.61", "\"v\": 0.52");
        let err = prepare(&RunConfig::from_json(&bad).unwrap()).unwrap_err();
        let Error::Validation(list) = err else { panic!("expected validation error") };
        assert!(list.iter().any(|s| s.contains("Assumption 4 violated")));
    }

    #[test]
    fn experiment_is_deterministic() {
        let prep = prepare(&RunConfig::from_json(BASE).unwrap()).unwrap();
        let a = run_experiment(&prep, Algorithm::LdpGradtrack).unwrap();
        let b = run_experiment(&prep, Algorithm::LdpGradtrack).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.rows.len(), 21);
        assert!(a.summary.budget_note.is_some());
    }
}
