//! Streaming learning problems: loss models, seeded per-learner data streams,
//! the running empirical objective and the population objective.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dist2, dot, norm1, norm2};
use crate::rng::{keyed_rng, Domain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LossModel {
    /// `½‖θ − x‖²`; the label is ignored.
    Quadratic,
    /// `log(1 + exp(−y xᵀθ)) + (reg/2)‖θ‖²` with `y ∈ {−1, +1}`.
    LogisticL2 { reg: f64 },
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss value and gradient at a single data point.
pub fn loss_grad(model: &LossModel, theta: &[f64], p: &DataPoint) -> Result<(f64, Vec<f64>)> {
    if p.x.len() != theta.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), got: p.x.len() });
    }
    match *model {
        LossModel::Quadratic => {
            let g: Vec<f64> = theta.iter().zip(&p.x).map(|(a, b)| a - b).collect();
            Ok((0.5 * dot(&g, &g), g))
        }
        LossModel::LogisticL2 { reg } => {
            let margin = p.y * dot(&p.x, theta);
            let loss = softplus(-margin) + 0.5 * reg * dot(theta, theta);
            let w = -p.y * sigmoid(-margin);
            let g = p.x.iter().zip(theta).map(|(x, th)| w * x + reg * th).collect();
            Ok((loss, g))
        }
    }
}

/// Rescales `g` onto the L1 ball of radius `c` if it lies outside; reports whether it did.
pub fn clip_l1(g: &mut [f64], c: f64) -> bool {
    let n1 = norm1(g);
    if n1 > c {
        let s = c / n1;
        g.iter_mut().for_each(|v| *v *= s);
        true
    } else {
        false
    }
}

/// Where each learner's samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StreamSource {
    /// `x ~ N(means[i], std² I)`.
    Gaussian { means: Vec<Vec<f64>>, std: f64 },
    /// `x ~ shifts[i] + U(−1, 1)^n`, `P(y = 1 | x) = sigmoid(weightsᵀx)`.
    PlantedLogistic { shifts: Vec<Vec<f64>>, weights: Vec<f64> },
    /// Uniform draws (with replacement) from a fixed shard per learner.
    Dataset { shards: Vec<Vec<DataPoint>> },
}

/// Known or bounded problem constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Strong-convexity modulus of the global objective.
    pub mu: f64,
    /// Lipschitz constant of the per-sample gradient.
    pub lipschitz: f64,
    /// Bound on the gradient-noise standard deviation, when known.
    pub kappa: Option<f64>,
    /// Bound on the local-gradient norm, when known.
    pub grad_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamProblem {
    pub model: LossModel,
    pub dim: usize,
    pub clip_l1: Option<f64>,
    pub seed: u64,
    pub source: StreamSource,
    /// `(learner, k) → point` overrides used to build adjacent datasets.
    #[serde(default)]
    pub replacements: BTreeMap<(usize, usize), DataPoint>,
}

impl StreamProblem {
    /// Quadratic loss with Gaussian streams around learner-specific means
    /// drawn as `heterogeneity · N(0, I)`.
    pub fn quadratic(m: usize, dim: usize, data_std: f64, heterogeneity: f64, seed: u64) -> Self {
        let means = (0..m)
            .map(|i| {
                let mut rng = keyed_rng(seed, Domain::ProblemSetup, &[i as u64]);
                (0..dim).map(|_| heterogeneity * rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
        Self::quadratic_with_means(means, data_std, seed)
    }

    pub fn quadratic_with_means(means: Vec<Vec<f64>>, data_std: f64, seed: u64) -> Self {
        let dim = means.first().map_or(0, Vec::len);
        StreamProblem {
            model: LossModel::Quadratic,
            dim,
            clip_l1: None,
            seed,
            source: StreamSource::Gaussian { means, std: data_std },
            replacements: BTreeMap::new(),
        }
    }

    /// Logistic loss on synthetic bounded features with a planted separator.
    pub fn logistic_synthetic(m: usize, dim: usize, reg: f64, heterogeneity: f64, seed: u64) -> Self {
        let mut wrng = keyed_rng(seed, Domain::ProblemSetup, &[u64::MAX]);
        let weights = (0..dim).map(|_| 2.0 * wrng.sample::<f64, _>(StandardNormal)).collect();
        let shifts = (0..m)
            .map(|i| {
                let mut rng = keyed_rng(seed, Domain::ProblemSetup, &[i as u64]);
                (0..dim).map(|_| heterogeneity * rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
        StreamProblem {
            model: LossModel::LogisticL2 { reg },
            dim,
            clip_l1: None,
            seed,
            source: StreamSource::PlantedLogistic { shifts, weights },
            replacements: BTreeMap::new(),
        }
    }

    /// Logistic loss on a fixed dataset, rows dealt round-robin to `m` shards.
    pub fn logistic_dataset(points: Vec<DataPoint>, m: usize, reg: f64, seed: u64) -> Result<Self> {
        let dim = points.first().map(|p| p.x.len()).ok_or_else(|| Error::Data("empty dataset".into()))?;
        if points.len() < m {
            return Err(Error::Data(format!("dataset has {} rows, fewer than {m} learners", points.len())));
        }
        let mut shards = vec![Vec::new(); m];
        for (r, p) in points.into_iter().enumerate() {
            shards[r % m].push(p);
        }
        Ok(StreamProblem {
            model: LossModel::LogisticL2 { reg },
            dim,
            clip_l1: None,
            seed,
            source: StreamSource::Dataset { shards },
            replacements: BTreeMap::new(),
        })
    }

    pub fn with_clip(mut self, clip: Option<f64>) -> Self {
        self.clip_l1 = clip;
        self
    }

    /// A copy whose learner `learner` sees `point` as its `k`-th sample.
    pub fn with_replacement(&self, learner: usize, k: usize, point: DataPoint) -> Self {
        let mut out = self.clone();
        out.replacements.insert((learner, k), point);
        out
    }

    pub fn m(&self) -> usize {
        match &self.source {
            StreamSource::Gaussian { means, .. } => means.len(),
            StreamSource::PlantedLogistic { shifts, .. } => shifts.len(),
            StreamSource::Dataset { shards } => shards.len(),
        }
    }

    /// Sample `k` of learner `i`; a pure function of `(seed, i, k)`.
    pub fn sample(&self, i: usize, k: usize) -> DataPoint {
        if let Some(p) = self.replacements.get(&(i, k)) {
            return p.clone();
        }
        self.draw(i, &mut keyed_rng(self.seed, Domain::Data, &[i as u64, k as u64]))
    }

    /// A fresh draw from learner `i`'s distribution.
    pub fn draw<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> DataPoint {
        match &self.source {
            StreamSource::Gaussian { means, std } => DataPoint {
                x: means[i]
                    .iter()
                    .map(|mu| if *std == 0.0 { *mu } else { mu + std * rng.sample::<f64, _>(StandardNormal) })
                    .collect(),
                y: 0.0,
            },
            StreamSource::PlantedLogistic { shifts, weights } => {
                let x: Vec<f64> = shifts[i].iter().map(|s| s + rng.random_range(-1.0..1.0)).collect();
                let y = if rng.random::<f64>() < sigmoid(dot(weights, &x)) { 1.0 } else { -1.0 };
                DataPoint { x, y }
            }
            StreamSource::Dataset { shards } => {
                let shard = &shards[i];
                shard[rng.random_range(0..shard.len())].clone()
            }
        }
    }

    /// Per-sample gradient with optional L1 clipping.
    pub fn sample_grad(&self, theta: &[f64], p: &DataPoint) -> Result<(Vec<f64>, bool)> {
        let (_, mut g) = loss_grad(&self.model, theta, p)?;
        let clipped = match self.clip_l1 {
            Some(c) => clip_l1(&mut g, c),
            None => false,
        };
        Ok((g, clipped))
    }

    pub fn constants(&self) -> ProblemConstants {
        match (&self.model, &self.source) {
            (LossModel::Quadratic, StreamSource::Gaussian { means, std }) => {
                let centre = mean_of(means, self.dim);
                let d = means.iter().map(|c| dist2(c, &centre)).fold(0.0, f64::max);
                ProblemConstants {
                    mu: 1.0,
                    lipschitz: 1.0,
                    kappa: Some(std * (self.dim as f64).sqrt()),
                    grad_bound: Some(d),
                }
            }
            (LossModel::LogisticL2 { reg }, source) => {
                let max_sq = match source {
                    StreamSource::Dataset { shards } => {
                        shards.iter().flatten().map(|p| dot(&p.x, &p.x)).fold(0.0, f64::max)
                    }
                    StreamSource::PlantedLogistic { shifts, .. } => shifts
                        .iter()
                        .map(|s| s.iter().map(|v| (v.abs() + 1.0).powi(2)).sum::<f64>())
                        .fold(0.0, f64::max),
                    StreamSource::Gaussian { .. } => f64::INFINITY,
                };
                ProblemConstants { mu: *reg, lipschitz: reg + max_sq / 4.0, kappa: None, grad_bound: None }
            }
            (LossModel::Quadratic, _) => ProblemConstants { mu: 1.0, lipschitz: 1.0, kappa: None, grad_bound: None },
        }
    }

    /// Minimiser of the population objective when it has a closed form.
    pub fn closed_form_optimum(&self) -> Option<Vec<f64>> {
        match (&self.model, &self.source) {
            (LossModel::Quadratic, StreamSource::Gaussian { means, .. }) => Some(mean_of(means, self.dim)),
            _ => None,
        }
    }
}

pub(crate) fn mean_of(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for r in rows {
        axpy(1.0 / rows.len() as f64, r, &mut out);
    }
    out
}

/// Every point each learner has received so far.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleBuffer {
    points: Vec<Vec<DataPoint>>,
    sums: Vec<Vec<f64>>,
}

impl SampleBuffer {
    pub fn new(m: usize, dim: usize) -> Self {
        SampleBuffer { points: vec![Vec::new(); m], sums: vec![vec![0.0; dim]; m] }
    }

    /// Appends sample `k` to every learner, where `k` is the current length.
    pub fn append_round(&mut self, problem: &StreamProblem) {
        for i in 0..self.points.len() {
            let k = self.points[i].len();
            let p = problem.sample(i, k);
            axpy(1.0, &p.x, &mut self.sums[i]);
            self.points[i].push(p);
        }
    }

    /// Number of points per learner (`t + 1` after round `t`).
    pub fn len(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self, i: usize) -> &[DataPoint] {
        &self.points[i]
    }
}

/// Gradient of the empirical local objective plus the number of clipped samples.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEval {
    pub grad: Vec<f64>,
    pub clipped: usize,
}

/// `∇f_{i,t}(θ) = (1/(t+1)) Σ_{k≤t} ∇l(θ, ξ_{i,k})`, recomputed at the current `θ`.
pub fn grad_empirical(
    problem: &StreamProblem,
    buffer: &SampleBuffer,
    i: usize,
    theta: &[f64],
    t: usize,
) -> Result<GradEval> {
    let pts = buffer.points.get(i).ok_or(Error::EmptyBuffer(i))?;
    if pts.is_empty() {
        return Err(Error::EmptyBuffer(i));
    }
    if pts.len() < t + 1 {
        return Err(Error::InvalidParameter(format!(
            "learner {i} has {} buffered points, round {t} needs {}",
            pts.len(),
            t + 1
        )));
    }
    if theta.len() != problem.dim {
        return Err(Error::DimensionMismatch { expected: problem.dim, got: theta.len() });
    }
    let scale = 1.0 / (t + 1) as f64;
    // Without clipping the quadratic gradient only needs the running sum.
    if problem.model == LossModel::Quadratic && problem.clip_l1.is_none() && pts.len() == t + 1 {
        let grad = theta.iter().zip(&buffer.sums[i]).map(|(th, s)| th - s * scale).collect();
        return Ok(GradEval { grad, clipped: 0 });
    }
    let mut grad = vec![0.0; theta.len()];
    let mut clipped = 0;
    for p in &pts[..=t] {
        let (g, c) = problem.sample_grad(theta, p)?;
        clipped += c as usize;
        axpy(scale, &g, &mut grad);
    }
    Ok(GradEval { grad, clipped })
}

/// Monte-Carlo estimate of `∇F(θ)` with per-coordinate standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct McGradient {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

/// `∇F(θ)`: exact for quadratic Gaussian streams and for dataset-backed
/// problems, otherwise averaged over `mc_samples` fresh draws per learner.
pub fn global_grad(problem: &StreamProblem, theta: &[f64], mc_samples: usize, seed: u64) -> Result<McGradient> {
    let m = problem.m();
    let n = problem.dim;
    if let Some(opt) = problem.closed_form_optimum() {
        if problem.clip_l1.is_none() {
            let mean = theta.iter().zip(&opt).map(|(a, b)| a - b).collect();
            return Ok(McGradient { mean, std_err: vec![0.0; n] });
        }
    }
    if let StreamSource::Dataset { shards } = &problem.source {
        let mut mean = vec![0.0; n];
        for shard in shards {
            for p in shard {
                let (g, _) = problem.sample_grad(theta, p)?;
                axpy(1.0 / (m * shard.len()) as f64, &g, &mut mean);
            }
        }
        return Ok(McGradient { mean, std_err: vec![0.0; n] });
    }
    if mc_samples == 0 {
        return Err(Error::InvalidParameter("mc_samples must be at least 1".into()));
    }
    // Per-learner means are averaged, so the variance of the estimate is
    // (1/m²) Σ_i Var_i / N.
    let mut mean = vec![0.0; n];
    let mut var = vec![0.0; n];
    for i in 0..m {
        let mut rng = keyed_rng(seed, Domain::MonteCarlo, &[i as u64]);
        let mut s1 = vec![0.0; n];
        let mut s2 = vec![0.0; n];
        for _ in 0..mc_samples {
            let p = problem.draw(i, &mut rng);
            let (g, _) = problem.sample_grad(theta, &p)?;
            for j in 0..n {
                s1[j] += g[j];
                s2[j] += g[j] * g[j];
            }
        }
        let nn = mc_samples as f64;
        for j in 0..n {
            let mu = s1[j] / nn;
            let v = if mc_samples > 1 { (s2[j] - nn * mu * mu) / (nn - 1.0) } else { 0.0 };
            mean[j] += mu / m as f64;
            var[j] += v.max(0.0) / nn / (m * m) as f64;
        }
    }
    Ok(McGradient { mean, std_err: var.into_iter().map(f64::sqrt).collect() })
}

/// Loads a CSV with a `label` column in `{+1, −1}`. Numeric columns are kept
/// as-is; any column with a non-numeric entry is one-hot encoded over its
/// sorted distinct values.
pub fn load_dataset_csv(path: &Path) -> Result<Vec<DataPoint>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Data(format!("{}: no \"label\" column", path.display())))?;
    let rows: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }

    enum Column {
        Numeric(usize),
        OneHot(usize, Vec<String>),
    }
    let mut columns = Vec::new();
    for c in (0..headers.len()).filter(|&c| c != label_col) {
        if rows.iter().all(|r| r.get(c).is_some_and(|v| v.parse::<f64>().is_ok())) {
            columns.push(Column::Numeric(c));
        } else {
            let mut levels: Vec<String> = rows.iter().filter_map(|r| r.get(c)).map(str::to_owned).collect();
            levels.sort();
            levels.dedup();
            columns.push(Column::OneHot(c, levels));
        }
    }

    rows.iter()
        .enumerate()
        .map(|(line, r)| {
            let raw = r.get(label_col).unwrap_or("");
            let y = match raw.parse::<f64>() {
                Ok(v) if v == 1.0 || v == -1.0 => v,
                _ => {
                    return Err(Error::Data(format!(
                        "{} row {}: label {raw:?} is not +1 or -1",
                        path.display(),
                        line + 2
                    )))
                }
            };
            let mut x = Vec::new();
            for col in &columns {
                match col {
                    Column::Numeric(c) => x.push(r[*c].parse::<f64>().unwrap_or(f64::NAN)),
                    Column::OneHot(c, levels) => {
                        x.extend(levels.iter().map(|l| if r.get(*c) == Some(l.as_str()) { 1.0 } else { 0.0 }))
                    }
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("{} row {}: non-finite feature", path.display(), line + 2)));
            }
            Ok(DataPoint { x, y })
        })
        .collect()
}

/// Largest per-sample gradient norm over a point set, for bound checks.
pub fn max_sample_grad_norm(problem: &StreamProblem, theta: &[f64], pts: &[DataPoint]) -> Result<f64> {
    pts.iter().try_fold(0.0f64, |acc, p| Ok(acc.max(norm2(&problem.sample_grad(theta, p)?.0))))
}
