//! Laplace perturbation noise with polynomially decaying scale, and the
//! stepsize schedule it must be compatible with.

use std::fmt;

use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::rng::{keyed_rng, Domain};

/// Per-coordinate standard deviation `sigma0 / (t+1)^varsigma`.
///
/// `sigma0 = 0` is accepted and means the noise is switched off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma0: f64,
    pub varsigma: f64,
}

impl NoiseSchedule {
    pub fn new(sigma0: f64, varsigma: f64) -> Self {
        NoiseSchedule { sigma0, varsigma }
    }

    pub fn std_at(&self, t: usize) -> f64 {
        self.sigma0 / ((t + 1) as f64).powf(self.varsigma)
    }

    /// Laplace scale `ν = σ/√2`, so the per-coordinate variance `2ν²` is `σ²`.
    pub fn laplace_scale_at(&self, t: usize) -> f64 {
        self.std_at(t) / std::f64::consts::SQRT_2
    }

    pub fn is_silent(&self) -> bool {
        self.sigma0 == 0.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, t: usize, dim: usize, rng: &mut R) -> Vec<f64> {
        let scale = self.laplace_scale_at(t);
        (0..dim).map(|_| laplace(scale, rng)).collect()
    }
}

/// Inverse-CDF Laplace draw with scale `b`.
pub fn laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// `lambda0 / (t+1)^v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepsizeSchedule {
    pub lambda0: f64,
    pub v: f64,
}

impl StepsizeSchedule {
    pub fn new(lambda0: f64, v: f64) -> Self {
        StepsizeSchedule { lambda0, v }
    }

    pub fn at(&self, t: usize) -> f64 {
        self.lambda0 / ((t + 1) as f64).powf(self.v)
    }
}

/// Which shared variable a noise vector perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseTag {
    /// Noise on the tracking variable (`s`, or `y` for push-pull).
    Zeta,
    /// Noise on the model parameter.
    Theta,
}

impl NoiseTag {
    fn domain(self) -> Domain {
        match self {
            NoiseTag::Zeta => Domain::NoiseZeta,
            NoiseTag::Theta => Domain::NoiseTheta,
        }
    }
}

/// Schedules of one learner for both shared variables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerNoise {
    pub zeta: NoiseSchedule,
    pub theta: NoiseSchedule,
}

impl LearnerNoise {
    pub fn get(&self, tag: NoiseTag) -> &NoiseSchedule {
        match tag {
            NoiseTag::Zeta => &self.zeta,
            NoiseTag::Theta => &self.theta,
        }
    }
}

/// Per-learner schedules plus the seed that keys every draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub learners: Vec<LearnerNoise>,
    pub seed: u64,
}

impl NoisePlan {
    pub fn uniform(m: usize, schedule: LearnerNoise, seed: u64) -> Self {
        NoisePlan { learners: vec![schedule; m], seed }
    }

    /// The noise vector learner `agent` adds to variable `tag` in round `t`.
    /// The sub-stream depends only on `(seed, agent, tag, t)`.
    pub fn draw(&self, agent: usize, tag: NoiseTag, t: usize, dim: usize) -> Vec<f64> {
        let sched = self.learners[agent].get(tag);
        if sched.is_silent() {
            return vec![0.0; dim];
        }
        let mut rng = keyed_rng(self.seed, tag.domain(), &[agent as u64, t as u64]);
        sched.sample(t, dim, &mut rng)
    }

    /// Same schedules with every `sigma0` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let learners = self
            .learners
            .iter()
            .map(|l| LearnerNoise {
                zeta: NoiseSchedule::new(l.zeta.sigma0 * factor, l.zeta.varsigma),
                theta: NoiseSchedule::new(l.theta.sigma0 * factor, l.theta.varsigma),
            })
            .collect();
        NoisePlan { learners, seed: self.seed }
    }

    pub fn max_varsigma(&self) -> f64 {
        self.learners.iter().flat_map(|l| [l.zeta.varsigma, l.theta.varsigma]).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A violated noise/stepsize compatibility condition.
#[derive(Clone, Debug, PartialEq)]
pub enum CompatViolation {
    StepExponentOutOfRange { v: f64 },
    StepScaleNonPositive { lambda0: f64 },
    NoiseScaleInvalid { learner: usize, tag: NoiseTag, sigma0: f64 },
    DecayOutOfRange { learner: usize, tag: NoiseTag, varsigma: f64 },
    DecayNotBelowStep { learner: usize, tag: NoiseTag, varsigma: f64, v: f64 },
}

fn tag_symbol(tag: NoiseTag) -> &'static str {
    match tag {
        NoiseTag::Zeta => "ς_ζ",
        NoiseTag::Theta => "ς_ϑ",
    }
}

impl fmt::Display for CompatViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompatViolation::StepExponentOutOfRange { v } => write!(f, "v ∉ (1/2, 1): v = {v}"),
            CompatViolation::StepScaleNonPositive { lambda0 } => write!(f, "λ0 must be positive, got {lambda0}"),
            CompatViolation::NoiseScaleInvalid { learner, tag, sigma0 } => write!(
                f,
                "learner {}: σ0 for {} must be finite and nonnegative, got {sigma0}",
                learner + 1,
                tag_symbol(*tag)
            ),
            CompatViolation::DecayOutOfRange { learner, tag, varsigma } => {
                write!(f, "learner {}: {} = {varsigma} ∉ (1/2, 1)", learner + 1, tag_symbol(*tag))
            }
            CompatViolation::DecayNotBelowStep { learner, tag, varsigma, v } => write!(
                f,
                "Assumption 4 violated: learner {} has {} = {varsigma}, ς ≥ v = {v}",
                learner + 1,
                tag_symbol(*tag)
            ),
        }
    }
}

/// Empty iff every schedule is in range and decays strictly slower than the stepsize.
pub fn validate_compat(plan: &[LearnerNoise], step: &StepsizeSchedule) -> Vec<CompatViolation> {
    let mut out = Vec::new();
    if !(step.v > 0.5 && step.v < 1.0) {
        out.push(CompatViolation::StepExponentOutOfRange { v: step.v });
    }
    if !(step.lambda0 > 0.0 && step.lambda0.is_finite()) {
        out.push(CompatViolation::StepScaleNonPositive { lambda0: step.lambda0 });
    }
    for (i, l) in plan.iter().enumerate() {
        for tag in [NoiseTag::Zeta, NoiseTag::Theta] {
            let s = l.get(tag);
            if !(s.sigma0 >= 0.0 && s.sigma0.is_finite()) {
                out.push(CompatViolation::NoiseScaleInvalid { learner: i, tag, sigma0: s.sigma0 });
            }
            if !(s.varsigma > 0.5 && s.varsigma < 1.0) {
                out.push(CompatViolation::DecayOutOfRange { learner: i, tag, varsigma: s.varsigma });
            }
            if !(s.varsigma < step.v) {
                out.push(CompatViolation::DecayNotBelowStep { learner: i, tag, varsigma: s.varsigma, v: step.v });
            }
        }
    }
    out
}

/// A decay exponent given either as one number or as an affine rule `a + b·i`
/// over 1-based learner indices (written `"0.5+0.01i"`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExponentSpec {
    Constant(f64),
    Rule(String),
}

impl ExponentSpec {
    pub fn expand(&self, m: usize) -> Result<Vec<f64>, String> {
        match self {
            ExponentSpec::Constant(x) => Ok(vec![*x; m]),
            ExponentSpec::Rule(s) => {
                let (a, b) = parse_affine_rule(s)?;
                Ok((1..=m).map(|i| a + b * i as f64).collect())
            }
        }
    }
}

fn parse_affine_rule(s: &str) -> Result<(f64, f64), String> {
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || format!("cannot parse exponent rule {s:?}; expected the form \"a+b i\"");
    let body = compact.strip_suffix('i').ok_or_else(bad)?;
    let split = body.rfind(['+', '-']).filter(|&p| p > 0).ok_or_else(bad)?;
    let a: f64 = body[..split].parse().map_err(|_| bad())?;
    let b: f64 = body[split..].trim_start_matches('+').parse().map_err(|_| bad())?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn std_schedule_values() {
        assert_eq!(NoiseSchedule::new(1.0, 0.55).std_at(0), 1.0);
        assert!((NoiseSchedule::new(1.0, 0.5).std_at(3) - 0.5).abs() < 1e-15);
        let s = NoiseSchedule::new(0.01, 0.51);
        assert_eq!(s.std_at(99), 0.01 * 100f64.powf(-0.51));
    }

    #[test]
    fn zero_scale_gives_zero_noise() {
        let plan = NoisePlan::uniform(
            2,
            LearnerNoise { zeta: NoiseSchedule::new(0.0, 0.6), theta: NoiseSchedule::new(0.0, 0.6) },
            1,
        );
        assert_eq!(plan.draw(1, NoiseTag::Zeta, 5, 3), vec![0.0; 3]);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert_eq!(NoiseSchedule::new(0.0, 0.6).sample(0, 4, &mut rng), vec![0.0; 4]);
    }

    #[test]
    fn draws_are_keyed() {
        let plan = NoisePlan::uniform(
            3,
            LearnerNoise { zeta: NoiseSchedule::new(1.0, 0.6), theta: NoiseSchedule::new(1.0, 0.6) },
            9,
        );
        let a = plan.draw(2, NoiseTag::Theta, 17, 4);
        let _ = plan.draw(0, NoiseTag::Zeta, 3, 4);
        assert_eq!(a, plan.draw(2, NoiseTag::Theta, 17, 4));
        assert_ne!(a, plan.draw(2, NoiseTag::Zeta, 17, 4));
        assert_ne!(a, plan.draw(1, NoiseTag::Theta, 17, 4));
    }

    #[test]
    fn compat_accepts_uniform_exponent_below_step() {
        let l = LearnerNoise { zeta: NoiseSchedule::new(1.0, 0.55), theta: NoiseSchedule::new(1.0, 0.55) };
        assert!(validate_compat(&[l; 10], &StepsizeSchedule::new(1.0, 0.6)).is_empty());
    }

    #[test]
    fn compat_rejects_boundary_exponent() {
        let mut plan =
            vec![LearnerNoise { zeta: NoiseSchedule::new(1.0, 0.55), theta: NoiseSchedule::new(1.0, 0.55) }; 3];
        plan[2].theta.varsigma = 0.6;
        let report = validate_compat(&plan, &StepsizeSchedule::new(1.0, 0.6));
        assert_eq!(report.len(), 1);
        assert!(report[0].to_string().contains("ς ≥ v"));
    }

    #[test]
    fn compat_rejects_step_exponent_out_of_range() {
        let l = LearnerNoise { zeta: NoiseSchedule::new(1.0, 0.55), theta: NoiseSchedule::new(1.0, 0.55) };
        let report = validate_compat(&[l], &StepsizeSchedule::new(1.0, 0.4));
        assert!(report.iter().any(|v| v.to_string().contains("v ∉ (1/2, 1)")));
    }

    #[test]
    fn affine_rule_expands_over_one_based_indices() {
        let spec: ExponentSpec = serde_json::from_str("\"0.5+0.01i\"").unwrap();
        let xs = spec.expand(10).unwrap();
        assert!((xs[0] - 0.51).abs() < 1e-12);
        assert!((xs[9] - 0.60).abs() < 1e-12);
        let c: ExponentSpec = serde_json::from_str("0.55").unwrap();
        assert_eq!(c.expand(2).unwrap(), vec![0.55, 0.55]);
        assert!(ExponentSpec::Rule("0.5*i".into()).expand(2).is_err());
        let neg = ExponentSpec::Rule("0.9 - 0.02 i".into()).expand(2).unwrap();
        assert!((neg[1] - 0.86).abs() < 1e-12);
    }
}
