//! Comparison algorithms: OD-LinBAI (uncoded elimination), a single round
//! spending the whole budget, and per-coordinate estimation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{self, DesignOracle};
use crate::environment::{Environment, NoiseModel, PullTag, Transcript};
use crate::instance::{rank_by_score, validate, ArmId, Instance};
use crate::linalg;
use crate::secure::{self, estimate, SecureConfig};
use crate::{Error, Result};

/// Common output of every algorithm.
#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmResult {
    pub algorithm: String,
    pub declared_best: ArmId,
    pub pulls_used: usize,
    pub budget: usize,
    /// Candidate set after each elimination round; empty for one-shot
    /// algorithms.
    pub survivors: Vec<Vec<ArmId>>,
    #[serde(skip)]
    pub transcript: Transcript,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    #[default]
    GOptimal,
    Uniform,
}

/// Spread `total` pulls proportionally to `weights` by largest remainder,
/// with at least one pull per positive weight.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|&w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = weights
        .iter()
        .zip(&exact)
        .map(|(&w, &x)| if w > 0.0 { (x.floor() as usize).max(1) } else { 0 })
        .collect();
    let mut assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut k = 0;
    while assigned < total && !order.is_empty() {
        counts[order[k % order.len()]] += 1;
        assigned += 1;
        k += 1;
    }
    while assigned > total {
        let (i, _) = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 1)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("total is at least the support size");
        counts[i] -= 1;
        assigned -= 1;
    }
    counts
}

/// Elimination over `log d` rounds without coding; rounds after the first
/// play `B B^T a(i)` for an orthonormal basis `B` of the candidates' span.
pub fn od_linbai(instance: &Instance, t: usize, seed: u64, oracle: &DesignOracle, noise: NoiseModel) -> Result<AlgorithmResult> {
    validate(instance).into_result()?;
    let d = instance.d();
    let m = design::budget_m(t, instance.k(), d)?;
    let mut env = Environment::new(instance, t, seed).with_noise_model(noise);
    let mut candidates: Vec<ArmId> = instance.ids().collect();
    let mut survivors = Vec::new();
    for r in 1..=linalg::log2_exact(d) {
        let arms: Vec<DVector<f64>> = candidates.iter().map(|&a| instance.arm(a).clone()).collect();
        let design = oracle.design(&arms)?;
        let alloc = design::allocate(&design.weights, m);
        let projector: DMatrix<f64> = &design.basis * design.basis.transpose();
        let mut obs = Vec::with_capacity(alloc.total);
        for (k, &a) in candidates.iter().enumerate() {
            if alloc.counts[k] == 0 {
                continue;
            }
            let h = env.register(r, PullTag::Uncoded(a), &projector * &arms[k])?;
            for _ in 0..alloc.counts[k] {
                obs.push((k, env.pull(h)?.1));
            }
        }
        let est = estimate(r, &candidates, &arms, &design.basis, &obs)?;
        candidates = est.best(d >> r);
        survivors.push(candidates.clone());
    }
    finish("od-linbai", candidates[0], t, survivors, env)
}

/// One design, all `t` pulls, one estimate.
pub fn single_round(
    instance: &Instance,
    t: usize,
    seed: u64,
    mode: DesignMode,
    oracle: &DesignOracle,
    noise: NoiseModel,
) -> Result<AlgorithmResult> {
    validate(instance).into_result()?;
    let ids: Vec<ArmId> = instance.ids().collect();
    let (weights, basis) = match mode {
        DesignMode::GOptimal => {
            let design = oracle.design(instance.arms())?;
            (design.weights.clone(), design.basis.clone())
        }
        DesignMode::Uniform => (vec![1.0; ids.len()], DMatrix::identity(instance.d(), instance.d())),
    };
    let support = weights.iter().filter(|&&w| w > 0.0).count();
    if t < support {
        return Err(Error::InvalidArgument(format!("T = {t} is below the design support {support}")));
    }
    let counts = largest_remainder(&weights, t);
    let mut env = Environment::new(instance, t, seed).with_noise_model(noise);
    let mut obs = Vec::with_capacity(t);
    for (k, &a) in ids.iter().enumerate() {
        if counts[k] == 0 {
            continue;
        }
        let h = env.register(1, PullTag::Uncoded(a), instance.arm(a).clone())?;
        for _ in 0..counts[k] {
            obs.push((k, env.pull(h)?.1));
        }
    }
    let est = estimate(1, &ids, instance.arms(), &basis, &obs)?;
    let name = match mode {
        DesignMode::GOptimal => "single-round",
        DesignMode::Uniform => "single-round-uniform",
    };
    finish(name, est.best(1)[0], t, Vec::new(), env)
}

/// Plays each coordinate direction `floor(t/d)` times and ranks arms by
/// the coordinate-wise sample means. Leftover `t mod d` pulls are unused.
pub fn per_entry(instance: &Instance, t: usize, seed: u64, noise: NoiseModel) -> Result<AlgorithmResult> {
    validate(instance).into_result()?;
    let d = instance.d();
    if t < d {
        return Err(Error::InvalidArgument(format!("T = {t} is below d = {d}")));
    }
    let n = t / d;
    let mut env = Environment::new(instance, t, seed).with_noise_model(noise);
    let mut theta_hat = DVector::zeros(d);
    for i in 0..d {
        let h = env.register(1, PullTag::Direction(i), DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 }))?;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += env.pull(h)?.1;
        }
        theta_hat[i] = sum / n as f64;
    }
    let ids: Vec<ArmId> = instance.ids().collect();
    let best = rank_by_score(&ids, |a| instance.arm(a).dot(&theta_hat))[0];
    finish("per-entry", best, t, Vec::new(), env)
}

fn finish(name: &str, declared_best: ArmId, t: usize, survivors: Vec<Vec<ArmId>>, env: Environment<'_>) -> Result<AlgorithmResult> {
    let transcript = env.into_transcript();
    Ok(AlgorithmResult {
        algorithm: name.into(),
        declared_best,
        pulls_used: transcript.len(),
        budget: t,
        survivors,
        transcript,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Secure,
    OdLinbai,
    SingleRound,
    SingleRoundUniform,
    PerEntry,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Secure,
        Algorithm::OdLinbai,
        Algorithm::SingleRound,
        Algorithm::SingleRoundUniform,
        Algorithm::PerEntry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Secure => "secure",
            Algorithm::OdLinbai => "od-linbai",
            Algorithm::SingleRound => "single-round",
            Algorithm::SingleRoundUniform => "single-round-uniform",
            Algorithm::PerEntry => "per-entry",
        }
    }

    pub fn run(self, instance: &Instance, t: usize, seed: u64, oracle: &DesignOracle, noise: NoiseModel) -> Result<AlgorithmResult> {
        let config = SecureConfig {
            design: *oracle.params(),
            noise,
            ..SecureConfig::default()
        };
        self.run_with(instance, t, seed, oracle, &config)
    }

    /// As [`Algorithm::run`], with the noise model and the secure
    /// algorithm's knobs taken from `config`.
    pub fn run_with(self, instance: &Instance, t: usize, seed: u64, oracle: &DesignOracle, config: &SecureConfig) -> Result<AlgorithmResult> {
        let noise = config.noise;
        match self {
            Algorithm::Secure => secure::run_with(instance, t, seed, config, oracle).map(|o| o.result),
            Algorithm::OdLinbai => od_linbai(instance, t, seed, oracle, noise),
            Algorithm::SingleRound => single_round(instance, t, seed, DesignMode::GOptimal, oracle, noise),
            Algorithm::SingleRoundUniform => single_round(instance, t, seed, DesignMode::Uniform, oracle, noise),
            Algorithm::PerEntry => per_entry(instance, t, seed, noise),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm {s:?}")))
    }
}
