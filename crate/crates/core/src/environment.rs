//! The reward oracle and the transcript it produces.
//!
//! The learner sees every [`PullRecord`] (vector and reward). An observer
//! sees an [`ObserverView`]: the same time-ordered vectors with the rewards
//! stripped at the type level.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::{allocate, Design};
use crate::harness::stats::{wilson, Interval, Z95};
use crate::instance::{ArmId, Instance};
use crate::linalg;
use crate::stream::{self, purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `sigma * Z` with `Z` standard normal.
    #[default]
    Gaussian,
    /// Uniform on `[-sqrt(3) sigma, sqrt(3) sigma]` (variance `sigma^2`).
    Bounded,
}

/// What a pull played.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PullTag {
    /// An original arm.
    Uncoded(ArmId),
    /// The sum of subset `subset` of the round-`round` partition.
    Coded { round: usize, subset: usize },
    /// A coordinate direction `e_i`.
    Direction(usize),
}

impl fmt::Display for PullTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PullTag::Uncoded(a) => write!(f, "uncoded:{a}"),
            PullTag::Coded { round, subset } => write!(f, "coded:{round}/{subset}"),
            PullTag::Direction(i) => write!(f, "direction:{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PullRecord {
    /// One-based and contiguous.
    pub time: usize,
    pub round: usize,
    pub tag: PullTag,
    /// Index into [`Transcript::vectors`].
    pub vector: usize,
    pub reward: f64,
}

/// Handle to a vector registered with an [`Environment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VectorHandle {
    index: usize,
    round: usize,
    tag: PullTag,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    records: Vec<PullRecord>,
    vectors: Vec<DVector<f64>>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PullRecord] {
        &self.records
    }

    /// Record at one-based `time`.
    pub fn at(&self, time: usize) -> Option<&PullRecord> {
        time.checked_sub(1).and_then(|i| self.records.get(i))
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    pub fn played(&self, record: &PullRecord) -> &DVector<f64> {
        &self.vectors[record.vector]
    }

    pub fn rounds(&self) -> usize {
        self.records.iter().map(|r| r.round).max().unwrap_or(0)
    }

    pub fn observer_view(&self) -> ObserverView {
        ObserverView {
            records: self
                .records
                .iter()
                .map(|r| ObserverRecord {
                    time: r.time,
                    round: r.round,
                    vector: r.vector,
                })
                .collect(),
            vectors: self.vectors.clone(),
        }
    }

    /// CSV with columns `time,round,tag,vector,reward`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "round", "tag", "vector", "reward"])?;
        for r in &self.records {
            w.write_record([
                r.time.to_string(),
                r.round.to_string(),
                r.tag.to_string(),
                vector_json(&self.vectors[r.vector]),
                r.reward.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV with columns `time,round,tag,vector`: the observer's export.
    pub fn write_observer_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "round", "tag", "vector"])?;
        for r in &self.records {
            w.write_record([
                r.time.to_string(),
                r.round.to_string(),
                r.tag.to_string(),
                vector_json(&self.vectors[r.vector]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn vector_json(v: &DVector<f64>) -> String {
    serde_json::to_string(&v.iter().copied().collect::<Vec<f64>>()).expect("finite floats serialise")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObserverRecord {
    pub time: usize,
    pub round: usize,
    pub vector: usize,
}

/// Reward-free projection of a transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverView {
    pub records: Vec<ObserverRecord>,
    pub vectors: Vec<DVector<f64>>,
}

impl ObserverView {
    pub fn played(&self, record: &ObserverRecord) -> &DVector<f64> {
        &self.vectors[record.vector]
    }

    pub fn last_round(&self) -> usize {
        self.records.iter().map(|r| r.round).max().unwrap_or(0)
    }

    /// Distinct vector indices played in `round`, in order of first play.
    pub fn distinct_in_round(&self, round: usize) -> Vec<usize> {
        let mut seen = Vec::new();
        for r in self.records.iter().filter(|r| r.round == round) {
            if !seen.contains(&r.vector) {
                seen.push(r.vector);
            }
        }
        seen
    }
}

/// Reward oracle for one run. Owns its noise stream and its transcript.
pub struct Environment<'a> {
    instance: &'a Instance,
    noise: NoiseModel,
    rng: ChaCha8Rng,
    budget: usize,
    transcript: Transcript,
    means: Vec<f64>,
    interned: HashMap<(usize, PullTag), usize>,
}

impl<'a> Environment<'a> {
    /// Environment whose noise comes from the `(seed, NOISE)` stream.
    pub fn new(instance: &'a Instance, budget: usize, seed: u64) -> Self {
        Self::with_rng(instance, budget, stream::stream(seed, &[purpose::NOISE]))
    }

    pub fn with_rng(instance: &'a Instance, budget: usize, rng: ChaCha8Rng) -> Self {
        Self {
            instance,
            noise: NoiseModel::Gaussian,
            rng,
            budget,
            transcript: Transcript::default(),
            means: Vec::new(),
            interned: HashMap::new(),
        }
    }

    pub fn with_noise_model(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn instance(&self) -> &Instance {
        self.instance
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn pulls(&self) -> usize {
        self.transcript.len()
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    /// Register the vector played under `(round, tag)`. Registering the same
    /// key again returns the existing handle.
    pub fn register(&mut self, round: usize, tag: PullTag, vector: DVector<f64>) -> Result<VectorHandle> {
        if vector.len() != self.instance.d() {
            return Err(Error::DimensionMismatch {
                expected: self.instance.d(),
                found: vector.len(),
            });
        }
        let index = match self.interned.get(&(round, tag)) {
            Some(&i) => i,
            None => {
                let i = self.transcript.vectors.len();
                self.means.push(vector.dot(self.instance.theta_star()));
                self.transcript.vectors.push(vector);
                self.interned.insert((round, tag), i);
                i
            }
        };
        Ok(VectorHandle { index, round, tag })
    }

    fn draw_noise(&mut self) -> f64 {
        let sigma = self.instance.noise_std();
        if sigma == 0.0 {
            return 0.0;
        }
        match self.noise {
            NoiseModel::Gaussian => sigma * self.rng.sample::<f64, _>(StandardNormal),
            NoiseModel::Bounded => sigma * 3f64.sqrt() * (2.0 * self.rng.random::<f64>() - 1.0),
        }
    }

    /// Play a registered vector once; returns `(time, reward)`.
    pub fn pull(&mut self, h: VectorHandle) -> Result<(usize, f64)> {
        let time = self.transcript.len() + 1;
        if time > self.budget {
            return Err(Error::BudgetExceeded {
                budget: self.budget,
                attempted: time,
            });
        }
        let reward = self.means[h.index] + self.draw_noise();
        self.transcript.records.push(PullRecord {
            time,
            round: h.round,
            tag: h.tag,
            vector: h.index,
            reward,
        });
        Ok((time, reward))
    }

    /// Register and play in one step.
    pub fn pull_vector(&mut self, round: usize, tag: PullTag, vector: &DVector<f64>) -> Result<f64> {
        let h = self.register(round, tag, vector.clone())?;
        self.pull(h).map(|(_, r)| r)
    }
}

// ---------------------------------------------------------------------------
// Concentration of the least-squares estimator

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub hits: usize,
    pub trials: usize,
    pub rate: f64,
    pub interval: Interval,
}

/// Empirical frequency of `<theta_hat - theta*, w> >= sqrt(2 ||w||^2_{V^-1} log(1/delta))`
/// for a random unit `w` per trial, with `ceil(n pi(i))` pulls per arm and no
/// regularisation. `design` must be over `instance.arms()` in order.
pub fn concentration_check(
    instance: &Instance,
    design: &Design,
    n: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<TailEstimate> {
    if design.weights.len() != instance.k() {
        return Err(Error::DimensionMismatch {
            expected: instance.k(),
            found: design.weights.len(),
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta}")));
    }
    let d = instance.d();
    let alloc = allocate(&design.weights, n);
    let mut v = nalgebra::DMatrix::zeros(d, d);
    for (a, &c) in instance.arms().iter().zip(&alloc.counts) {
        v.ger(c as f64, a, a, 1.0);
    }
    let chol = linalg::cholesky(&v).ok_or(Error::SingularV)?;
    let log_term = (1.0 / delta).ln();

    let mut hits = 0;
    for trial in 0..trials {
        let trial_seed = stream::derive_seed(seed, &[trial as u64]);
        let mut probe = stream::stream(trial_seed, &[purpose::PROBE]);
        let w = loop {
            let w = DVector::from_fn(d, |_, _| probe.sample::<f64, _>(StandardNormal));
            let norm = w.norm();
            if norm > 1e-12 {
                break w / norm;
            }
        };
        let mut env = Environment::new(instance, alloc.total, trial_seed);
        let mut rhs = DVector::zeros(d);
        for (i, &c) in alloc.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let h = env.register(1, PullTag::Uncoded(ArmId(i)), instance.arms()[i].clone())?;
            for _ in 0..c {
                let (_, x) = env.pull(h)?;
                rhs.axpy(x, &instance.arms()[i], 1.0);
            }
        }
        let theta_hat = chol.solve(&rhs);
        let dev = (theta_hat - instance.theta_star()).dot(&w);
        let radius = (2.0 * linalg::inverse_quadratic(&chol, &w) * log_term).sqrt();
        if dev >= radius {
            hits += 1;
        }
    }
    Ok(TailEstimate {
        hits,
        trials,
        rate: hits as f64 / trials.max(1) as f64,
        interval: wilson(hits, trials, Z95),
    })
}
