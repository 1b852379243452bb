//! Coded elimination: an uncoded first round over all arms, then rounds in
//! which every played vector is a sum over a random subset of the arms
//! fixed after round 1, so the transcript does not single out survivors.

pub mod coding;
pub mod estimate;

use nalgebra::DVector;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::AlgorithmResult;
use crate::design::{self, DesignOracle, DesignParams, PullAllocation};
use crate::environment::{Environment, NoiseModel, PullTag, Transcript};
use crate::instance::{rank_by_score, validate, ArmId, Instance};
use crate::linalg;
use crate::stream::{self, purpose};
use crate::{Error, Result};

pub use coding::{
    coded_vector, decode, match_subsets, noise_covariance, CodingState, DecodeChain, MultisetPartition,
    NoiseCovariance, PullSelection, RowSumSummary, Subset,
};
pub use estimate::{estimate, EstimationState};

/// How the round-1 dummies are picked from the design support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DummyRule {
    /// Seeded uniform draw from the support minus the survivors.
    #[default]
    Uniform,
    /// The heaviest design weights (ties to the lower id).
    MaxWeight,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SecureConfig {
    pub design: DesignParams,
    pub dummies: DummyRule,
    pub selection: PullSelection,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundReport {
    pub round: usize,
    /// Allocation over the round's candidate set.
    pub allocation: Vec<(ArmId, usize)>,
    pub pulls: usize,
    pub design_dim: usize,
    pub support: usize,
    pub estimate: EstimationState,
    /// Decoded rewards, aligned with `CodingState::chains[round - 1]`.
    pub decoded: Vec<f64>,
    pub row_sums: Option<RowSumSummary>,
    pub survivors: Vec<ArmId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub m: usize,
    pub budget: usize,
    pub pulls_used: usize,
    pub dummies: Vec<ArmId>,
    pub rounds: Vec<RoundReport>,
    pub partitions: Vec<MultisetPartition>,
}

#[derive(Debug, Clone)]
pub struct SecureOutcome {
    pub result: AlgorithmResult,
    pub diagnostics: Diagnostics,
    pub coding: CodingState,
}

impl SecureOutcome {
    pub fn declared_best(&self) -> ArmId {
        self.result.declared_best
    }

    pub fn transcript(&self) -> &Transcript {
        &self.result.transcript
    }
}

pub struct Round1 {
    pub survivors: Vec<ArmId>,
    pub dummies: Vec<ArmId>,
    pub partition: MultisetPartition,
    pub estimate: EstimationState,
    /// Round-1 pull times per arm of the partition, by subset position.
    pub pull_times: Vec<Vec<usize>>,
    pub report: RoundReport,
}

/// Uncoded G-optimal round over every arm, elimination to `d/2`, and the
/// dummy draw.
pub fn round1(
    instance: &Instance,
    m: usize,
    env: &mut Environment<'_>,
    rng: &mut ChaCha8Rng,
    oracle: &DesignOracle,
    rule: DummyRule,
) -> Result<Round1> {
    if m < 1 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    let d = instance.d();
    let ids: Vec<ArmId> = instance.ids().collect();
    let design = oracle.design_for(instance, &ids)?;
    let alloc = design::allocate(&design.weights, m);
    let mut times: Vec<Vec<usize>> = vec![Vec::new(); ids.len()];
    let mut obs = Vec::with_capacity(alloc.total);
    for (k, &a) in ids.iter().enumerate() {
        if alloc.counts[k] == 0 {
            continue;
        }
        let h = env.register(1, PullTag::Uncoded(a), instance.arm(a).clone())?;
        for _ in 0..alloc.counts[k] {
            let (t, x) = env.pull(h)?;
            times[k].push(t);
            obs.push((k, x));
        }
    }
    let est = estimate(1, &ids, instance.arms(), &design.basis, &obs)?;
    let survivors = est.best(d / 2);

    let support = design.support();
    let pool: Vec<usize> = support.iter().copied().filter(|&k| !survivors.contains(&ids[k])).collect();
    if pool.len() < d / 2 {
        return Err(Error::InsufficientDummies {
            needed: d / 2,
            available: pool.len(),
        });
    }
    let mut dummies: Vec<ArmId> = match rule {
        DummyRule::Uniform => index::sample(rng, pool.len(), d / 2).into_iter().map(|j| ids[pool[j]]).collect(),
        DummyRule::MaxWeight => {
            let pool_ids: Vec<ArmId> = pool.iter().map(|&k| ids[k]).collect();
            rank_by_score(&pool_ids, |a| design.weights[a.0])[..d / 2].to_vec()
        }
    };
    dummies.sort_unstable();

    let mut fixed = survivors.clone();
    fixed.extend_from_slice(&dummies);
    let partition = MultisetPartition::singletons(&fixed);
    let pull_times = partition.subsets.iter().map(|s| times[s.anchor.0].clone()).collect();
    let report = RoundReport {
        round: 1,
        allocation: allocation_pairs(&ids, &alloc),
        pulls: alloc.total,
        design_dim: design.dim(),
        support: support.len(),
        estimate: est.clone(),
        decoded: Vec::new(),
        row_sums: None,
        survivors: survivors.clone(),
    };
    Ok(Round1 {
        survivors,
        dummies,
        partition,
        estimate: est,
        pull_times,
        report,
    })
}

fn allocation_pairs(ids: &[ArmId], alloc: &PullAllocation) -> Vec<(ArmId, usize)> {
    ids.iter().copied().zip(alloc.counts.iter().copied()).filter(|&(_, c)| c > 0).collect()
}

/// Run with the default configuration.
pub fn run(instance: &Instance, t: usize, seed: u64) -> Result<SecureOutcome> {
    let config = SecureConfig::default();
    let oracle = DesignOracle::new(config.design);
    run_with(instance, t, seed, &config, &oracle)
}

pub fn run_with(
    instance: &Instance,
    t: usize,
    seed: u64,
    config: &SecureConfig,
    oracle: &DesignOracle,
) -> Result<SecureOutcome> {
    validate(instance).into_result()?;
    let d = instance.d();
    let m = design::budget_m(t, instance.k(), d)?;
    let rounds = linalg::log2_exact(d);
    let mut env = Environment::new(instance, t, seed).with_noise_model(config.noise);
    let mut rng = stream::stream(seed, &[purpose::ALGORITHM]);

    let r1 = round1(instance, m, &mut env, &mut rng, oracle, config.dummies)?;
    let mut coding = CodingState::new(r1.partition, config.selection);
    for (s, times) in r1.pull_times.iter().enumerate() {
        for &time in times {
            coding.record_pull(1, s, time);
        }
    }
    let mut reports = vec![r1.report];
    let mut survivor_sets = vec![r1.survivors.clone()];
    let mut candidates = r1.survivors;

    for r in 2..=rounds {
        let arms: Vec<DVector<f64>> = candidates.iter().map(|&a| instance.arm(a).clone()).collect();
        let design = oracle.design(&arms)?;
        let mut alloc = design::allocate(&design.weights, m);
        // Every candidate is played at least once so its subset exists at
        // this level for later decodes.
        for c in alloc.counts.iter_mut() {
            *c = (*c).max(1);
        }
        alloc.total = alloc.counts.iter().sum();

        let partition = match_subsets(coding.partition(r - 1), &candidates, &mut rng)?;
        coding.push_partition(partition)?;
        let subsets = coding.partition(r).subsets.clone();
        for (s, subset) in subsets.iter().enumerate() {
            let k = candidates
                .binary_search(&subset.anchor)
                .map_err(|_| Error::StructureViolation(format!("anchor {} is not a candidate", subset.anchor)))?;
            let h = env.register(
                r,
                PullTag::Coded { round: r, subset: s },
                coded_vector(&subset.members, instance),
            )?;
            for _ in 0..alloc.counts[k] {
                let (time, _) = env.pull(h)?;
                coding.record_pull(r, s, time);
            }
        }

        let chains = coding.build_chains(r)?;
        let mut decoded = Vec::with_capacity(chains.len());
        let mut obs = Vec::with_capacity(chains.len());
        for chain in &chains {
            let x = decode(chain, env.transcript())?;
            let k = candidates.binary_search(&chain.target).expect("chain target is a candidate");
            decoded.push(x);
            obs.push((k, x));
        }
        let est = estimate(r, &candidates, &arms, &design.basis, &obs)?;
        let next = est.best(d >> r);
        reports.push(RoundReport {
            round: r,
            allocation: allocation_pairs(&candidates, &alloc),
            pulls: alloc.total,
            design_dim: design.dim(),
            support: design.support().len(),
            estimate: est,
            decoded,
            row_sums: Some(noise_covariance(&chains).summary()),
            survivors: next.clone(),
        });
        survivor_sets.push(next.clone());
        candidates = next;
    }

    let declared_best = candidates[0];
    let transcript = env.into_transcript();
    let pulls_used = transcript.len();
    Ok(SecureOutcome {
        result: AlgorithmResult {
            algorithm: "secure".into(),
            declared_best,
            pulls_used,
            budget: t,
            survivors: survivor_sets,
            transcript,
        },
        diagnostics: Diagnostics {
            m,
            budget: t,
            pulls_used,
            dummies: r1.dummies,
            rounds: reports,
            partitions: coding.partitions.clone(),
        },
        coding,
    })
}
