//! Coded-pull bookkeeping: multiset partitions, survivor/dummy matching,
//! decode chains and the correlated-noise ledger.
//!
//! Every subset of the round-`r` partition holds exactly one arm of the
//! round-`r` candidate set (its *anchor*). The partition for round `r + 1`
//! pairs each subset whose anchor survived with one whose anchor did not.
//! Because every subset of round `r` is played at round `r`, the reward of
//! the non-surviving half is always available when a union is played later,
//! and peeling those halves off level by level isolates the anchor's reward.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::environment::Transcript;
use crate::instance::{ArmId, Instance};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Subset {
    /// Sorted arm ids.
    pub members: Vec<ArmId>,
    /// The member that belongs to this round's candidate set.
    pub anchor: ArmId,
    /// `(live, dead)` indices of the two halves in the previous partition.
    pub parents: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MultisetPartition {
    pub round: usize,
    pub subsets: Vec<Subset>,
}

impl MultisetPartition {
    /// Round-1 partition: singletons over survivors and dummies.
    pub fn singletons(arms: &[ArmId]) -> Self {
        let mut ids = arms.to_vec();
        ids.sort_unstable();
        Self {
            round: 1,
            subsets: ids
                .into_iter()
                .map(|a| Subset {
                    members: vec![a],
                    anchor: a,
                    parents: None,
                })
                .collect(),
        }
    }

    pub fn position_of_anchor(&self, arm: ArmId) -> Option<usize> {
        self.subsets.iter().position(|s| s.anchor == arm)
    }

    /// Index of the subset containing `arm` anywhere.
    pub fn containing(&self, arm: ArmId) -> Option<usize> {
        self.subsets.iter().position(|s| s.members.binary_search(&arm).is_ok())
    }

    pub fn all_members(&self) -> Vec<ArmId> {
        let mut v: Vec<ArmId> = self.subsets.iter().flat_map(|s| s.members.iter().copied()).collect();
        v.sort_unstable();
        v
    }
}

/// Pair every subset whose anchor is in `survivors` with a distinct subset
/// whose anchor is not, uniformly at random over perfect matchings.
pub fn match_subsets<R: Rng + ?Sized>(
    prev: &MultisetPartition,
    survivors: &[ArmId],
    rng: &mut R,
) -> Result<MultisetPartition> {
    let mut live = Vec::new();
    let mut dead = Vec::new();
    for (k, s) in prev.subsets.iter().enumerate() {
        if survivors.contains(&s.anchor) {
            live.push(k);
        } else {
            dead.push(k);
        }
    }
    if live.len() != survivors.len() {
        return Err(Error::StructureViolation(format!(
            "{} survivors but {} subsets anchored on them",
            survivors.len(),
            live.len()
        )));
    }
    if live.len() != dead.len() {
        return Err(Error::StructureViolation(format!(
            "{} live subsets vs {} dead subsets",
            live.len(),
            dead.len()
        )));
    }
    dead.shuffle(rng);
    let mut subsets: Vec<Subset> = live
        .iter()
        .zip(&dead)
        .map(|(&l, &dd)| {
            let mut members = prev.subsets[l].members.clone();
            members.extend_from_slice(&prev.subsets[dd].members);
            members.sort_unstable();
            Subset {
                members,
                anchor: prev.subsets[l].anchor,
                parents: Some((l, dd)),
            }
        })
        .collect();
    subsets.sort_by_key(|s| s.anchor);
    Ok(MultisetPartition {
        round: prev.round + 1,
        subsets,
    })
}

/// `c = sum of the member arms`.
pub fn coded_vector(members: &[ArmId], instance: &Instance) -> DVector<f64> {
    let mut c = DVector::zeros(instance.d());
    for &a in members {
        c += instance.arm(a);
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PullSelection {
    /// Cycle through a subset's pulls with a per-subset cursor.
    #[default]
    RoundRobin,
    /// Always reuse the subset's first pull.
    First,
}

/// One new coded pull and the earlier pulls subtracted from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecodeChain {
    pub round: usize,
    pub target: ArmId,
    pub new_pull: usize,
    /// Pull times at rounds `r-1, ..., 1`; the last one is uncoded.
    pub subtractions: SmallVec<[usize; 4]>,
}

impl DecodeChain {
    pub fn len(&self) -> usize {
        1 + self.subtractions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `X_new - sum X_sub`.
pub fn decode(chain: &DecodeChain, transcript: &Transcript) -> Result<f64> {
    let head = transcript
        .at(chain.new_pull)
        .ok_or_else(|| Error::MissingPull(format!("new pull t = {}", chain.new_pull)))?;
    let mut x = head.reward;
    for &t in &chain.subtractions {
        if t >= chain.new_pull {
            return Err(Error::MissingPull(format!(
                "t = {t} does not precede t = {}",
                chain.new_pull
            )));
        }
        let rec = transcript
            .at(t)
            .ok_or_else(|| Error::MissingPull(format!("t = {t}")))?;
        x -= rec.reward;
    }
    Ok(x)
}

/// Partitions, per-subset pull times, and the decode ledger of one run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CodingState {
    /// `partitions[r - 1]` is the round-`r` partition.
    pub partitions: Vec<MultisetPartition>,
    /// `pulls[r - 1][s]`: times at which subset `s` of round `r` was played.
    pub pulls: Vec<Vec<Vec<usize>>>,
    /// `chains[r - 1]`: decode chains built at round `r` (empty for round 1).
    pub chains: Vec<Vec<DecodeChain>>,
    #[serde(skip)]
    cursors: HashMap<(usize, usize), usize>,
    #[serde(skip)]
    selection: PullSelection,
}

impl CodingState {
    pub fn new(first: MultisetPartition, selection: PullSelection) -> Self {
        let n = first.subsets.len();
        Self {
            partitions: vec![first],
            pulls: vec![vec![Vec::new(); n]],
            chains: vec![Vec::new()],
            cursors: HashMap::new(),
            selection,
        }
    }

    pub fn rounds(&self) -> usize {
        self.partitions.len()
    }

    pub fn partition(&self, round: usize) -> &MultisetPartition {
        &self.partitions[round - 1]
    }

    pub fn push_partition(&mut self, next: MultisetPartition) -> Result<()> {
        if next.round != self.partitions.len() + 1 {
            return Err(Error::StructureViolation(format!(
                "partition for round {} after round {}",
                next.round,
                self.partitions.len()
            )));
        }
        self.pulls.push(vec![Vec::new(); next.subsets.len()]);
        self.chains.push(Vec::new());
        self.partitions.push(next);
        Ok(())
    }

    pub fn record_pull(&mut self, round: usize, subset: usize, time: usize) {
        self.pulls[round - 1][subset].push(time);
    }

    fn select(&mut self, level: usize, subset: usize) -> Result<usize> {
        let times = &self.pulls[level - 1][subset];
        if times.is_empty() {
            return Err(Error::MissingPull(format!(
                "subset {subset} of round {level} was never played"
            )));
        }
        let k = match self.selection {
            PullSelection::First => 0,
            PullSelection::RoundRobin => {
                let c = self.cursors.entry((level, subset)).or_insert(0);
                let k = *c % times.len();
                *c += 1;
                k
            }
        };
        Ok(times[k])
    }

    /// One chain per pull recorded at `round`, in subset then time order.
    pub fn build_chains(&mut self, round: usize) -> Result<Vec<DecodeChain>> {
        if round < 2 || round > self.partitions.len() {
            return Err(Error::StructureViolation(format!("no coded round {round}")));
        }
        let mut chains = Vec::new();
        let n_subsets = self.partitions[round - 1].subsets.len();
        for s in 0..n_subsets {
            let target = self.partitions[round - 1].subsets[s].anchor;
            let new_pulls = self.pulls[round - 1][s].clone();
            for new_pull in new_pulls {
                let mut subtractions = SmallVec::new();
                let mut cur = s;
                for level in (1..round).rev() {
                    let (live, dead) = self.partitions[level].subsets[cur].parents.ok_or_else(|| {
                        Error::StructureViolation(format!("round {} subset {cur} has no parents", level + 1))
                    })?;
                    subtractions.push(self.select(level, dead)?);
                    cur = live;
                }
                if self.partitions[0].subsets[cur].members != [target] {
                    return Err(Error::StructureViolation(format!(
                        "lineage of arm {target} does not end at its singleton"
                    )));
                }
                chains.push(DecodeChain {
                    round,
                    target,
                    new_pull,
                    subtractions,
                });
            }
        }
        self.chains[round - 1] = chains.clone();
        Ok(chains)
    }
}

/// Covariance (in units of the per-pull noise variance) of the decoded
/// noises of one round: diagonal `r`, off-diagonal the number of shared
/// subtracted pulls.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseCovariance {
    pub round: usize,
    #[serde(skip)]
    pub chains: Vec<DecodeChain>,
    pub diag: Vec<f64>,
    pub row_sums: Vec<f64>,
}

impl NoiseCovariance {
    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn entry(&self, s: usize, t: usize) -> f64 {
        if s == t {
            return self.diag[s];
        }
        let a = &self.chains[s].subtractions;
        let b = &self.chains[t].subtractions;
        a.iter().filter(|x| b.contains(x)).count() as f64
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.size();
        DMatrix::from_fn(n, n, |s, t| self.entry(s, t))
    }

    pub fn max_row_sum(&self) -> f64 {
        self.row_sums.iter().cloned().fold(0.0, f64::max)
    }

    pub fn summary(&self) -> RowSumSummary {
        let n = self.row_sums.len().max(1) as f64;
        RowSumSummary {
            round: self.round,
            decodes: self.row_sums.len(),
            min: self.row_sums.iter().cloned().fold(f64::INFINITY, f64::min),
            mean: self.row_sums.iter().sum::<f64>() / n,
            max: self.max_row_sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowSumSummary {
    pub round: usize,
    pub decodes: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

pub fn noise_covariance(chains: &[DecodeChain]) -> NoiseCovariance {
    let round = chains.first().map_or(0, |c| c.round);
    let mut usage: HashMap<usize, usize> = HashMap::new();
    for c in chains {
        for &t in &c.subtractions {
            *usage.entry(t).or_insert(0) += 1;
        }
    }
    let diag: Vec<f64> = chains.iter().map(|c| c.len() as f64).collect();
    let row_sums = chains
        .iter()
        .zip(&diag)
        .map(|(c, &d)| d + c.subtractions.iter().map(|t| (usage[t] - 1) as f64).sum::<f64>())
        .collect();
    NoiseCovariance {
        round,
        chains: chains.to_vec(),
        diag,
        row_sums,
    }
}
