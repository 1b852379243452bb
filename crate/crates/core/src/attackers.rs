//! Copycat strategies. An attacker sees the reward-free view of a run and
//! the public arm set, and outputs a ranking of arms; its candidate set of
//! size `s` is the top `s` of that ranking.
//!
//! Threat model: the attacker knows the algorithm, the arm set and the
//! budget, but not the run's seed, so matching and dummy draws are opaque.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::Algorithm;
use crate::design::{budget_m, DesignOracle};
use crate::environment::{ObserverView, NoiseModel};
use crate::harness::stats::{wilson, Interval, Z95};
use crate::instance::{generate, hardness, ArmId, GeneratorKind};
use crate::stream::{self, derive_seed, purpose};
use crate::Result;

/// Tolerance for matching a played vector to an arm or a sum of arms.
pub const MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackResult {
    pub attacker: String,
    /// Sorted candidate ids.
    pub candidates: Vec<ArmId>,
    pub set_size: usize,
    pub contains_best: bool,
    pub parameters: BTreeMap<String, f64>,
    /// Every arm, most suspicious first; prefixes are the candidate sets
    /// of other sizes.
    #[serde(skip)]
    pub ranking: Vec<ArmId>,
    /// Played vectors with more than one matching decomposition.
    pub ambiguous: usize,
    /// Vectors after round 1 that equal an original arm.
    pub coincidences: usize,
}

impl AttackResult {
    pub fn covers(&self, best: ArmId, size: usize) -> bool {
        self.ranking.iter().take(size).any(|&a| a == best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AttackerKind {
    CoinToss,
    /// Counts exact arm plays; `t_prime` defaults to half the per-round
    /// budget.
    Threshold {
        #[serde(default)]
        t_prime: Option<usize>,
    },
    Decomposition,
    Trivial,
}

impl AttackerKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackerKind::CoinToss => "coin-toss",
            AttackerKind::Threshold { .. } => "threshold",
            AttackerKind::Decomposition => "decomposition",
            AttackerKind::Trivial => "trivial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "coin-toss" => Some(AttackerKind::CoinToss),
            "threshold" => Some(AttackerKind::Threshold { t_prime: None }),
            "decomposition" => Some(AttackerKind::Decomposition),
            "trivial" => Some(AttackerKind::Trivial),
            _ => None,
        }
    }

    pub fn attack(&self, view: &ObserverView, arms: &[DVector<f64>], budget: usize, best: ArmId, rng: &mut ChaCha8Rng) -> AttackResult {
        match *self {
            AttackerKind::CoinToss => coin_toss_attack(view, arms, best, rng),
            AttackerKind::Threshold { t_prime } => {
                let t_prime = t_prime.unwrap_or_else(|| default_threshold(budget, arms));
                threshold_attack(view, arms, t_prime, best, rng)
            }
            AttackerKind::Decomposition => decomposition_attack(view, arms, best, rng),
            AttackerKind::Trivial => trivial_attack(arms, best, rng),
        }
    }
}

/// `m / 2` for the public budget, or 0 when the budget is below the
/// elimination minimum.
pub fn default_threshold(budget: usize, arms: &[DVector<f64>]) -> usize {
    let d = arms.first().map_or(0, |a| a.len());
    budget_m(budget, arms.len(), d).map_or(0, |m| m / 2)
}

fn exact_arm(v: &DVector<f64>, arms: &[DVector<f64>]) -> Option<ArmId> {
    arms.iter()
        .position(|a| (a - v).norm() <= MATCH_TOL * a.norm().max(1.0))
        .map(ArmId)
}

/// Number of distinct vectors played after round 1 that equal an arm.
pub fn coincidences(view: &ObserverView, arms: &[DVector<f64>]) -> usize {
    let mut seen: Vec<usize> = view.records.iter().filter(|r| r.round > 1).map(|r| r.vector).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.into_iter().filter(|&v| exact_arm(&view.vectors[v], arms).is_some()).count()
}

/// Explains played vectors as sums of distinct arms: a vector is an arm,
/// a sum of two arms, or the sum of two earlier-explained vectors with
/// disjoint supports. This covers every vector the coded algorithm plays.
#[derive(Debug, Clone, Default)]
pub struct Decomposer {
    /// Per view vector: the chosen subset (sorted) if any.
    pub subsets: Vec<Option<Vec<ArmId>>>,
    pub ambiguous: usize,
}

impl Decomposer {
    pub fn new(view: &ObserverView, arms: &[DVector<f64>]) -> Self {
        let mut subsets: Vec<Option<Vec<ArmId>>> = vec![None; view.vectors.len()];
        let mut ambiguous = 0;
        let mut explained: Vec<usize> = Vec::new();
        for round in 1..=view.last_round() {
            let here = view.distinct_in_round(round);
            for &v in &here {
                if subsets[v].is_some() {
                    continue;
                }
                let target = &view.vectors[v];
                let mut matches: Vec<Vec<ArmId>> = Vec::new();
                if let Some(a) = exact_arm(target, arms) {
                    matches.push(vec![a]);
                }
                for i in 0..arms.len() {
                    for j in i + 1..arms.len() {
                        let s = &arms[i] + &arms[j];
                        if (&s - target).norm() <= MATCH_TOL * s.norm().max(1.0) {
                            matches.push(vec![ArmId(i), ArmId(j)]);
                        }
                    }
                }
                for (x, &p) in explained.iter().enumerate() {
                    for &q in &explained[x + 1..] {
                        let (Some(sp), Some(sq)) = (&subsets[p], &subsets[q]) else { continue };
                        if sp.iter().any(|a| sq.contains(a)) || sp.len() + sq.len() <= 2 {
                            continue;
                        }
                        let s = &view.vectors[p] + &view.vectors[q];
                        if (&s - target).norm() <= MATCH_TOL * s.norm().max(1.0) {
                            let mut u: Vec<ArmId> = sp.iter().chain(sq).copied().collect();
                            u.sort_unstable();
                            matches.push(u);
                        }
                    }
                }
                matches.sort();
                matches.dedup();
                if matches.len() > 1 {
                    ambiguous += 1;
                }
                subsets[v] = matches.into_iter().next();
            }
            explained.extend(here.into_iter().filter(|&v| subsets[v].is_some()));
            explained.sort_unstable();
            explained.dedup();
        }
        Self { subsets, ambiguous }
    }

    /// Subsets of the distinct vectors played in the last round.
    pub fn final_subsets(&self, view: &ObserverView) -> Vec<Vec<ArmId>> {
        view.distinct_in_round(view.last_round())
            .into_iter()
            .filter_map(|v| self.subsets[v].clone())
            .collect()
    }
}

/// Append the arms not yet ranked, in random order.
fn complete_ranking(mut ranking: Vec<ArmId>, k: usize, rng: &mut ChaCha8Rng) -> Vec<ArmId> {
    let mut rest: Vec<ArmId> = (0..k).map(ArmId).filter(|a| !ranking.contains(a)).collect();
    rest.shuffle(rng);
    ranking.extend(rest);
    ranking
}

/// Groups in random order, members shuffled within each group, duplicates
/// dropped.
fn rank_groups(mut groups: Vec<Vec<ArmId>>, rng: &mut ChaCha8Rng) -> Vec<ArmId> {
    groups.shuffle(rng);
    let mut out = Vec::new();
    for mut g in groups {
        g.shuffle(rng);
        for a in g {
            if !out.contains(&a) {
                out.push(a);
            }
        }
    }
    out
}

fn result(
    attacker: &str,
    ranking: Vec<ArmId>,
    size: usize,
    best: ArmId,
    parameters: BTreeMap<String, f64>,
    ambiguous: usize,
    coincidences: usize,
) -> AttackResult {
    let mut candidates: Vec<ArmId> = ranking.iter().take(size).copied().collect();
    candidates.sort_unstable();
    AttackResult {
        attacker: attacker.into(),
        contains_best: candidates.contains(&best),
        set_size: candidates.len(),
        candidates,
        parameters,
        ranking,
        ambiguous,
        coincidences,
    }
}

/// Pick one distinct final-round vector uniformly. An arm vector names its
/// arm; a sum of arms names a uniform constituent; anything else names
/// nothing. The ranking continues with the rest of that vector's
/// constituents, then the other final vectors' constituents.
pub fn coin_toss_attack(view: &ObserverView, arms: &[DVector<f64>], best: ArmId, rng: &mut ChaCha8Rng) -> AttackResult {
    let dec = Decomposer::new(view, arms);
    let mut finals: Vec<Vec<ArmId>> = dec.final_subsets(view);
    let mut ranking = Vec::new();
    let mut size = 0;
    if !finals.is_empty() {
        let pick = rng.random_range(0..finals.len());
        let mut chosen = finals.swap_remove(pick);
        chosen.shuffle(rng);
        ranking.extend(chosen);
        size = 1;
        ranking.extend(rank_groups(finals, rng).into_iter().filter(|a| !ranking.contains(a)).collect::<Vec<_>>());
    }
    let ranking = complete_ranking(ranking, arms.len(), rng);
    result("coin-toss", ranking, size, best, BTreeMap::new(), dec.ambiguous, coincidences(view, arms))
}

/// Arms whose exact vector is played more than `t_prime` times; ranking by
/// play count with random tie-breaks.
pub fn threshold_attack(
    view: &ObserverView,
    arms: &[DVector<f64>],
    t_prime: usize,
    best: ArmId,
    rng: &mut ChaCha8Rng,
) -> AttackResult {
    let matched: Vec<Option<ArmId>> = view.vectors.iter().map(|v| exact_arm(v, arms)).collect();
    let mut counts = vec![0usize; arms.len()];
    for r in &view.records {
        if let Some(a) = matched[r.vector] {
            counts[a.0] += 1;
        }
    }
    let mut ranking: Vec<ArmId> = (0..arms.len()).map(ArmId).collect();
    ranking.shuffle(rng);
    ranking.sort_by(|a, b| counts[b.0].cmp(&counts[a.0]));
    let size = counts.iter().filter(|&&c| c > t_prime).count();
    let params = BTreeMap::from([("t_prime".to_string(), t_prime as f64)]);
    result("threshold", ranking, size, best, params, 0, coincidences(view, arms))
}

/// Reconstructs every played vector as a subset of arms and ranks one
/// random final subset first, then the other final subsets. The default set
/// is one final subset.
pub fn decomposition_attack(view: &ObserverView, arms: &[DVector<f64>], best: ArmId, rng: &mut ChaCha8Rng) -> AttackResult {
    let dec = Decomposer::new(view, arms);
    let finals = dec.final_subsets(view);
    let size = finals.first().map_or(0, |s| s.len());
    let ranking = complete_ranking(rank_groups(finals, rng), arms.len(), rng);
    result("decomposition", ranking, size, best, BTreeMap::new(), dec.ambiguous, coincidences(view, arms))
}

/// Every arm.
pub fn trivial_attack(arms: &[DVector<f64>], best: ArmId, rng: &mut ChaCha8Rng) -> AttackResult {
    let ranking = complete_ranking(Vec::new(), arms.len(), rng);
    result("trivial", ranking, arms.len(), best, BTreeMap::new(), 0, 0)
}

// ---------------------------------------------------------------------------
// Equivocation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub algorithm: Algorithm,
    pub attacker: AttackerKind,
    pub generator: GeneratorKind,
    pub d: usize,
    pub k: usize,
    pub t: usize,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub noise_std: f64,
    /// Draw a fresh instance per trial; otherwise use the instance of the
    /// master seed throughout.
    #[serde(default = "yes")]
    pub fresh_instances: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub size: usize,
    pub hits: usize,
    pub coverage: f64,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivocationCurve {
    pub algorithm: String,
    pub attacker: String,
    pub trials: usize,
    /// Trials in which the algorithm declared the true best arm.
    pub algorithm_correct: usize,
    /// Trials in which the attacker's default set held the true best arm.
    pub default_hits: usize,
    pub ambiguous: usize,
    pub coincidences: usize,
    pub points: Vec<CurvePoint>,
}

/// Bounds on `E(eps)`: the point estimate and the range implied by the
/// coverage intervals. `None` means no size reaches `1 - eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Equivocation {
    pub eps: f64,
    pub estimate: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl EquivocationCurve {
    pub fn coverage(&self, size: usize) -> f64 {
        self.points.iter().find(|p| p.size == size).map_or(0.0, |p| p.coverage)
    }

    pub fn point(&self, size: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.size == size)
    }

    fn first_size(&self, ok: impl Fn(&CurvePoint) -> bool) -> Option<f64> {
        self.points.iter().find(|p| ok(p)).map(|p| (p.size as f64).log2())
    }

    pub fn equivocation(&self, eps: f64) -> Equivocation {
        let target = 1.0 - eps;
        Equivocation {
            eps,
            estimate: self.first_size(|p| p.coverage >= target),
            lower: self.first_size(|p| p.interval.hi >= target),
            upper: self.first_size(|p| p.interval.lo >= target),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["set_size", "coverage", "ci_lo", "ci_hi"])?;
        for p in &self.points {
            w.write_record([
                p.size.to_string(),
                p.coverage.to_string(),
                p.interval.lo.to_string(),
                p.interval.hi.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct TrialOutcome {
    ranks: Option<usize>,
    correct: bool,
    default_hit: bool,
    ambiguous: usize,
    coincidences: usize,
}

pub fn equivocation_curve(config: &CurveConfig, oracle: &DesignOracle) -> Result<EquivocationCurve> {
    let shared = if config.fresh_instances {
        None
    } else {
        Some(generate(&config.generator, config.d, config.k, config.seed)?.with_noise_std(config.noise_std))
    };
    let outcomes: Vec<TrialOutcome> = (0..config.trials)
        .into_par_iter()
        .map(|trial| -> Result<TrialOutcome> {
            let trial = trial as u64;
            let inst = match &shared {
                Some(i) => i.clone(),
                None => generate(
                    &config.generator,
                    config.d,
                    config.k,
                    derive_seed(config.seed, &[purpose::INSTANCE, trial]),
                )?
                .with_noise_std(config.noise_std),
            };
            let best = hardness(&inst).best;
            let run = config.algorithm.run(
                &inst,
                config.t,
                derive_seed(config.seed, &[trial]),
                oracle,
                NoiseModel::Gaussian,
            )?;
            let view = run.transcript.observer_view();
            let mut rng = stream::stream(config.seed, &[purpose::ATTACKER, trial]);
            let res = config.attacker.attack(&view, inst.arms(), config.t, best, &mut rng);
            Ok(TrialOutcome {
                ranks: res.ranking.iter().position(|&a| a == best),
                correct: run.declared_best == best,
                default_hit: res.contains_best,
                ambiguous: res.ambiguous,
                coincidences: res.coincidences,
            })
        })
        .collect::<Result<_>>()?;
    let mut hits = vec![0usize; config.k + 1];
    for o in &outcomes {
        if let Some(pos) = o.ranks {
            hits[pos + 1] += 1;
        }
    }
    let n = config.trials;
    let mut points = Vec::with_capacity(config.k);
    let mut cum = 0;
    for (size, h) in hits.iter().enumerate().skip(1) {
        cum += h;
        points.push(CurvePoint {
            size,
            hits: cum,
            coverage: cum as f64 / n as f64,
            interval: wilson(cum, n, Z95),
        });
    }
    Ok(EquivocationCurve {
        algorithm: config.algorithm.name().into(),
        attacker: config.attacker.name().into(),
        trials: n,
        algorithm_correct: outcomes.iter().filter(|o| o.correct).count(),
        default_hits: outcomes.iter().filter(|o| o.default_hit).count(),
        ambiguous: outcomes.iter().map(|o| o.ambiguous).sum(),
        coincidences: outcomes.iter().map(|o| o.coincidences).sum(),
        points,
    })
}
