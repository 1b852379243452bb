//! Problem instances: the arm set, the hidden parameter and the noise level.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, is_power_of_two};
use crate::stream;
use crate::{Error, Result};

/// Index of an arm in its instance (zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArmId(pub usize);

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    arms: Vec<DVector<f64>>,
    theta_star: DVector<f64>,
    noise_std: f64,
}

impl Instance {
    /// Builds an instance after checking shapes and finiteness. The
    /// structural invariants (uniqueness, span, `K > d`, power-of-two `d`)
    /// are reported by [`validate`], not enforced here.
    pub fn new(arms: Vec<DVector<f64>>, theta_star: DVector<f64>, noise_std: f64) -> Result<Self> {
        let d = theta_star.len();
        if d == 0 {
            return Err(Error::InstanceInvalid("theta_star is empty".into()));
        }
        for a in &arms {
            if a.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: a.len(),
                });
            }
        }
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::InstanceInvalid(format!("noise_std = {noise_std}")));
        }
        Ok(Self {
            arms,
            theta_star,
            noise_std,
        })
    }

    pub fn d(&self) -> usize {
        self.theta_star.len()
    }

    pub fn k(&self) -> usize {
        self.arms.len()
    }

    pub fn arms(&self) -> &[DVector<f64>] {
        &self.arms
    }

    pub fn arm(&self, id: ArmId) -> &DVector<f64> {
        &self.arms[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ArmId> {
        (0..self.arms.len()).map(ArmId)
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn reward(&self, id: ArmId) -> f64 {
        self.arms[id.0].dot(&self.theta_star)
    }

    pub fn with_noise_std(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn with_theta(mut self, theta_star: DVector<f64>) -> Result<Self> {
        if theta_star.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                found: theta_star.len(),
            });
        }
        self.theta_star = theta_star;
        Ok(self)
    }

    /// Id of the arm whose vector equals `v` up to a relative tolerance.
    pub fn find_arm(&self, v: &DVector<f64>, tol: f64) -> Option<ArmId> {
        self.arms
            .iter()
            .position(|a| (a - v).norm() <= tol * a.norm().max(1.0))
            .map(ArmId)
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Arm indices involved in a failure.
    pub offending: Vec<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            return Ok(());
        }
        let msg = self
            .failures()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::InstanceInvalid(msg))
    }
}

pub fn validate(instance: &Instance) -> ValidationReport {
    let d = instance.d();
    let k = instance.k();
    let arms = instance.arms();
    let mut checks = Vec::with_capacity(6);

    let non_finite: Vec<usize> = arms
        .iter()
        .enumerate()
        .filter(|(_, a)| a.iter().any(|x| !x.is_finite()))
        .map(|(i, _)| i)
        .collect();
    let theta_finite = instance.theta_star.iter().all(|x| x.is_finite());
    checks.push(Check {
        name: "finite",
        passed: non_finite.is_empty() && theta_finite,
        detail: if theta_finite {
            format!("{} arms with non-finite entries", non_finite.len())
        } else {
            "theta_star has non-finite entries".into()
        },
        offending: non_finite,
    });

    checks.push(Check {
        name: "dimension",
        passed: d >= 2,
        offending: vec![],
        detail: format!("d = {d}"),
    });

    let mut duplicates = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            if arms[i] == arms[j] {
                duplicates.push(i);
                duplicates.push(j);
            }
        }
    }
    duplicates.sort_unstable();
    duplicates.dedup();
    checks.push(Check {
        name: "unique",
        passed: duplicates.is_empty(),
        detail: format!("{} arms share a vector", duplicates.len()),
        offending: duplicates,
    });

    let r = linalg::rank(arms);
    checks.push(Check {
        name: "span",
        passed: r == d,
        offending: vec![],
        detail: format!("rank {r} of {d}"),
    });

    checks.push(Check {
        name: "k_gt_d",
        passed: k > d,
        offending: vec![],
        detail: format!("K = {k}, d = {d}"),
    });

    checks.push(Check {
        name: "power_of_two",
        passed: is_power_of_two(d),
        offending: vec![],
        detail: format!("d = {d}"),
    });

    ValidationReport { checks }
}

// ---------------------------------------------------------------------------
// Hardness

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardnessReport {
    /// Expected reward of every arm, indexed by id.
    pub rewards: Vec<f64>,
    pub best: ArmId,
    /// Arms sorted by reward, best first; ties by lower id.
    pub order: Vec<ArmId>,
    /// Gap to the best arm along `order` (`gaps[0] == 0`).
    pub gaps: Vec<f64>,
    pub h2lin: f64,
    pub tied_best: bool,
}

/// Sort ids by decreasing score, ties broken by the lower id.
pub fn rank_by_score(ids: &[ArmId], score: impl Fn(ArmId) -> f64) -> Vec<ArmId> {
    let mut order = ids.to_vec();
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    order
}

pub fn hardness(instance: &Instance) -> HardnessReport {
    let rewards: Vec<f64> = instance.ids().map(|i| instance.reward(i)).collect();
    let ids: Vec<ArmId> = instance.ids().collect();
    let order = rank_by_score(&ids, |i| rewards[i.0]);
    let top = rewards[order[0].0];
    let gaps: Vec<f64> = order.iter().map(|i| top - rewards[i.0]).collect();
    let tied_best = gaps.get(1).is_some_and(|&g| g == 0.0);

    // positions 2..=d (one-based) of the sorted order
    let last = instance.d().min(order.len());
    let h2lin = (2..=last)
        .map(|pos| {
            let gap = gaps[pos - 1];
            if gap == 0.0 {
                f64::INFINITY
            } else {
                pos as f64 / (gap * gap)
            }
        })
        .fold(0.0_f64, f64::max);

    HardnessReport {
        best: order[0],
        rewards,
        order,
        gaps,
        h2lin,
        tied_best,
    }
}

// ---------------------------------------------------------------------------
// Generators

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GeneratorKind {
    /// Arms and parameter drawn uniformly on the unit sphere.
    Sphere,
    /// The standard basis plus `K - d` random unit vectors.
    BasisPlus,
    /// Read from an instance file.
    Explicit { path: PathBuf },
}

const MAX_RESAMPLES: usize = 100;

fn unit_vector<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

pub fn generate(kind: &GeneratorKind, d: usize, k: usize, seed: u64) -> Result<Instance> {
    if let GeneratorKind::Explicit { path } = kind {
        let inst = read_instance(path)?;
        if inst.d() != d || inst.k() != k {
            return Err(Error::Schema(format!(
                "file has d = {}, K = {}; requested d = {d}, K = {k}",
                inst.d(),
                inst.k()
            )));
        }
        return Ok(inst);
    }
    if !is_power_of_two(d) || d < 2 {
        return Err(Error::InvalidArgument(format!("d = {d} is not a power of two >= 2")));
    }
    if k <= d {
        return Err(Error::InvalidArgument(format!("K = {k} must exceed d = {d}")));
    }
    let mut rng = stream::stream(seed, &[stream::purpose::INSTANCE]);
    for _ in 0..MAX_RESAMPLES {
        let arms: Vec<DVector<f64>> = match kind {
            GeneratorKind::Sphere => (0..k).map(|_| unit_vector(&mut rng, d)).collect(),
            GeneratorKind::BasisPlus => (0..d)
                .map(|i| DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 }))
                .chain((d..k).map(|_| unit_vector(&mut rng, d)))
                .collect(),
            GeneratorKind::Explicit { .. } => unreachable!(),
        };
        let theta = unit_vector(&mut rng, d);
        let inst = Instance::new(arms, theta, 1.0)?;
        if validate(&inst).passed() {
            return Ok(inst);
        }
    }
    Err(Error::InfeasibleGenerator {
        attempts: MAX_RESAMPLES,
    })
}

// ---------------------------------------------------------------------------
// JSON

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub d: usize,
    pub k: usize,
    pub arms: Vec<Vec<f64>>,
    pub theta_star: Vec<f64>,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
}

fn default_noise_std() -> f64 {
    1.0
}

impl From<&Instance> for InstanceFile {
    fn from(inst: &Instance) -> Self {
        Self {
            d: inst.d(),
            k: inst.k(),
            arms: inst.arms.iter().map(|a| a.iter().copied().collect()).collect(),
            theta_star: inst.theta_star.iter().copied().collect(),
            noise_std: inst.noise_std,
        }
    }
}

impl TryFrom<InstanceFile> for Instance {
    type Error = Error;

    fn try_from(f: InstanceFile) -> Result<Self> {
        if f.theta_star.len() != f.d {
            return Err(Error::DimensionMismatch {
                expected: f.d,
                found: f.theta_star.len(),
            });
        }
        if f.arms.len() != f.k {
            return Err(Error::Schema(format!(
                "k = {} but {} arms listed",
                f.k,
                f.arms.len()
            )));
        }
        let arms = f.arms.into_iter().map(DVector::from_vec).collect();
        Instance::new(arms, DVector::from_vec(f.theta_star), f.noise_std)
    }
}

pub fn parse_instance(json: &str) -> Result<Instance> {
    let file: InstanceFile = serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
    Instance::try_from(file)
}

/// Reads and validates an instance file.
pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let inst = parse_instance(&std::fs::read_to_string(path)?)?;
    validate(&inst).into_result()?;
    Ok(inst)
}

pub fn write_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(&InstanceFile::from(instance))?;
    std::fs::write(path, json)?;
    Ok(())
}
