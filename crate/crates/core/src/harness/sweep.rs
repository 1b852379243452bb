use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{rule_of_three, wilson, Z95};
use crate::attackers::AttackerKind;
use crate::baselines::Algorithm;
use crate::design::{DesignOracle, DesignParams};
use crate::environment::NoiseModel;
use crate::instance::{generate, hardness, GeneratorKind, Instance};
use crate::secure::SecureConfig;
use crate::stream::{derive_seed, purpose};
use crate::{Error, Result};

/// Environment variable giving the default worker count.
pub const WORKERS_ENV: &str = "CODED_BAI_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub d: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub master_seed: Option<u64>,
    #[serde(default = "sphere")]
    pub generator: GeneratorKind,
    pub shapes: Vec<Shape>,
    pub algorithms: Vec<Algorithm>,
    pub t_grid: Vec<usize>,
    /// Per-shape budget grids, overriding `t_grid` by position.
    #[serde(default)]
    pub t_grids: Option<Vec<Vec<usize>>>,
    pub trials: usize,
    #[serde(default = "one")]
    pub noise_std: f64,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Knobs of the secure algorithm (dummy rule, pull selection).
    #[serde(default)]
    pub secure: SecureConfig,
    /// Draw a new instance for every trial instead of one per shape.
    #[serde(default)]
    pub fresh_instances: bool,
    #[serde(default)]
    pub attackers: Vec<AttackerKind>,
    #[serde(default)]
    pub design: DesignParams,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub diagnostics: Option<PathBuf>,
}

fn sphere() -> GeneratorKind {
    GeneratorKind::Sphere
}

fn one() -> f64 {
    1.0
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn grid(&self, shape: usize) -> &[usize] {
        self.t_grids
            .as_ref()
            .and_then(|g| g.get(shape))
            .map_or(&self.t_grid[..], |g| &g[..])
    }

    pub fn validate(&self) -> Result<u64> {
        let seed = self
            .master_seed
            .ok_or_else(|| Error::InvalidArgument("a master seed is required".into()))?;
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.shapes.is_empty() || self.algorithms.is_empty() {
            return Err(Error::InvalidArgument("no shapes or no algorithms".into()));
        }
        if let Some(g) = &self.t_grids {
            if g.len() != self.shapes.len() {
                return Err(Error::InvalidArgument("t_grids needs one grid per shape".into()));
            }
        }
        for s in 0..self.shapes.len() {
            let grid = self.grid(s);
            if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument("T grid must be non-empty and strictly increasing".into()));
            }
        }
        Ok(seed)
    }

    pub fn workers(&self) -> Option<usize> {
        self.workers
            .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
            .filter(|&w| w > 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algo: String,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub trials: usize,
    pub errors: usize,
    pub pe_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_pulls: f64,
    /// Rule-of-three bound, set only when no errors were seen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_bound: Option<f64>,
    /// Trials that returned an error instead of a decision.
    #[serde(default)]
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl SweepRow {
    pub fn new(algo: &str, shape: Shape, t: usize, trials: usize, errors: usize, pulls: usize) -> Self {
        let iv = wilson(errors, trials, Z95);
        Self {
            algo: algo.into(),
            d: shape.d,
            k: shape.k,
            t,
            trials,
            errors,
            pe_hat: if trials == 0 { f64::NAN } else { errors as f64 / trials as f64 },
            ci_lo: iv.lo,
            ci_hi: iv.hi,
            mean_pulls: if trials == 0 { 0.0 } else { pulls as f64 / trials as f64 },
            upper_bound: (errors == 0 && trials > 0).then(|| rule_of_three(trials)),
            failures: 0,
            failure: None,
        }
    }
}

const COLUMNS: [&str; 10] = ["algo", "d", "K", "T", "trials", "errors", "pe_hat", "ci_lo", "ci_hi", "mean_pulls"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.algo.clone(),
                r.d.to_string(),
                r.k.to_string(),
                r.t.to_string(),
                r.trials.to_string(),
                r.errors.to_string(),
                r.pe_hat.to_string(),
                r.ci_lo.to_string(),
                r.ci_hi.to_string(),
                r.mean_pulls.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != COLUMNS {
            return Err(Error::Schema(format!("expected columns {}, found {}", COLUMNS.join(","), header.join(","))));
        }
        let mut rows = Vec::new();
        for rec in rd.deserialize() {
            let mut row: SweepRow = rec?;
            if row.errors == 0 && row.trials > 0 {
                row.upper_bound = Some(rule_of_three(row.trials));
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn for_algorithm<'a>(&'a self, algo: &'a str) -> impl Iterator<Item = &'a SweepRow> + 'a {
        self.rows.iter().filter(move |r| r.algo == algo)
    }
}

struct Cell {
    shape: usize,
    algorithm: Algorithm,
    t: usize,
}

fn trial_instance(config: &SweepConfig, seed: u64, shape: usize, trial: u64) -> Result<Instance> {
    let s = config.shapes[shape];
    let labels: &[u64] = if config.fresh_instances {
        &[purpose::INSTANCE, shape as u64, trial]
    } else {
        &[purpose::INSTANCE, shape as u64]
    };
    Ok(generate(&config.generator, s.d, s.k, derive_seed(seed, labels))?.with_noise_std(config.noise_std))
}

/// Runs every `(shape, algorithm, T)` cell. Trial `j` of cell `c` uses the
/// stream `(seed, c, j)`, so the table does not depend on scheduling.
pub fn monte_carlo(config: &SweepConfig) -> Result<SweepTable> {
    let seed = config.validate()?;
    let mut cells = Vec::new();
    for shape in 0..config.shapes.len() {
        for &algorithm in &config.algorithms {
            for &t in config.grid(shape) {
                cells.push(Cell { shape, algorithm, t });
            }
        }
    }
    let fixed: Vec<Option<Instance>> = (0..config.shapes.len())
        .map(|s| (!config.fresh_instances).then(|| trial_instance(config, seed, s, 0)).transpose())
        .collect::<Result<_>>()?;
    let oracle = DesignOracle::new(config.design);
    let run_config = SecureConfig {
        design: config.design,
        noise: config.noise,
        ..config.secure
    };

    let work = || -> Vec<SweepRow> {
        cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let outcomes: Vec<std::result::Result<(bool, usize), String>> = (0..config.trials as u64)
                    .into_par_iter()
                    .map(|trial| {
                        let owned;
                        let inst = match &fixed[cell.shape] {
                            Some(i) => i,
                            None => {
                                owned = trial_instance(config, seed, cell.shape, trial).map_err(|e| e.to_string())?;
                                &owned
                            }
                        };
                        let best = hardness(inst).best;
                        let run = cell
                            .algorithm
                            .run_with(inst, cell.t, derive_seed(seed, &[c as u64, trial]), &oracle, &run_config)
                            .map_err(|e| e.to_string())?;
                        Ok((run.declared_best != best, run.pulls_used))
                    })
                    .collect();
                let mut errors = 0;
                let mut pulls = 0;
                let mut failures = 0;
                let mut failure = None;
                for o in outcomes {
                    match o {
                        Ok((err, p)) => {
                            errors += err as usize;
                            pulls += p;
                        }
                        Err(e) => {
                            failures += 1;
                            failure.get_or_insert(e);
                        }
                    }
                }
                let trials = config.trials - failures;
                let mut row = SweepRow::new(cell.algorithm.name(), config.shapes[cell.shape], cell.t, trials, errors, pulls);
                row.failures = failures;
                row.failure = failure;
                row
            })
            .collect()
    };
    let rows = match config.workers() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(work),
        None => work(),
    };
    Ok(SweepTable { rows })
}
