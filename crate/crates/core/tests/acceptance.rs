//! Acceptance gate. Each criterion prints one `PASS`/`FAIL` line; the
//! process exits non-zero if any criterion fails. Pass criterion numbers
//! as arguments to run a subset.

use std::process::ExitCode;
use std::time::Instant;

use coded_bai::attackers::{
    coin_toss_attack, equivocation_curve, AttackerKind, CurveConfig,
};
use coded_bai::baselines::{od_linbai, Algorithm};
use coded_bai::design::{g_optimal, DesignOracle, DesignParams};
use coded_bai::environment::{concentration_check, NoiseModel};
use coded_bai::harness::stats::{normal_quantile, wilson};
use coded_bai::harness::{fit_exponent, monte_carlo, ExponentFit, Shape, SweepConfig};
use coded_bai::instance::{generate, hardness, ArmId, GeneratorKind, Instance};
use coded_bai::secure::{
    self, match_subsets, noise_covariance, CodingState, MultisetPartition, PullSelection, SecureConfig,
};
use coded_bai::stream::{self, derive_seed};
use coded_bai::linalg::log2_exact;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SEED: u64 = 20_251_016;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn sphere(d: usize, k: usize, seed: u64) -> Instance {
    generate(&GeneratorKind::Sphere, d, k, seed).unwrap()
}

/// Smallest budget with `m = 1`.
fn min_budget(d: usize, k: usize) -> usize {
    k.min(d * (d + 1) / 2) + d - 2 + log2_exact(d)
}

/// Random `(d, K)` with `d` in {2, 4, 8, 16} and `d < K <= 32`.
fn random_shape(rng: &mut ChaCha8Rng) -> (usize, usize) {
    let d = 1 << rng.random_range(1..=4);
    let k = rng.random_range(d + 1..=32.max(d + 1));
    (d, k)
}

const ALGORITHMS: [Algorithm; 5] = Algorithm::ALL;

// 1. Every algorithm stays within its budget.
fn budget() -> Verdict {
    let configs = 1000;
    let outcomes: Vec<(usize, usize)> = (0..configs as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream::stream(SEED, &[1, c]);
            let (d, k) = random_shape(&mut rng);
            let t = min_budget(d, k) + rng.random_range(0..20_000);
            let inst = sphere(d, k, derive_seed(SEED, &[1, c]));
            let oracle = DesignOracle::default();
            let mut violations = 0;
            let mut failures = 0;
            for algo in ALGORITHMS {
                match algo.run(&inst, t, c, &oracle, NoiseModel::Gaussian) {
                    Ok(r) if r.pulls_used <= t && r.transcript.len() == r.pulls_used => {}
                    Ok(_) | Err(coded_bai::Error::BudgetExceeded { .. }) => violations += 1,
                    Err(_) => failures += 1,
                }
            }
            (violations, failures)
        })
        .collect();
    let violations: usize = outcomes.iter().map(|o| o.0).sum();
    let failures: usize = outcomes.iter().map(|o| o.1).sum();
    verdict(
        violations == 0 && failures == 0,
        format!("{configs} configs x {} algorithms: {violations} violations, {failures} other errors", ALGORITHMS.len()),
    )
}

// 2. Noiseless runs find the best arm.
fn noiseless() -> Verdict {
    let n = 500;
    let wrong: Vec<(Algorithm, usize)> = ALGORITHMS
        .iter()
        .map(|&algo| {
            let misses = (0..n as u64)
                .into_par_iter()
                .filter(|&i| {
                    let mut rng = stream::stream(SEED, &[2, i]);
                    let (d, k) = random_shape(&mut rng);
                    let inst = sphere(d, k, derive_seed(SEED, &[2, i])).with_noise_std(0.0);
                    let t = min_budget(d, k) + rng.random_range(0..2000);
                    let r = algo.run(&inst, t, i, &DesignOracle::default(), NoiseModel::Gaussian);
                    !matches!(r, Ok(r) if r.declared_best == hardness(&inst).best)
                })
                .count();
            (algo, misses)
        })
        .collect();
    let total: usize = wrong.iter().map(|w| w.1).sum();
    let detail = wrong.iter().map(|(a, m)| format!("{a}: {m}/{n}")).collect::<Vec<_>>().join(", ");
    verdict(total == 0, format!("misses {detail}"))
}

// 3. Noiseless decodes are exact.
fn decode_exactness() -> Verdict {
    let mut worst = 0.0_f64;
    let mut decodes = 0usize;
    for d in [4usize, 8, 16] {
        let runs: Vec<(f64, usize)> = (0..40u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream::stream(SEED, &[3, d as u64, i]);
                let k = rng.random_range(d + 1..=32);
                let inst = sphere(d, k, derive_seed(SEED, &[3, d as u64, i])).with_noise_std(0.0);
                let t = min_budget(d, k) + rng.random_range(0..4000);
                let out = secure::run(&inst, t, i).unwrap();
                let mut worst = 0.0_f64;
                let mut n = 0;
                for (r, report) in out.diagnostics.rounds.iter().enumerate().skip(1) {
                    for (chain, x) in out.coding.chains[r].iter().zip(&report.decoded) {
                        worst = worst.max((x - inst.reward(chain.target)).abs());
                        n += 1;
                    }
                }
                (worst, n)
            })
            .collect();
        for (w, n) in runs {
            worst = worst.max(w);
            decodes += n;
        }
    }
    verdict(
        worst <= 1e-9 && decodes > 0,
        format!("{decodes} decodes over d in {{4,8,16}}, max error {worst:.2e}"),
    )
}

// 4. Decoded noise has variance r: exactly in the ledger, and empirically.
fn decode_variance() -> Verdict {
    let (d, k, t) = (16, 24, 8000);
    let inst = sphere(d, k, derive_seed(SEED, &[4]));
    let oracle = DesignOracle::default();
    let config = SecureConfig::default();
    let runs: Vec<(Vec<Vec<f64>>, bool)> = (0..120u64)
        .into_par_iter()
        .map(|i| {
            let out = secure::run_with(&inst, t, derive_seed(SEED, &[4, i]), &config, &oracle).unwrap();
            let mut noise = vec![Vec::new(); 5];
            let mut diag_ok = true;
            for (r, report) in out.diagnostics.rounds.iter().enumerate().skip(1) {
                let chains = &out.coding.chains[r];
                let cov = noise_covariance(chains);
                diag_ok &= cov.diag.iter().all(|&x| x == (r + 1) as f64);
                for (chain, x) in chains.iter().zip(&report.decoded) {
                    noise[r + 1].push(x - inst.reward(chain.target));
                }
            }
            (noise, diag_ok)
        })
        .collect();
    let diag_ok = runs.iter().all(|r| r.1);
    let mut pass = diag_ok;
    let mut parts = vec![format!("ledger diagonal = r: {diag_ok}")];
    for r in 2..=4 {
        let xs: Vec<f64> = runs.iter().flat_map(|run| run.0[r].iter().copied()).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        let rel = (var - r as f64).abs() / r as f64;
        pass &= xs.len() >= 100_000 && rel <= 0.05;
        parts.push(format!("r={r}: var {var:.3} over {} decodes", xs.len()));
    }
    verdict(pass, parts.join("; "))
}

/// Partitions and chains for `d` fixed arms under a given count schedule.
fn schedule(d: usize, seed: u64, mut counts: impl FnMut(usize, usize) -> usize) -> CodingState {
    let mut rng = stream::stream(seed, &[5]);
    let ids: Vec<ArmId> = (0..d).map(ArmId).collect();
    let mut state = CodingState::new(MultisetPartition::singletons(&ids), PullSelection::RoundRobin);
    let mut time = 0;
    for s in 0..d {
        for _ in 0..counts(1, s) {
            time += 1;
            state.record_pull(1, s, time);
        }
    }
    let mut survivors: Vec<ArmId> = ids[..d / 2].to_vec();
    for r in 2..=log2_exact(d) {
        let next = match_subsets(state.partition(r - 1), &survivors, &mut rng).unwrap();
        state.push_partition(next).unwrap();
        for s in 0..state.partition(r).subsets.len() {
            for _ in 0..counts(r, s) {
                time += 1;
                state.record_pull(r, s, time);
            }
        }
        state.build_chains(r).unwrap();
        let mut keep = survivors.clone();
        while keep.len() > survivors.len() / 2 {
            let j = rng.random_range(0..keep.len());
            keep.remove(j);
        }
        survivors = keep;
    }
    state
}

// 5. Row sums of the noise covariance.
fn row_sums() -> Verdict {
    let mut uniform_max = Vec::new();
    let mut ceil_max = Vec::new();
    let mut pass = true;
    for d in [4usize, 8, 16] {
        let log_d = log2_exact(d) as f64;
        let mut u: f64 = 0.0;
        let mut c: f64 = 0.0;
        for seed in 0..50u64 {
            for n in [1usize, 3, 10] {
                let st = schedule(d, seed, |_, _| n);
                u = u.max(noise_covariance(st.chains.last().unwrap()).max_row_sum());
            }
            let mut rng = stream::stream(SEED, &[5, d as u64, seed]);
            let st = schedule(d, seed, |_, _| 6 + rng.random_range(0..2));
            c = c.max(noise_covariance(st.chains.last().unwrap()).max_row_sum());
        }
        pass &= u <= 2.0 * log_d - 1.0 && c <= 2.0 * log_d + 2.0;
        uniform_max.push(format!("d={d}: {u}"));
        ceil_max.push(format!("d={d}: {c}"));
    }
    // For reference: the algorithm's own allocations double per round, so
    // its final-round row sums are not covered by the bound.
    let inst = sphere(16, 32, derive_seed(SEED, &[5]));
    let out = secure::run(&inst, 16_000, 1).unwrap();
    let actual = out.diagnostics.rounds.last().unwrap().row_sums.unwrap().max;
    verdict(
        pass,
        format!(
            "uniform max [{}] (bound 2log d - 1); ceiling-rounded max [{}] (bound 2log d + 2); full run d=16 final round {actual} (not bounded)",
            uniform_max.join(", "),
            ceil_max.join(", ")
        ),
    )
}

// 6. Kiefer-Wolfowitz certificate and the 3-arm grid oracle.
fn kw_optimality() -> Verdict {
    let params = DesignParams::default();
    let bound_factor = 1.0 + 2.0 * params.eps_kw;
    let worst: f64 = (0..300u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream::stream(SEED, &[6, i]);
            let (d, k) = random_shape(&mut rng);
            let inst = sphere(d, k, derive_seed(SEED, &[6, i]));
            // full set and a random rank-deficient subset
            let sub: Vec<DVector<f64>> = inst.arms()[..(d / 2).max(1)].to_vec();
            [inst.arms().to_vec(), sub]
                .iter()
                .map(|arms| {
                    let des = g_optimal(arms, &params).unwrap();
                    des.g_value / (des.dim() as f64 * bound_factor)
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);

    let s = std::f64::consts::FRAC_1_SQRT_2;
    let arms = vec![
        DVector::from_vec(vec![1.0, 0.0]),
        DVector::from_vec(vec![0.0, 1.0]),
        DVector::from_vec(vec![s, s]),
    ];
    let des = g_optimal(&arms, &DesignParams { eps_kw: 1e-3, max_iters: None }).unwrap();
    let oracle = grid_oracle(&arms, 1000);
    let dev = des.weights.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    verdict(
        worst <= 1.0 && dev <= 1e-2,
        format!(
            "max g/(d_r(1+2eps)) = {worst:.4} over 600 designs; 3-arm weights {:?} vs grid {:?}",
            des.weights.iter().map(|w| (w * 1e4).round() / 1e4).collect::<Vec<_>>(),
            oracle
        ),
    )
}

/// Weights on the simplex grid minimising the largest prediction variance.
fn grid_oracle(arms: &[DVector<f64>], steps: usize) -> Vec<f64> {
    let mut best = (f64::INFINITY, vec![0.0; 3]);
    for i in 0..=steps {
        for j in 0..=steps - i {
            let w = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
            let mut v = nalgebra::Matrix2::zeros();
            for (a, &wi) in arms.iter().zip(&w) {
                let a2 = nalgebra::Vector2::new(a[0], a[1]);
                v += wi * a2 * a2.transpose();
            }
            let Some(inv) = v.try_inverse() else { continue };
            let g = arms
                .iter()
                .map(|a| {
                    let a2 = nalgebra::Vector2::new(a[0], a[1]);
                    (a2.transpose() * inv * a2)[0]
                })
                .fold(0.0, f64::max);
            if g < best.0 - 1e-12 {
                best = (g, w.to_vec());
            }
        }
    }
    best.1
}

// 7. Least-squares tail bound.
fn concentration() -> Verdict {
    let inst = sphere(4, 12, derive_seed(SEED, &[7]));
    let design = g_optimal(inst.arms(), &DesignParams::default()).unwrap();
    let z99 = normal_quantile(0.99);
    let mut pass = true;
    let mut parts = Vec::new();
    for (j, delta) in [0.1, 0.01].into_iter().enumerate() {
        let tail = concentration_check(&inst, &design, 100, delta, 10_000, derive_seed(SEED, &[7, j as u64])).unwrap();
        let lower = wilson(tail.hits, tail.trials, z99).lo;
        pass &= lower <= delta;
        parts.push(format!("delta={delta}: rate {:.4} (99% lower bound {lower:.4})", tail.rate));
    }
    verdict(pass, parts.join("; "))
}

// 8. Equivocation of the secure algorithm at d = 8.
fn equivocation() -> Verdict {
    let d = 8;
    let oracle = DesignOracle::default();
    let attackers = [
        AttackerKind::Decomposition,
        AttackerKind::CoinToss,
        AttackerKind::Threshold { t_prime: None },
        AttackerKind::Trivial,
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for attacker in attackers {
        let config = CurveConfig {
            algorithm: Algorithm::Secure,
            attacker,
            generator: GeneratorKind::Sphere,
            d,
            k: 16,
            t: 4000,
            trials: 2000,
            seed: derive_seed(SEED, &[8]),
            noise_std: 1.0,
            fresh_instances: true,
        };
        let curve = equivocation_curve(&config, &oracle).unwrap();
        let p = curve.point(d / 2 - 1).unwrap();
        let se = (p.coverage * (1.0 - p.coverage) / curve.trials as f64).sqrt();
        let ok = p.coverage < 0.95 - 3.0 * se;
        let e = curve.equivocation(0.05);
        pass &= ok;
        parts.push(format!(
            "{}: coverage@{} = {:.3}, E(0.05) = {:?}",
            curve.attacker,
            d / 2 - 1,
            p.coverage,
            e.estimate
        ));
    }
    // structural: the declared arm lies in a final subset of size d/2
    let structural = (0..500u64).into_par_iter().all(|i| {
        let inst = sphere(d, 16, derive_seed(SEED, &[8, 1, i]));
        let out = secure::run(&inst, 4000, i).unwrap();
        let last = out.diagnostics.partitions.last().unwrap();
        last.subsets
            .iter()
            .any(|s| s.members.len() == d / 2 && s.members.contains(&out.declared_best()))
    });
    pass &= structural;
    parts.push(format!("declared best in a final subset of size d/2: {structural}"));
    verdict(pass, parts.join("; "))
}

// 9. Coin toss against OD-LinBAI.
fn baseline_insecurity() -> Verdict {
    let (d, k, t) = (8, 16, 8000);
    let inst = (0..)
        .map(|s| sphere(d, k, derive_seed(SEED, &[9, s])))
        .find(|i| hardness(i).gaps[1] >= 0.25)
        .unwrap();
    let best = hardness(&inst).best;
    let trials = 4000u64;
    let oracle = DesignOracle::default();
    let rows: Vec<(bool, bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let run = od_linbai(&inst, t, derive_seed(SEED, &[9, i]), &oracle, NoiseModel::Gaussian).unwrap();
            let pair = &run.survivors[run.survivors.len() - 2];
            let mut rng = stream::stream(SEED, &[9, 1, i]);
            let attack = coin_toss_attack(&run.transcript.observer_view(), inst.arms(), best, &mut rng);
            (run.declared_best != best, pair.contains(&best) && run.declared_best != best, attack.contains_best)
        })
        .collect();
    let n = trials as f64;
    let pe = rows.iter().filter(|r| r.0).count() as f64 / n;
    let residual = rows.iter().filter(|r| r.1).count() as f64 / n / 2.0;
    let rate = rows.iter().filter(|r| r.2).count() as f64 / n;
    let target = (1.0 - pe) / 2.0 + residual;
    verdict(
        pe < 0.05 && (rate - target).abs() <= 0.05,
        format!("p_e = {pe:.4}, coin-toss rate {rate:.4}, target {target:.4} (residual {residual:.4})"),
    )
}

// 10. Exponent ordering and its trend in d.
fn exponent_ordering() -> Verdict {
    let algorithms = vec![Algorithm::OdLinbai, Algorithm::Secure, Algorithm::SingleRoundUniform];
    let shapes = [Shape { d: 4, k: 8 }, Shape { d: 8, k: 16 }, Shape { d: 16, k: 32 }];
    let grids = vec![
        vec![200, 400, 800, 1200, 1600, 2400, 3200, 4800],
        vec![500, 1000, 2000, 3000, 4000, 6000, 8000, 12000],
        vec![500, 1000, 1500, 2000, 3000, 4000, 6000, 8000, 12000, 16000, 24000],
    ];
    let config = SweepConfig {
        master_seed: Some(derive_seed(SEED, &[10])),
        generator: GeneratorKind::Sphere,
        shapes: shapes.to_vec(),
        algorithms: algorithms.clone(),
        t_grid: grids[0].clone(),
        t_grids: Some(grids),
        trials: 2000,
        noise_std: 1.0,
        noise: NoiseModel::Gaussian,
        secure: SecureConfig::default(),
        fresh_instances: false,
        attackers: Vec::new(),
        design: DesignParams::default(),
        workers: None,
        output: None,
        diagnostics: None,
    };
    let table = monte_carlo(&config).unwrap();
    let fit = |algo: Algorithm, d: usize| fit_exponent(&table, algo.name(), Some(d));
    let show = |f: &Result<ExponentFit, coded_bai::Error>| match f {
        Ok(f) => format!("{:.3e}±{:.1e}", f.slope, f.slope_se),
        Err(e) => format!("n/a ({e})"),
    };
    let mut parts = Vec::new();
    let mut ratios = Vec::new();
    let mut ordering = false;
    for s in shapes {
        let od = fit(Algorithm::OdLinbai, s.d);
        let sec = fit(Algorithm::Secure, s.d);
        let uni = fit(Algorithm::SingleRoundUniform, s.d);
        parts.push(format!("d={}: od {} secure {} uniform {}", s.d, show(&od), show(&sec), show(&uni)));
        if let (Ok(od), Ok(sec), Ok(uni)) = (&od, &sec, &uni) {
            ratios.push(sec.slope / uni.slope);
            if s.d == 16 {
                ordering = od.slope - sec.slope > od.slope_se + sec.slope_se
                    && sec.slope - uni.slope > sec.slope_se + uni.slope_se;
            }
        }
    }
    let trend = ratios.len() == 3 && ratios.windows(2).all(|w| w[1] > w[0]);
    parts.push(format!(
        "secure/uniform slope ratios {:?}",
        ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    ));
    parts.push(format!("ordering at d=16: {ordering}; trend: {trend}"));
    verdict(ordering && trend, parts.join("; "))
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Verdict); 10] = [
        (1, "budget", budget),
        (2, "noiseless correctness", noiseless),
        (3, "decode exactness", decode_exactness),
        (4, "decoded noise variance", decode_variance),
        (5, "covariance row sums", row_sums),
        (6, "KW optimality", kw_optimality),
        (7, "concentration", concentration),
        (8, "equivocation", equivocation),
        (9, "baseline insecurity", baseline_insecurity),
        (10, "exponent ordering", exponent_ordering),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {status} {name} ({:.1}s): {}", start.elapsed().as_secs_f64(), v.detail);
        failed += !v.pass as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
