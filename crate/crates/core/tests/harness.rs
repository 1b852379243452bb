use coded_bai::baselines::Algorithm;
use coded_bai::harness::stats::{wilson, Z95};
use coded_bai::harness::{fit_exponent, monte_carlo, Shape, SweepConfig, SweepTable};

fn config(noise_std: f64, trials: usize) -> SweepConfig {
    let mut c = SweepConfig::from_json(
        r#"{"master_seed": 5, "shapes": [{"d": 4, "k": 8}, {"d": 8, "k": 12}],
            "algorithms": ["secure", "od-linbai", "single-round-uniform"],
            "t_grid": [300, 600, 1200], "trials": 10}"#,
    )
    .unwrap();
    c.noise_std = noise_std;
    c.trials = trials;
    c
}

#[test]
fn noiseless_sweeps_make_no_errors() {
    let table = monte_carlo(&config(0.0, 30)).unwrap();
    assert_eq!(table.rows.len(), 2 * 3 * 3);
    for r in &table.rows {
        assert_eq!(r.errors, 0, "{r:?}");
        assert_eq!(r.pe_hat, 0.0);
        assert_eq!(r.upper_bound, Some(0.1));
        assert!(r.mean_pulls <= r.t as f64);
    }
}

#[test]
fn sweeps_do_not_depend_on_the_worker_count() {
    let mut c = config(1.0, 60);
    c.workers = Some(1);
    let one = monte_carlo(&c).unwrap();
    c.workers = Some(3);
    let three = monte_carlo(&c).unwrap();
    assert_eq!(one, three);
    assert_eq!(one, monte_carlo(&c).unwrap());
    assert!(one.rows.iter().any(|r| r.errors > 0));
    c.master_seed = Some(6);
    assert_ne!(one, monte_carlo(&c).unwrap());
}

#[test]
fn fresh_instances_change_the_table() {
    let mut c = config(1.0, 60);
    let fixed = monte_carlo(&c).unwrap();
    c.fresh_instances = true;
    assert_ne!(fixed, monte_carlo(&c).unwrap());
}

#[test]
fn doubling_trials_narrows_the_interval() {
    for p in [0.05, 0.2, 0.5] {
        let n = 4000;
        let a = wilson((p * n as f64) as usize, n, Z95).width();
        let b = wilson((p * 2.0 * n as f64) as usize, 2 * n, Z95).width();
        assert!((b / a - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01, "p={p}: {}", b / a);
    }
}

#[test]
fn tables_survive_csv_and_feed_the_fit() {
    let mut c = config(1.0, 200);
    c.shapes = vec![Shape { d: 4, k: 8 }];
    c.algorithms = vec![Algorithm::SingleRoundUniform];
    c.t_grid = vec![40, 80, 120, 160];
    let table = monte_carlo(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    table.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let back = SweepTable::read_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back.rows.len(), table.rows.len());
    for (a, b) in back.rows.iter().zip(&table.rows) {
        assert_eq!((a.t, a.errors, a.trials), (b.t, b.errors, b.trials));
    }
    let fit = fit_exponent(&back, "single-round-uniform", Some(4)).unwrap();
    assert!(fit.slope > 0.0, "{fit:?}");
}

#[test]
fn bad_configs_are_rejected() {
    assert!(SweepConfig::from_json(r#"{"shapes": [], "bogus": 1}"#).is_err());
    let mut c = config(1.0, 10);
    c.master_seed = None;
    assert!(monte_carlo(&c).is_err());
    let mut c = config(1.0, 10);
    c.t_grids = Some(vec![vec![100]]);
    assert!(monte_carlo(&c).is_err());
}

#[test]
fn failed_trials_are_reported_on_the_row() {
    let mut c = config(1.0, 5);
    c.t_grid = vec![5, 600];
    let table = monte_carlo(&c).unwrap();
    let small = table.rows.iter().find(|r| r.algo == "secure" && r.t == 5).unwrap();
    assert_eq!(small.failures, 5);
    assert!(small.failure.is_some());
    assert_eq!(small.trials, 0);
}
