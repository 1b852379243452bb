use coded_bai::attackers::{
    coin_toss_attack, coincidences, decomposition_attack, equivocation_curve, threshold_attack, trivial_attack,
    AttackerKind, CurveConfig, Decomposer,
};
use coded_bai::baselines::Algorithm;
use coded_bai::design::DesignOracle;
use coded_bai::instance::{generate, hardness, GeneratorKind, Instance};
use coded_bai::secure;
use coded_bai::stream::stream;

fn sphere(d: usize, k: usize, seed: u64) -> Instance {
    generate(&GeneratorKind::Sphere, d, k, seed).unwrap()
}

#[test]
fn secure_views_decompose_into_final_subsets_of_half_size() {
    for seed in 0..20 {
        let d = 8;
        let inst = sphere(d, 16, seed);
        let out = secure::run(&inst, 3000, seed).unwrap();
        let view = out.transcript().observer_view();
        assert_eq!(coincidences(&view, inst.arms()), 0);
        let dec = Decomposer::new(&view, inst.arms());
        let finals = dec.final_subsets(&view);
        assert_eq!(finals.len(), 2, "seed {seed}");
        assert!(finals.iter().all(|s| s.len() == d / 2));
        assert!(finals.iter().any(|s| s.contains(&out.declared_best())));
    }
}

#[test]
fn threshold_above_the_budget_selects_nothing() {
    let inst = sphere(4, 10, 1);
    let out = secure::run(&inst, 2000, 1).unwrap();
    let view = out.transcript().observer_view();
    let best = hardness(&inst).best;
    let r = threshold_attack(&view, inst.arms(), 2000, best, &mut stream(1, &[0]));
    assert_eq!(r.set_size, 0);
    assert!(!r.contains_best);
    let r = threshold_attack(&view, inst.arms(), 0, best, &mut stream(1, &[0]));
    assert!(r.set_size > 0);
}

#[test]
fn rankings_are_permutations_and_trivial_covers_everything() {
    let inst = sphere(8, 16, 2);
    let out = secure::run(&inst, 3000, 2).unwrap();
    let view = out.transcript().observer_view();
    let best = hardness(&inst).best;
    let mut rng = stream(2, &[0]);
    let results = [
        coin_toss_attack(&view, inst.arms(), best, &mut rng),
        decomposition_attack(&view, inst.arms(), best, &mut rng),
        threshold_attack(&view, inst.arms(), 10, best, &mut rng),
        trivial_attack(inst.arms(), best, &mut rng),
    ];
    for r in &results {
        let mut ids: Vec<usize> = r.ranking.iter().map(|a| a.0).collect();
        ids.sort();
        assert_eq!(ids, (0..16).collect::<Vec<_>>(), "{}", r.attacker);
        assert!(r.covers(best, 16));
    }
    assert_eq!(results[3].set_size, 16);
    assert!(results[3].contains_best);
}

#[test]
fn coin_toss_gains_little_against_the_secure_algorithm() {
    let d = 8;
    let config = CurveConfig {
        algorithm: Algorithm::Secure,
        attacker: AttackerKind::CoinToss,
        generator: GeneratorKind::Sphere,
        d,
        k: 16,
        t: 3000,
        trials: 1000,
        seed: 9,
        noise_std: 1.0,
        fresh_instances: true,
    };
    let curve = equivocation_curve(&config, &DesignOracle::default()).unwrap();
    let p = curve.coverage(1);
    let bound = 2.0 / d as f64;
    assert!(p <= bound + 3.0 * (bound * (1.0 - bound) / 1000.0).sqrt(), "{p}");
    // coverage is monotone in the set size and complete at K
    assert!(curve.points.windows(2).all(|w| w[0].coverage <= w[1].coverage));
    assert_eq!(curve.coverage(16), 1.0);
}

#[test]
fn curves_are_reproducible() {
    let config = CurveConfig {
        algorithm: Algorithm::OdLinbai,
        attacker: AttackerKind::Threshold { t_prime: None },
        generator: GeneratorKind::Sphere,
        d: 4,
        k: 8,
        t: 1000,
        trials: 200,
        seed: 3,
        noise_std: 1.0,
        fresh_instances: false,
    };
    let oracle = DesignOracle::default();
    let a = equivocation_curve(&config, &oracle).unwrap();
    let b = equivocation_curve(&config, &oracle).unwrap();
    assert_eq!(a.points, b.points);
}

#[test]
fn attacker_kinds_parse_and_serialise() {
    for name in ["coin-toss", "threshold", "decomposition", "trivial"] {
        let kind = AttackerKind::parse(name).unwrap();
        assert_eq!(kind.name(), name);
        let json = serde_json::to_string(&kind).unwrap();
        assert_eq!(serde_json::from_str::<AttackerKind>(&json).unwrap(), kind);
    }
    assert!(AttackerKind::parse("oracle").is_none());
}

// Against uncoded elimination the observer is one bit short: the final pair
// always covers the best arm, a single guess only half the time.
#[test]
fn uncoded_elimination_leaks_all_but_one_bit() {
    let config = CurveConfig {
        algorithm: Algorithm::OdLinbai,
        attacker: AttackerKind::CoinToss,
        generator: GeneratorKind::Sphere,
        d: 8,
        k: 16,
        t: 8000,
        trials: 1000,
        seed: 21,
        noise_std: 1.0,
        fresh_instances: true,
    };
    let curve = equivocation_curve(&config, &DesignOracle::default()).unwrap();
    assert!((curve.coverage(1) - 0.5).abs() < 0.06, "{}", curve.coverage(1));
    assert_eq!(curve.equivocation(0.4).estimate, Some(1.0));
    assert_eq!(curve.equivocation(0.6).estimate, Some(0.0));
}
