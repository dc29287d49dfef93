use spurious_core::dataset::group_counts;
use spurious_core::probe::{evaluate, fit_probe};
use spurious_core::synth::{generate, oracle_core_wga, SynthConfig};

fn cfg(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        n_train: 2000,
        n_test: 2000,
        ..Default::default()
    }
}

#[test]
fn group_frequencies_follow_rho() {
    let c = SynthConfig::default();
    let (tr, te, _) = generate(&c).unwrap();
    let tol = 2.0 / (c.n_train as f64).sqrt();
    let g = group_counts(&tr);
    let agree = (g[0] + g[3]) as f64 / tr.len() as f64;
    assert!((agree - c.rho).abs() < tol, "agreement {agree}");
    let h = group_counts(&te);
    for k in h {
        assert!((k as f64 / te.len() as f64 - 0.25).abs() < tol);
    }
}

#[test]
fn oracle_beats_raw_with_strong_correlation() {
    for seed in 0..10 {
        let (tr, te, truth) = generate(&cfg(seed)).unwrap();
        let raw = evaluate(&fit_probe(&tr, None).unwrap(), &te).unwrap().wga;
        let oracle = oracle_core_wga(&truth, &tr, &te).unwrap().wga;
        assert!(oracle >= raw, "seed {seed}: oracle {oracle} raw {raw}");
    }
}

#[test]
fn default_config_has_a_large_gap() {
    let (tr, te, truth) = generate(&SynthConfig::default()).unwrap();
    let raw = evaluate(&fit_probe(&tr, None).unwrap(), &te).unwrap().wga;
    let oracle = oracle_core_wga(&truth, &tr, &te).unwrap().wga;
    assert!(oracle - raw >= 0.15, "oracle {oracle} raw {raw}");
}

#[test]
fn no_correlation_means_no_gap() {
    let c = SynthConfig { rho: 0.5, ..cfg(1) };
    let (tr, te, truth) = generate(&c).unwrap();
    let raw = evaluate(&fit_probe(&tr, None).unwrap(), &te).unwrap().wga;
    let oracle = oracle_core_wga(&truth, &tr, &te).unwrap().wga;
    assert!((oracle - raw).abs() <= 0.03, "oracle {oracle} raw {raw}");
}

#[test]
fn oracle_extremes() {
    let (tr, te, truth) = generate(&SynthConfig { mu: 10.0, ..cfg(2) }).unwrap();
    assert!(oracle_core_wga(&truth, &tr, &te).unwrap().wga >= 0.99);
    let (tr, te, truth) = generate(&SynthConfig { mu: 0.0, ..cfg(2) }).unwrap();
    let rep = oracle_core_wga(&truth, &tr, &te).unwrap();
    assert!((rep.accuracy - 0.5).abs() < 0.05, "accuracy {}", rep.accuracy);
    // With no signal the worst group sits at or below chance.
    assert!(rep.wga <= 0.55, "wga {}", rep.wga);
}
