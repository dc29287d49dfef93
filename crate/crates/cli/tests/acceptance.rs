//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spurious::cli::{run_command, Cli};
use spurious::run::{metric_differences, read_json, RunFile};
use spurious_core::dataset::upsample_indices;
use spurious_core::gwae::{loss_and_grad, GwaeConfig, GwaeDims, GwaeParams};
use spurious_core::harness::{bootstrap, resample_rows, stratified_folds, upper_bound};
use spurious_core::hsic::{hsic, Kernel};
use spurious_core::lbfgs::Termination;
use spurious_core::metrics::evaluate_predictions;
use spurious_core::pca::{fit_pca, inverse_project, project};
use spurious_core::pipeline::{run_pipeline, Artifacts, PcaCount, PipelineSpec, Slice, Transform};
use spurious_core::probe::{evaluate_matrix, FitDiagnostics, ProbeModel};
use spurious_core::synth::{generate, oracle_core_wga, SynthConfig};
use spurious_core::Matrix;
use tempfile::TempDir;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg.into()) }
}

fn counts_of(y: &[u8], c: &[u8]) -> [usize; 4] {
    let mut k = [0; 4];
    for (&a, &b) in y.iter().zip(c) {
        k[2 * a as usize + b as usize] += 1;
    }
    k
}

fn gaussian(rng: &mut ChaCha8Rng, m: usize, p: usize) -> Matrix {
    Matrix::from_fn(m, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

fn dist2(x: &Matrix, a: usize, b: usize) -> f64 {
    (0..x.ncols()).map(|k| (x[(a, k)] - x[(b, k)]).powi(2)).sum()
}

fn oracle_kernel(x: &Matrix) -> Vec<Vec<f64>> {
    let m = x.nrows();
    let mut d: Vec<f64> = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            d.push(dist2(x, a, b).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    let s = if med > 0.0 { med } else { 1.0 };
    (0..m)
        .map(|a| (0..m).map(|b| (-dist2(x, a, b) / (2.0 * s * s)).exp()).collect())
        .collect()
}

fn oracle_hsic(x: &Matrix, y: &Matrix) -> f64 {
    let k = oracle_kernel(x);
    let l = oracle_kernel(y);
    let m = x.nrows();
    let mf = m as f64;
    let (mut t1, mut t2, mut sk, mut sl) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            t1 += k[i][j] * l[i][j];
            sk += k[i][j];
            sl += l[i][j];
            for liq in &l[i] {
                t2 += k[i][j] * liq;
            }
        }
    }
    ((t1 - 2.0 / mf * t2 + sk * sl / (mf * mf)) / ((mf - 1.0) * (mf - 1.0))).max(0.0)
}

fn c1_hsic_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for (pair, &m) in [2usize, 3, 8, 32].iter().cycle().take(20).enumerate() {
        let x = gaussian(&mut rng, m, 1 + pair % 3);
        let y = if pair % 5 == 0 { x.map(f64::tanh) } else { gaussian(&mut rng, m, 2) };
        let got = hsic(&x, &y, Kernel::default()).map_err(|e| e.to_string())?;
        worst = worst.max((got - oracle_hsic(&x, &y)).abs());
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-8, format!("max abs error {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("max abs error {worst:.1e} over 20 pairs in {elapsed:.2?}"))
}

fn c2_hsic_null_alternative() -> Check {
    let mut worst_null: f64 = 0.0;
    let mut worst_ratio = f64::INFINITY;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = gaussian(&mut rng, 1000, 1);
        let y = gaussian(&mut rng, 1000, 1);
        let null = hsic(&x, &y, Kernel::default()).map_err(|e| e.to_string())?;
        let same = hsic(&x, &x, Kernel::default()).map_err(|e| e.to_string())?;
        ensure(null < 0.01, format!("seed {seed}: independent HSIC {null}"))?;
        ensure(same > 10.0 * null, format!("seed {seed}: HSIC(X,X) {same} vs null {null}"))?;
        worst_null = worst_null.max(null);
        worst_ratio = worst_ratio.min(same / null);
    }
    Ok(format!("max null {worst_null:.2e}, min ratio {worst_ratio:.0}x over 5 seeds"))
}

fn c3_gradient() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = gaussian(&mut rng, 16, 6);
    let y: Vec<u8> = (0..16).map(|j| (j % 2) as u8).collect();
    let c: Vec<u8> = (0..16).map(|j| ((j / 2) % 2) as u8).collect();
    let config = GwaeConfig::new(GwaeDims::new(2, 2, 2).map_err(|e| e.to_string())?);
    let params = GwaeParams::init(config.dims, 8);
    let (_, grad) = loss_and_grad(&params, &config, &z, &y, &c, true).map_err(|e| e.to_string())?;
    let grad = grad.ok_or("no gradient returned")?;
    let step = 1e-4;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for block in 0..8 {
        for idx in 0..params.blocks()[block].len() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.blocks_mut()[block][idx] += delta;
                loss_and_grad(&p, &config, &z, &y, &c, false).map(|r| r.0.total)
            };
            let numeric = (eval(step).map_err(|e| e.to_string())? - eval(-step).map_err(|e| e.to_string())?)
                / (2.0 * step);
            let analytic = grad.blocks()[block][idx];
            worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3));
            count += 1;
        }
    }
    ensure(worst < 1e-3, format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.1e} over {count} parameters"))
}

fn c4_rotation_invariance() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let cfg = SynthConfig { seed, ..Default::default() };
        let (train, test, _) = generate(&cfg).map_err(|e| e.to_string())?;
        let art = Artifacts::default();
        let base = run_pipeline(&PipelineSpec::baseline(), &train, &test, &art).map_err(|e| e.to_string())?;
        let spec = PipelineSpec::baseline().with(Transform::Rotate { seed: 1000 + seed });
        let rot = run_pipeline(&spec, &train, &test, &art).map_err(|e| e.to_string())?;
        let gap = (base.report.accuracy - rot.report.accuracy).abs();
        ensure(gap <= 0.005, format!("seed {seed}: accuracy {} vs {}", base.report.accuracy, rot.report.accuracy))?;
        worst = worst.max(gap);
    }
    Ok(format!("max accuracy gap {:.3} pp over 5 seeds", 100.0 * worst))
}

fn c5_wga_truth() -> Check {
    // Groups are 2y + c. Each case: predictions, labels, attributes, per-group accuracy, WGA.
    type Case = ([u8; 8], [u8; 8], [u8; 8], [Option<f64>; 4], f64);
    let cases: [Case; 4] = [
        (
            [0, 0, 0, 1, 1, 1, 1, 1],
            [0, 0, 0, 0, 1, 1, 1, 1],
            [0, 0, 1, 1, 0, 0, 1, 1],
            [Some(1.0), Some(0.5), Some(1.0), Some(1.0)],
            0.5,
        ),
        (
            [1, 0, 1, 0, 0, 0, 1, 1],
            [0, 0, 0, 0, 1, 1, 1, 1],
            [0, 0, 1, 1, 0, 0, 1, 1],
            [Some(0.5), Some(0.5), Some(0.0), Some(1.0)],
            0.0,
        ),
        (
            [0, 1, 0, 0, 1, 1, 1, 0],
            [0, 0, 0, 0, 1, 1, 1, 1],
            [0, 0, 0, 0, 1, 1, 1, 1],
            [Some(0.75), None, None, Some(0.75)],
            0.75,
        ),
        (
            [0, 0, 0, 0, 0, 0, 0, 0],
            [0, 0, 0, 0, 0, 0, 0, 1],
            [0, 1, 1, 1, 1, 1, 1, 1],
            [Some(1.0), Some(1.0), None, Some(0.0)],
            0.0,
        ),
    ];
    for (k, (pred, y, c, per_group, wga)) in cases.iter().enumerate() {
        let r = evaluate_predictions(pred, y, c).map_err(|e| e.to_string())?;
        ensure(r.per_group_acc == *per_group, format!("case {k}: per-group {:?}", r.per_group_acc))?;
        ensure(r.wga == *wga, format!("case {k}: wga {}", r.wga))?;
    }
    // Through a probe: logits -1, 0, 0, 2, ... with zero logits predicting class 0.
    let x = Matrix::from_row_slice(8, 1, &[-1.0, 0.0, 0.0, 2.0, 0.0, 3.0, 1.0, -2.0]);
    let probe = ProbeModel {
        weights: vec![1.0],
        bias: 0.0,
        feature_index: None,
        diagnostics: FitDiagnostics {
            final_loss: 0.0,
            grad_norm: 0.0,
            iterations: 0,
            evaluations: 0,
            converged: true,
            termination: Termination::GradientTolerance,
        },
    };
    let y = [0, 0, 1, 1, 1, 1, 0, 0];
    let c = [0, 1, 0, 1, 0, 1, 0, 1];
    let r = evaluate_matrix(&probe, &x, &y, &c).map_err(|e| e.to_string())?;
    ensure(
        r.per_group_acc == [Some(0.5), Some(1.0), Some(0.0), Some(1.0)] && r.wga == 0.0,
        format!("probe case: {:?}", r.per_group_acc),
    )?;
    Ok("4 prediction cases and 1 probe case exact".into())
}

fn c6_pca() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = gaussian(&mut rng, 40, 12);
    let pca = fit_pca(&x).map_err(|e| e.to_string())?;
    let k = pca.n_components();
    let gram = &pca.components * pca.components.transpose();
    let ortho = (gram - Matrix::identity(k, k)).abs().max();
    let recon = inverse_project(&pca, &project(&pca, &x, k).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let rec_err = (recon - &x).abs().max();
    let u = gaussian(&mut rng, 30, 1);
    let v = gaussian(&mut rng, 1, 8);
    let rank1 = &u * &v;
    let p1 = fit_pca(&rank1).map_err(|e| e.to_string())?;
    let s2 = p1.singular_values.get(1).copied().unwrap_or(0.0);
    ensure(ortho <= 1e-5, format!("orthonormality defect {ortho:e}"))?;
    ensure(rec_err <= 1e-5, format!("reconstruction error {rec_err:e}"))?;
    ensure(s2 < 1e-6, format!("rank-1 second singular value {s2:e}"))?;
    Ok(format!("orthonormality {ortho:.1e}, reconstruction {rec_err:.1e}, rank-1 s2 {s2:.1e}"))
}

fn c7_upsampling() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 537;
    let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
    let c: Vec<u8> = y.iter().map(|&v| if rng.random::<f64>() < 0.9 { v } else { 1 - v }).collect();
    let before = counts_of(&y, &c);
    let a = upsample_indices(&y, &c, 11).map_err(|e| e.to_string())?;
    let b = upsample_indices(&y, &c, 11).map_err(|e| e.to_string())?;
    let other = upsample_indices(&y, &c, 12).map_err(|e| e.to_string())?;
    let target = *before.iter().max().unwrap();
    let ay: Vec<u8> = a.iter().map(|&j| y[j]).collect();
    let ac: Vec<u8> = a.iter().map(|&j| c[j]).collect();
    let after = counts_of(&ay, &ac);
    ensure(after.iter().all(|&k| k == target), format!("counts {before:?} -> {after:?}"))?;
    ensure(a.iter().all(|&j| j < n), "index outside the original rows")?;
    let mut seen = vec![0usize; n];
    for &j in &a {
        seen[j] += 1;
    }
    let g = |j: usize| 2 * y[j] as usize + c[j] as usize;
    for j in 0..n {
        let whole = target / before[g(j)];
        ensure(seen[j] == whole || seen[j] == whole + 1, format!("row {j} copied {} times", seen[j]))?;
    }
    ensure(a == b, "same seed gave different indices")?;
    ensure(a != other, "different seeds gave identical order")?;
    Ok(format!("{before:?} -> {after:?}, deterministic"))
}

fn c8_synthetic_disentanglement() -> Check {
    let dims = GwaeDims::new(8, 8, 48).map_err(|e| e.to_string())?;
    let outcomes: Vec<Result<(f64, f64, f64, Duration), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..5u64)
            .map(|seed| {
                s.spawn(move || -> Result<_, String> {
                    let start = Instant::now();
                    let cfg = SynthConfig { seed, ..Default::default() };
                    let (train, test, truth) = generate(&cfg).map_err(|e| e.to_string())?;
                    let oracle = oracle_core_wga(&truth, &train, &test).map_err(|e| e.to_string())?.wga;
                    let art = Artifacts::default();
                    let raw = run_pipeline(&PipelineSpec::baseline(), &train, &test, &art)
                        .map_err(|e| e.to_string())?
                        .report
                        .wga;
                    let gcfg = GwaeConfig { seed, ..GwaeConfig::new(dims) };
                    let spec = PipelineSpec::baseline().with(Transform::GwaeTrain { config: gcfg, slice: Slice::Y });
                    let zy = run_pipeline(&spec, &train, &test, &art).map_err(|e| e.to_string())?.report.wga;
                    Ok((raw, oracle, zy, start.elapsed()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("panicked".into()))).collect()
    });
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for (seed, o) in outcomes.into_iter().enumerate() {
        let (raw, oracle, zy, took) = o.map_err(|e| format!("seed {seed}: {e}"))?;
        let recovery = (zy - raw) / (oracle - raw);
        ensure(oracle > raw, format!("seed {seed}: oracle {oracle} does not beat raw {raw}"))?;
        ensure(
            recovery >= 0.90,
            format!("seed {seed}: raw {raw:.3} oracle {oracle:.3} z_y {zy:.3} recovery {recovery:.3}"),
        )?;
        ensure(took < Duration::from_secs(120), format!("seed {seed} took {took:?}"))?;
        worst = worst.min(recovery);
        parts.push(format!("{recovery:.2}"));
    }
    Ok(format!("gap recovery per seed [{}], min {worst:.3}", parts.join(", ")))
}

fn cli(args: &[&str]) -> Result<RunFile, String> {
    let mut full = vec!["spurious"];
    full.extend_from_slice(args);
    let parsed = <Cli as clap::Parser>::try_parse_from(full).map_err(|e| e.to_string())?;
    run_command(parsed.command).map(|r| r.0).map_err(|e| e.to_string())
}

fn c9_rerun_determinism() -> Check {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    cli(&["synth-gen", "--n-train", "1200", "--n-test", "800", "--seed", "9", "--out", &p("data")])?;
    let m = p("data/manifest.json");
    fs::write(
        dir.join("spec.json"),
        r#"{"transforms":[{"op":"gwae_train","slice":"y","config":{"dims":{"label":8,"attribute":8,"residual":48},"epochs":5}},{"op":"pca","n":6}]}"#,
    )
    .map_err(|e| e.to_string())?;
    let spec = p("spec.json");
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("probe", vec!["probe".into(), "--manifest".into(), m.clone()]),
        ("gwae-train", vec!["gwae-train".into(), "--manifest".into(), m.clone(), "--dims".into(), "8,8,48".into(), "--epochs".into(), "3".into(), "--seed".into(), "2".into()]),
        ("pca", vec!["pca".into(), "--manifest".into(), m.clone(), "--n".into(), "5".into()]),
        ("rotate", vec!["rotate".into(), "--dim".into(), "16".into(), "--seed".into(), "5".into()]),
        ("pipeline", vec!["pipeline".into(), "--manifest".into(), m.clone(), "--spec".into(), spec.clone()]),
        ("sweep", vec!["sweep".into(), "--manifest".into(), m.clone(), "--transform".into(), "pca".into(), "--n".into(), "2:20:6".into()]),
        ("bootstrap", vec!["bootstrap".into(), "--manifest".into(), m.clone(), "--spec".into(), spec.clone(), "--reps".into(), "2".into(), "--seed".into(), "4".into()]),
        ("upper-bound", vec!["upper-bound".into(), "--manifest".into(), m.clone(), "--folds".into(), "3".into()]),
    ];
    let mut checked = 0;
    for (name, mut args) in runs {
        let first = p(&format!("{name}-1"));
        args.extend(["--out".into(), first.clone()]);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        cli(&refs)?;
        let run_path = Path::new(&first).join("run.json");
        let second = p(&format!("{name}-2"));
        let replay = cli(&["rerun", run_path.to_str().unwrap(), "--out", &second])?;
        let recorded: RunFile = read_json(&run_path).map_err(|e| e.to_string())?;
        let diffs = metric_differences(&recorded.metrics, &replay.metrics);
        ensure(diffs.is_empty(), format!("{name}: {}", diffs.join(", ")))?;
        let a = fs::read(Path::new(&first).join("metrics.csv")).map_err(|e| e.to_string())?;
        let b = fs::read(Path::new(&second).join("metrics.csv")).map_err(|e| e.to_string())?;
        ensure(a == b, format!("{name}: metrics.csv differs"))?;
        checked += 1;
    }
    Ok(format!("{checked} commands replayed with bitwise-equal metrics"))
}

fn c10_protocols() -> Check {
    let cfg = SynthConfig { n_train: 700, n_test: 503, seed: 10, ..Default::default() };
    let (train, test, _) = generate(&cfg).map_err(|e| e.to_string())?;
    for r in 0..20 {
        let (rows, _) = resample_rows(train.labels(), train.attributes(), true, r, r as usize).map_err(|e| e.to_string())?;
        ensure(rows.len() == train.len(), format!("resample {r} has {} rows", rows.len()))?;
    }
    let art = Artifacts::default();
    let spec = PipelineSpec::baseline().with(Transform::Pca { n: PcaCount::Count(8) });
    let boot = bootstrap(&train, &test, &spec, &art, 3, 1, true).map_err(|e| e.to_string())?;
    ensure(boot.reps.iter().all(|r| r.train_size == train.len()), "bootstrap train size changed")?;

    let c = test.attributes();
    for folds in [2, 3, 5, 7] {
        let parts = stratified_folds(c, folds, 42).map_err(|e| e.to_string())?;
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        ensure(all == (0..test.len()).collect::<Vec<_>>(), format!("{folds} folds are not a partition"))?;
        let ones: Vec<usize> = parts.iter().map(|p| p.iter().filter(|&&j| c[j] == 1).count()).collect();
        let zeros: Vec<usize> = parts.iter().map(|p| p.iter().filter(|&&j| c[j] == 0).count()).collect();
        for v in [&ones, &zeros] {
            let spread = v.iter().max().unwrap() - v.iter().min().unwrap();
            ensure(spread <= 1, format!("{folds} folds: background counts {v:?}"))?;
        }
    }
    let ub = upper_bound(&test, &PipelineSpec::baseline(), &art, 5, 3).map_err(|e| e.to_string())?;
    let held: usize = ub.reps.iter().map(|r| r.eval_size).sum();
    ensure(held == test.len(), format!("upper-bound folds hold {held} of {}", test.len()))?;
    ensure(
        ub.reps.iter().all(|r| r.train_size + r.eval_size == test.len()),
        "upper-bound train and held-out sizes do not add up",
    )?;
    Ok("resample sizes equal; folds disjoint, covering, stratified within 1".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("HSIC oracle equivalence", c1_hsic_oracle),
        ("HSIC null/alternative", c2_hsic_null_alternative),
        ("GwAE gradient check", c3_gradient),
        ("rotation invariance", c4_rotation_invariance),
        ("WGA unit truth", c5_wga_truth),
        ("PCA", c6_pca),
        ("upsampling", c7_upsampling),
        ("synthetic disentanglement", c8_synthetic_disentanglement),
        ("run.json determinism", c9_rerun_determinism),
        ("bootstrap/upper-bound protocol", c10_protocols),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} ({took:.1?})", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why} ({took:.1?})", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
