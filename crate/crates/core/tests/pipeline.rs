use spurious_core::dataset::AttributionSummary;
use spurious_core::gwae::{train_gwae, GwaeConfig, GwaeDims};
use spurious_core::harness::{bootstrap, stratified_folds, upper_bound, Summary};
use spurious_core::pipeline::{run_pipeline, sweep, Artifacts, PcaCount, PipelineSpec, Slice, SweepKind, Transform};
use spurious_core::synth::{generate, SynthConfig};
use spurious_core::{EmbeddingDataset, Error};

fn small(seed: u64) -> (EmbeddingDataset, EmbeddingDataset) {
    let cfg = SynthConfig {
        seed,
        n_train: 600,
        n_test: 400,
        d: 24,
        ..Default::default()
    };
    let (tr, te, _) = generate(&cfg).unwrap();
    (tr, te)
}

fn summary(space: &str, n: usize, d: usize, favored: &[usize]) -> AttributionSummary {
    let mut fg = vec![0.1f32; n * d];
    let bg = vec![0.2f32; n * d];
    for j in 0..n {
        for &i in favored {
            fg[j * d + i] = 1.0;
        }
    }
    AttributionSummary::new(space, n, d, fg, bg).unwrap()
}

#[test]
fn rotation_then_keeping_everything_matches_baseline() {
    let (tr, te) = small(3);
    let mut art = Artifacts::default();
    art.summaries.insert("rot".into(), summary("rot:9", tr.len(), 24, &[0]));
    let base = run_pipeline(&PipelineSpec::baseline(), &tr, &te, &art).unwrap();
    let spec = PipelineSpec::baseline()
        .with(Transform::Rotate { seed: 9 })
        .with(Transform::Captum { summary: "rot".into(), n: 24 });
    let rotated = run_pipeline(&spec, &tr, &te, &art).unwrap();
    assert_eq!(rotated.space_id, "rot:9");
    assert!((base.report.accuracy - rotated.report.accuracy).abs() <= 0.005);
}

#[test]
fn captum_keeps_highest_scoring_neurons() {
    let (tr, te) = small(1);
    let mut art = Artifacts::default();
    art.summaries.insert("raw".into(), summary("raw", tr.len(), 24, &[5, 2, 17]));
    let spec = PipelineSpec::baseline().with(Transform::Captum { summary: "raw".into(), n: 3 });
    let run = run_pipeline(&spec, &tr, &te, &art).unwrap();
    assert_eq!(run.selected, Some(vec![2, 5, 17]));
    assert_eq!(run.n_features, 3);
}

#[test]
fn captum_requires_matching_space() {
    let (tr, te) = small(1);
    let mut art = Artifacts::default();
    art.summaries.insert("raw".into(), summary("raw", tr.len(), 24, &[0]));
    let spec = PipelineSpec::baseline()
        .with(Transform::Pca { n: PcaCount::Count(4) })
        .with(Transform::Captum { summary: "raw".into(), n: 2 });
    assert!(matches!(run_pipeline(&spec, &tr, &te, &art), Err(Error::SpaceMismatch { .. })));
    let spec = PipelineSpec::baseline().with(Transform::Captum { summary: "nope".into(), n: 2 });
    assert!(matches!(run_pipeline(&spec, &tr, &te, &art), Err(Error::UnknownArtifact(_))));
}

#[test]
fn gwae_slice_and_summary_in_its_space() {
    let (tr, te) = small(2);
    let mut config = GwaeConfig::new(GwaeDims::new(4, 4, 16).unwrap());
    config.epochs = 3;
    let model = train_gwae(&tr, &config).unwrap();
    let space = model.space_id().to_string();
    let mut art = Artifacts::default();
    art.models.insert("m".into(), model);
    // Favor neurons outside the label slice; selection may only pick inside it.
    art.summaries.insert("enc".into(), summary(&space, tr.len(), 24, &[10, 1, 3]));
    let spec = PipelineSpec::baseline()
        .with(Transform::Gwae { model: "m".into(), slice: Slice::Y })
        .with(Transform::Captum { summary: "enc".into(), n: 2 });
    let run = run_pipeline(&spec, &tr, &te, &art).unwrap();
    assert_eq!(run.selected, Some(vec![1, 3]));
    let spec = PipelineSpec::baseline()
        .with(Transform::Gwae { model: "m".into(), slice: Slice::Full })
        .with(Transform::Pca { n: PcaCount::ALL });
    assert_eq!(run_pipeline(&spec, &tr, &te, &art).unwrap().n_features, 24);
}

#[test]
fn sweep_produces_one_point_per_n() {
    let (tr, te) = small(4);
    let ns: Vec<usize> = (2..=20).step_by(2).collect();
    let pts = sweep(&PipelineSpec::baseline(), SweepKind::Pca, &ns, &tr, &te, &Artifacts::default()).unwrap();
    assert_eq!(pts.len(), 10);
    assert_eq!(pts[3].n, 8);
}

#[test]
fn bootstrap_is_deterministic_and_sized() {
    let (tr, te) = small(5);
    let art = Artifacts::default();
    let spec = PipelineSpec::baseline();
    let a = bootstrap(&tr, &te, &spec, &art, 3, 7, true).unwrap();
    assert_eq!(a, bootstrap(&tr, &te, &spec, &art, 3, 7, true).unwrap());
    assert!(a.reps.iter().all(|r| r.train_size == tr.len()));
    let recomputed = Summary::of(&a.reps.iter().map(|r| r.wga).collect::<Vec<_>>());
    assert!((recomputed.mean - a.wga.mean).abs() < 1e-9);
    assert!((recomputed.std - a.wga.std).abs() < 1e-9);
    let fixed = bootstrap(&tr, &te, &spec, &art, 3, 7, false).unwrap();
    assert_eq!(fixed.wga.std, 0.0);
    assert_eq!(fixed.accuracy.std, 0.0);
}

#[test]
fn upper_bound_on_balanced_separable_data_is_perfect() {
    let cfg = SynthConfig {
        rho: 0.5,
        mu: 12.0,
        n_train: 10,
        n_test: 500,
        d: 24,
        ..Default::default()
    };
    let (_, te, _) = generate(&cfg).unwrap();
    let res = upper_bound(&te, &PipelineSpec::baseline(), &Artifacts::default(), 5, 0).unwrap();
    assert_eq!(res.reps.len(), 5);
    assert!(res.reps.iter().all(|r| r.wga == 1.0));
    assert_eq!(res.wga.std, 0.0);
    let folds = stratified_folds(te.attributes(), 5, 0).unwrap();
    assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), te.len());
}
