use std::fs;

use ndarray::{array, Array2};

use orthokd::artifact::Artifact;
use orthokd::crossfit::{
    audit_leakage, distill, enhanced_kd_fit, enhanced_objective, fit_fold_teachers, fit_nuisances,
    fit_student, make_folds, per_fold_objectives, vanilla_kd_fit, DistillConfig, NuisanceBundle,
};
use orthokd::data::{
    generate, load_csv, train_test_split, write_csv, BayesOracle, CsvSchema, MixtureFamily,
    SmoothFamily,
};
use orthokd::forest::ForestParams;
use orthokd::gamma::GammaPolicy;
use orthokd::losses::LossSpec;
use orthokd::simplex::{CorrectionField, LabeledDataset};
use orthokd::students::{sgd_fit_labels, ScoreModel, SgdConfig, StudentConfig};
use orthokd::teachers::TeacherConfig;
use orthokd::KdError;

fn mixture(n: usize, seed: u64) -> LabeledDataset {
    generate(
        &BayesOracle::TabularMixture(MixtureFamily::new(3, 2)),
        n,
        seed,
    )
    .unwrap()
    .dataset
}

fn forest_teacher(trees: usize) -> TeacherConfig {
    TeacherConfig::Forest(ForestParams::classifier(trees, 3))
}

#[test]
fn out_of_fold_predictions_ignore_fold_labels() {
    let data = mixture(120, 1);
    for teacher in [
        forest_teacher(10),
        TeacherConfig::NadarayaWatson { exponent: None },
        TeacherConfig::RidgeMean { scale: 1.0 },
    ] {
        for b in [2, 10] {
            let plan = make_folds(data.n(), b, 4).unwrap();
            let checks = audit_leakage(&data, &plan, &teacher, 1e-3, 9).unwrap();
            assert_eq!(checks.len(), b);
            assert!(checks.iter().all(|c| c.unchanged), "{teacher:?} B={b}");
        }
    }
}

#[test]
fn pooled_objective_is_size_weighted_fold_mean() {
    let data = mixture(203, 2);
    let plan = make_folds(data.n(), 7, 0).unwrap();
    let bundle = fit_nuisances(
        &data,
        &plan,
        &forest_teacher(8),
        &GammaPolicy::ORTHOGONAL,
        1e-3,
    )
    .unwrap();
    let student = enhanced_kd_fit(
        &data,
        &bundle,
        &StudentConfig::Forest(ForestParams::regressor(3, 1)),
        &LossSpec::Sel,
    )
    .unwrap();
    let pooled = enhanced_objective(&data, &bundle, &student, &LossSpec::Sel).unwrap();
    let folds = per_fold_objectives(&data, &bundle, &student, &LossSpec::Sel).unwrap();
    let weighted: f64 = folds.iter().map(|&(_, l, n)| l * n as f64).sum::<f64>() / data.n() as f64;
    assert!((pooled - weighted).abs() < 1e-12);
    assert_eq!(folds.iter().map(|f| f.2).sum::<usize>(), data.n());
}

#[test]
fn zero_correction_with_shared_teacher_is_vanilla() {
    let data = mixture(150, 3);
    let teacher = forest_teacher(6);
    let students = [
        StudentConfig::Constant,
        StudentConfig::Forest(ForestParams::regressor(3, 5)),
        StudentConfig::Linear(SgdConfig {
            epochs: 3,
            ..SgdConfig::default()
        }),
    ];
    for student in students {
        let (fitted, vanilla) =
            vanilla_kd_fit(&data, &teacher, &student, &LossSpec::Sel, 1e-3).unwrap();
        let probs = fitted.predict_proba(data.features()).unwrap();
        let zero = CorrectionField::zeros(data.n(), data.k());
        let enhanced = fit_student(&data, &probs, &zero, &student, &LossSpec::Sel).unwrap();
        assert_eq!(vanilla, enhanced, "{}", student.name());
    }
}

#[test]
fn pooled_predictions_keep_original_order() {
    let data = mixture(60, 4);
    let plan = make_folds(data.n(), 3, 1).unwrap();
    let folds =
        fit_fold_teachers(&data, &plan, &TeacherConfig::RidgeMean { scale: 1.0 }, 1e-3).unwrap();
    for t in 0..3 {
        let train = data.subset(&plan.complement(t)).unwrap();
        let alone = TeacherConfig::RidgeMean { scale: 1.0 }
            .fit(&train, 1e-3)
            .unwrap();
        let expected = alone.predict_proba(data.features()).unwrap();
        for i in plan.fold(t) {
            assert_eq!(folds.probs.row(i), expected.row(i));
        }
    }
    let bundle = NuisanceBundle::from_fold_probs(folds, &data, &GammaPolicy::ZERO).unwrap();
    assert!(bundle.correction.is_zero());
}

#[test]
fn distill_is_deterministic_and_round_trips() {
    let data = mixture(160, 5);
    let config = DistillConfig {
        teacher: forest_teacher(10),
        folds: 4,
        ..DistillConfig::default()
    };
    let a = distill(&data, &config).unwrap();
    let b = distill(&data, &config).unwrap();
    assert_eq!(a.student, b.student);
    assert_eq!(a.bundle.provenance, b.bundle.provenance);

    let art = Artifact::distillation(
        a.student.clone(),
        a.bundle.provenance.clone(),
        config.clone(),
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("student.json");
    art.save(&path).unwrap();
    let back = Artifact::load(&path).unwrap();
    assert_eq!(back, art);
    let student = back.student.unwrap();
    assert_eq!(
        student.predict_scores(data.features()).unwrap(),
        a.student.predict_scores(data.features()).unwrap()
    );
}

#[test]
fn artifact_rejects_other_versions() {
    let art = Artifact::student(ScoreModel::Constant(orthokd::students::ConstantStudent {
        value: vec![0.0, -1.0],
    }));
    let text = art
        .to_json()
        .unwrap()
        .replace("\"version\": 1", "\"version\": 99");
    assert!(Artifact::from_json(&text).is_err());
}

#[test]
fn ace_needs_a_linear_student() {
    let data = mixture(80, 6);
    let config = DistillConfig {
        teacher: TeacherConfig::RidgeMean { scale: 1.0 },
        loss: LossSpec::ace(2.0).unwrap(),
        folds: 4,
        ..DistillConfig::default()
    };
    assert!(matches!(
        distill(&data, &config),
        Err(KdError::InvalidInput(_))
    ));
    let linear = DistillConfig {
        student: StudentConfig::Linear(SgdConfig {
            epochs: 5,
            ..SgdConfig::default()
        }),
        ..config
    };
    assert_eq!(distill(&data, &linear).unwrap().student.k(), 2);
}

#[test]
fn sgd_is_seed_deterministic() {
    let data = mixture(100, 7);
    let labels = data.labels().mapv(|y| y.max(1e-3).ln());
    let cfg = SgdConfig {
        epochs: 4,
        batch_size: 8,
        seed: 11,
        ..SgdConfig::default()
    };
    let a = sgd_fit_labels(data.features(), &labels, &cfg).unwrap();
    let b = sgd_fit_labels(data.features(), &labels, &cfg).unwrap();
    assert_eq!(a.student, b.student);
    assert_eq!(a.trace, b.trace);
    let c = sgd_fit_labels(data.features(), &labels, &SgdConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.student, c.student);
    assert!(a.trace.last().unwrap() < &a.trace[0]);
}

#[test]
fn csv_round_trip() {
    let data = generate(&BayesOracle::LogisticSmooth(SmoothFamily::new(3, 3)), 50, 8)
        .unwrap()
        .dataset;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_csv(&path, &data, None).unwrap();
    let schema = CsvSchema {
        label_column: "label".into(),
        categorical: vec![],
    };
    let back = load_csv(&path, &schema).unwrap();
    assert_eq!(back.dataset.labels(), data.labels());
    let diff = (back.dataset.features() - data.features()).mapv(f64::abs);
    assert!(diff.iter().all(|&d| d == 0.0));
    assert_eq!(back.feature_names, vec!["x0", "x1", "x2"]);
}

#[test]
fn csv_categorical_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    fs::write(
        &path,
        "size,shape,label\n1.5,round,10\n2.0,square,2\n0.5,round,2\n",
    )
    .unwrap();
    let schema = CsvSchema {
        label_column: "label".into(),
        categorical: vec!["shape".into()],
    };
    let loaded = load_csv(&path, &schema).unwrap();
    assert_eq!(
        loaded.feature_names,
        vec!["size", "shape=round", "shape=square"]
    );
    assert_eq!(loaded.class_names, vec!["2", "10"]);
    assert_eq!(
        loaded.dataset.features(),
        &array![[1.5, 1.0, 0.0], [2.0, 0.0, 1.0], [0.5, 1.0, 0.0]]
    );
    assert_eq!(loaded.dataset.classes(), vec![1, 0, 0]);

    fs::write(&path, "size,label\n1.0,a\n2.0\n").unwrap();
    let schema = CsvSchema {
        label_column: "label".into(),
        categorical: vec![],
    };
    assert!(matches!(
        load_csv(&path, &schema),
        Err(KdError::Parse { line: 3, .. }) | Err(KdError::Csv(_))
    ));
    fs::write(&path, "size,label\n1.0,a\nNaN,b\n").unwrap();
    assert!(matches!(
        load_csv(&path, &schema),
        Err(KdError::Parse { line: 3, .. })
    ));
    fs::write(&path, "size,other\n1.0,a\n").unwrap();
    assert!(load_csv(&path, &schema).is_err());
}

#[test]
fn split_is_disjoint_and_seeded() {
    let data = mixture(101, 9);
    let (tr, te) = train_test_split(&data, 0.25, 3).unwrap();
    assert_eq!(tr.n() + te.n(), 101);
    let (tr2, _) = train_test_split(&data, 0.25, 3).unwrap();
    assert_eq!(tr.features(), tr2.features());
    let rows = |d: &LabeledDataset| -> Vec<Vec<u64>> {
        d.features()
            .outer_iter()
            .map(|r| r.iter().map(|x| x.to_bits()).collect())
            .collect()
    };
    let a = rows(&tr);
    assert!(rows(&te).iter().all(|r| !a.contains(r)));
}

#[test]
fn nw_teacher_error_shrinks_with_n() {
    let oracle = BayesOracle::LogisticSmooth(SmoothFamily::new(2, 2));
    let probe = generate(&oracle, 2000, 99).unwrap();
    let mse = |n: usize| -> f64 {
        let data = generate(&oracle, n, n as u64).unwrap().dataset;
        let t = TeacherConfig::NadarayaWatson { exponent: None }
            .fit(&data, 1e-3)
            .unwrap();
        let p = t.predict_proba(probe.dataset.features()).unwrap();
        let d: Array2<f64> = p.probs() - &probe.p0;
        d.mapv(|x| x * x).sum() / probe.p0.nrows() as f64
    };
    assert!(mse(4000) < mse(250));
}
