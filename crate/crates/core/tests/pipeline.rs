//! End-to-end runs over a small generated dataset on disk.

use std::path::Path;

use plad::imaging::ImageTensor;
use plad::pipeline::{
    evaluate, evaluate_samples, load, load_image, save, train, Algorithm, DatasetLayout,
    EvalOptions, Sample, ThresholdMode, TrainParams,
};
use plad::postprocess::Label;
use plad::synthgear::{generate_dataset, Manifest, MANIFEST_FILE};
use plad::Error;

fn dataset(dir: &Path) -> DatasetLayout {
    generate_dataset(dir, 8, 3, 2, 42).unwrap();
    DatasetLayout::discover(dir).unwrap()
}

#[test]
fn layout_matches_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = dataset(tmp.path());
    assert_eq!(layout.train_normal.len(), 8);
    assert_eq!(layout.test_normal.len(), 3);
    assert_eq!(
        layout.test_anomalous.keys().collect::<Vec<_>>(),
        ["extra_gear", "gear_damage", "missing_gear", "not_anodised"]
    );
    let manifest: Manifest =
        serde_json::from_slice(&std::fs::read(tmp.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    for (path, label) in layout.test_files() {
        let key = layout.key(&path);
        let entry = manifest.files.iter().find(|e| e.path == key).unwrap();
        assert_eq!(entry.label, label);
    }
}

#[test]
fn both_algorithms_train_round_trip_and_detect() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = dataset(tmp.path());
    for algorithm in [Algorithm::Padim, Algorithm::PatchCore] {
        let trained = train(&layout, &TrainParams::new(algorithm)).unwrap();
        let bytes = save(&trained.model);
        let loaded = load(&bytes).unwrap();
        assert_eq!(loaded, trained.model);
        assert_eq!(save(&loaded), bytes);

        let scorer = loaded.scorer().unwrap();
        for path in &layout.train_normal {
            let v = scorer.verdict(&layout.key(path), &load_image(path).unwrap()).unwrap();
            assert_eq!(v.label, Label::Normal, "{algorithm} {}", path.display());
            assert!(v.confidence > 50.0);
        }

        let eval = evaluate(&loaded, &layout, EvalOptions::default()).unwrap();
        assert!(eval.report.auroc >= 0.9, "{algorithm}: auroc {}", eval.report.auroc);
        let missing: Vec<_> = eval
            .images
            .iter()
            .filter(|o| o.key.starts_with("test/missing_gear/"))
            .collect();
        assert!(missing.iter().all(|o| o.predicted == Label::Anomalous));
    }
}

#[test]
fn training_and_evaluation_are_deterministic_and_order_free() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = dataset(tmp.path());
    let params = TrainParams::new(Algorithm::PatchCore).with_seed(9);
    let a = train(&layout, &params).unwrap();
    let b = train(&layout, &params).unwrap();
    assert_eq!(save(&a.model), save(&b.model));

    let mut samples: Vec<Sample> = layout
        .test_files()
        .into_iter()
        .map(|(p, label)| Sample {
            key: layout.key(&p),
            image: load_image(&p).unwrap(),
            label,
        })
        .collect();
    let first = evaluate_samples(&a.model, &samples, EvalOptions::default()).unwrap();
    samples.reverse();
    samples.rotate_left(3);
    let second = evaluate_samples(&a.model, &samples, EvalOptions::default()).unwrap();
    assert!(first.report.same_scores(&second.report));
    let keys: Vec<&str> = first.images.iter().map(|o| o.key.as_str()).collect();
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    assert_eq!(keys, sorted);
}

#[test]
fn own_training_normals_are_all_true_negatives() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = dataset(tmp.path());
    let trained = train(&layout, &TrainParams::new(Algorithm::Padim)).unwrap();
    let mut samples: Vec<Sample> = layout
        .train_normal
        .iter()
        .map(|p| Sample {
            key: layout.key(p),
            image: load_image(p).unwrap(),
            label: Label::Normal,
        })
        .collect();
    for p in &layout.test_anomalous["missing_gear"] {
        samples.push(Sample {
            key: layout.key(p),
            image: load_image(p).unwrap(),
            label: Label::Anomalous,
        });
    }
    let eval = evaluate_samples(&trained.model, &samples, EvalOptions::default()).unwrap();
    assert_eq!(eval.report.confusion.tn, layout.train_normal.len());
    assert_eq!(eval.report.confusion.fp, 0);
}

#[test]
fn f1_optimal_mode_is_at_least_as_good_as_calibrated() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = dataset(tmp.path());
    let trained = train(&layout, &TrainParams::new(Algorithm::PatchCore)).unwrap();
    let calibrated = evaluate(&trained.model, &layout, EvalOptions::default()).unwrap();
    let tuned = evaluate(
        &trained.model,
        &layout,
        EvalOptions {
            threshold: ThresholdMode::F1Optimal,
            ..EvalOptions::default()
        },
    )
    .unwrap();
    assert!(tuned.report.f1_macro >= calibrated.report.f1_macro);
    assert_eq!(tuned.report.auroc, calibrated.report.auroc);
}

#[test]
fn training_needs_images() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = DatasetLayout::discover(tmp.path()).unwrap();
    assert!(matches!(
        train(&layout, &TrainParams::new(Algorithm::Padim)),
        Err(Error::InsufficientData(_))
    ));
    let one = vec![("a".to_string(), ImageTensor::filled(256, 256, 3, 0.5).unwrap())];
    assert!(plad::pipeline::train_images(&one, &TrainParams::new(Algorithm::PatchCore)).is_err());
}
