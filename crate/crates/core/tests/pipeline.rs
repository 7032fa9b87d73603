//! The documented pipeline, driven end to end through the public surface.

use panelps_core::dataset::{dataset_generate, Dataset, DatasetConfig, Split};
use panelps_core::eval::evaluate_dataset;
use panelps_core::learner::{train_from_manifest, TrainConfig};
use panelps_core::patterns::{init_heuristic, PatternKind, PatternSet, Space};
use tempfile::TempDir;

fn tiny(base: DatasetConfig) -> DatasetConfig {
    DatasetConfig {
        train_scenes: 2,
        test_scenes: 1,
        width: 16,
        height: 16,
        focal_px: 40.0,
        grid_cols: 4,
        grid_rows: 2,
        seed: 5,
        ..base
    }
}

#[test]
fn exact_model_dataset_reconstructs_exactly() {
    let dir = TempDir::new().unwrap();
    let manifest = dataset_generate(&tiny(DatasetConfig::on_plane()), dir.path()).unwrap();
    let ds = Dataset::load(&manifest).unwrap();
    let m = init_heuristic(PatternKind::MonoRandom, 4, &ds.grid, 9).unwrap();
    for split in [Split::Train, Split::Test] {
        let s = evaluate_dataset(&m, &ds, split, 0.5).unwrap();
        assert!(s.mean_loss < 1e-9, "{split:?}: {}", s.mean_loss);
    }
}

#[test]
fn training_writes_artifacts_consistent_with_its_report() {
    let dir = TempDir::new().unwrap();
    let manifest = dataset_generate(&tiny(DatasetConfig::default()), dir.path()).unwrap();
    let out = TempDir::new().unwrap();
    let cfg = TrainConfig {
        kind: PatternKind::TriRandom,
        k: Some(2),
        epochs: 3,
        batch_size: 1,
        seed: 7,
        ..TrainConfig::default()
    };
    let report = train_from_manifest(&cfg, &manifest, Some(out.path())).unwrap();

    assert!(report.best_test_loss <= report.initial_test_loss);
    let min_seen = report
        .epochs
        .iter()
        .map(|e| e.test_loss)
        .fold(report.initial_test_loss, f64::min);
    assert_eq!(report.best_test_loss, min_seen);

    for name in [
        "report.json",
        "patterns_epoch_0.json",
        "patterns_epoch_3.json",
        "patterns_final.json",
    ] {
        assert!(out.path().join(name).is_file(), "{name} missing");
    }

    let last = PatternSet::load(out.path().join("patterns_final.json")).unwrap();
    assert_eq!(last.space, Space::Intensity);
    assert!(last.values().iter().all(|v| (0.0..=1.0).contains(v)));

    let ds = Dataset::load(&manifest).unwrap();
    let s = evaluate_dataset(&last, &ds, Split::Test, cfg.plane_depth).unwrap();
    assert!(
        (s.mean_loss - report.final_test_loss).abs() < 1e-12,
        "{} vs {}",
        s.mean_loss,
        report.final_test_loss
    );
}

#[test]
fn a_generated_dataset_is_relocatable() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("a");
    let manifest = dataset_generate(&tiny(DatasetConfig::on_plane()), &first).unwrap();
    let ds = Dataset::load(&manifest).unwrap();
    let m = init_heuristic(PatternKind::MonoRandom, 4, &ds.grid, 9).unwrap();
    let before = evaluate_dataset(&m, &ds, Split::Test, 0.5).unwrap();

    let second = dir.path().join("b");
    std::fs::rename(&first, &second).unwrap();
    let moved = Dataset::load(second.join("manifest.json")).unwrap();
    let after = evaluate_dataset(&m, &moved, Split::Test, 0.5).unwrap();
    assert_eq!(before.mean_loss.to_bits(), after.mean_loss.to_bits());
}
