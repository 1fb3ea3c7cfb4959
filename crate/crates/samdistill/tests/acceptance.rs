//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//! Run with `cargo test --release -p samdistill --test acceptance -- --nocapture`.

use std::sync::Mutex;

use samdistill::experiment::{run_experiment, ExperimentConfig};
use samdistill::train::TrainConfig;
use samdistill::verify::{self, CheckOutcome};

// Criteria carry runtime limits, so they run one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn check(run: impl FnOnce() -> CheckOutcome) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let outcome = run();
    println!("{}", outcome.line());
    assert!(outcome.passed, "{}", outcome.line());
}

#[test]
fn criterion_01_loss_oracles() {
    check(|| verify::loss_oracles(100, 1));
}

#[test]
fn criterion_02_gradient_checks() {
    check(|| verify::gradient_checks(20, 2));
}

#[test]
fn criterion_03_smooth_l1_continuity() {
    check(verify::smooth_l1_continuity);
}

#[test]
fn criterion_04_stop_gradient_contract() {
    check(|| verify::stop_gradient_contract(10));
}

#[test]
fn criterion_05_relation_properties() {
    check(|| verify::relation_properties(200, 5));
}

#[test]
fn criterion_06_spf_structure() {
    check(verify::spf_structure);
}

#[test]
fn criterion_07_baseline_equivalence() {
    check(|| verify::baseline_equivalence(50));
}

#[test]
fn criterion_08_distillation_gain() {
    check(|| {
        let base = TrainConfig::default();
        assert_eq!((base.data.height, base.data.width), (64, 64));
        assert_eq!((base.data.train_count, base.data.val_count), (200, 32));
        assert_eq!(base.steps, 2000);
        assert_eq!((base.lambda1, base.lambda2), (0.005, 200.0));
        let data = tempfile::tempdir().expect("temp dir");
        let mut exp = ExperimentConfig::new(base, vec![0, 1, 2]);
        exp.data_root = Some(data.path().to_path_buf());
        exp.verbose = true;
        let report = run_experiment(&exp).expect("experiment runs");
        for o in &report.outcomes {
            println!(
                "    seed {}: distilled {:.4} dB, baseline {:.4} dB, delta {:+.4} dB",
                o.seed, o.distilled_psnr, o.baseline_psnr, o.delta
            );
        }
        verify::distillation_gain(&report)
    });
}

#[test]
fn criterion_09_inference_contract() {
    check(verify::inference_contract);
}

#[test]
fn criterion_10_metrics_and_resume() {
    check(verify::metrics_and_resume);
}
