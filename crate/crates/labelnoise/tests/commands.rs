mod common;

use std::fs;

use labelnoise::commands::{
    cmd_corrupt, cmd_evaluate, cmd_grid, cmd_train, cmd_verify_causal, read_grid_csv, TrainOutput, VerifyArgs,
    CHECKPOINT_FILE, GRID_FILE, REPORT_FILE,
};
use labelnoise::config::Mode;
use labelnoise::dataset::{load_dataset, load_record, RECORD_FILE};
use labelnoise::Error;
use labelnoise_core::causal::ScmSizes;
use labelnoise_core::losses::LossWeights;
use labelnoise_core::train::RunReport;

fn twin(out: TrainOutput) -> RunReport {
    match out {
        TrainOutput::Twin(r) => *r,
        TrainOutput::Semi(_) => panic!("expected a twin report"),
    }
}

#[test]
fn corrupt_writes_noisy_copy_and_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::experiment(dir.path(), Mode::Full, 1);
    let manifest = cmd_corrupt(&cfg).unwrap();
    let ds = load_dataset(&manifest).unwrap();
    let clean = ds.clean_labels.as_ref().unwrap();
    let noisy = ds.noisy_labels.as_ref().unwrap();
    let rate = clean.iter().zip(noisy).filter(|(a, b)| a != b).count() as f64 / clean.len() as f64;
    assert!((rate - 0.2).abs() < 0.04, "realized {rate}");
    let rec = load_record(&manifest.with_file_name(RECORD_FILE)).unwrap();
    assert_eq!(rec.realized_rate, rate);

    let first: Vec<_> = ["manifest.json", RECORD_FILE]
        .iter()
        .map(|f| fs::read(manifest.with_file_name(f)).unwrap())
        .collect();
    cmd_corrupt(&cfg).unwrap();
    let second: Vec<_> = ["manifest.json", RECORD_FILE]
        .iter()
        .map(|f| fs::read(manifest.with_file_name(f)).unwrap())
        .collect();
    assert_eq!(first, second);

    cfg.noise.as_mut().unwrap().rate = 0.0;
    cfg.out_dir = dir.path().join("clean");
    let ds = load_dataset(&cmd_corrupt(&cfg).unwrap()).unwrap();
    assert_eq!(ds.clean_labels, ds.noisy_labels);
}

#[test]
fn corrupted_dataset_trains_like_inline_noise() {
    let dir = tempfile::tempdir().unwrap();
    let inline = common::experiment(dir.path(), Mode::CeBaseline, 2);
    let manifest = cmd_corrupt(&inline).unwrap();
    let mut stored = inline.clone();
    stored.dataset = manifest;
    stored.noise = None;
    stored.out_dir = dir.path().join("stored");
    let (a, ra) = cmd_train(&inline, &mut ()).unwrap();
    let (b, rb) = cmd_train(&stored, &mut ()).unwrap();
    assert_eq!(twin(ra).without_timing(), twin(rb).without_timing());
    assert_eq!(a.transition, b.transition);
}

#[test]
fn train_writes_its_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::experiment(dir.path(), Mode::Full, 2);
    let (summary, _) = cmd_train(&cfg, &mut ()).unwrap();
    for f in &summary.files {
        assert!(f.exists(), "{}", f.display());
    }
    let t = summary.transition.unwrap();
    assert!(t.frobenius_error.is_finite());
    let report: RunReport = serde_json::from_slice(&fs::read(cfg.out_dir.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report.final_test_accuracy, summary.final_test_accuracy);

    let eval = cmd_evaluate(
        &cfg.out_dir.join(CHECKPOINT_FILE),
        cfg.test_dataset.as_ref().unwrap(),
        None,
        None,
    )
    .unwrap();
    assert_eq!(Some(eval.accuracy), summary.final_test_accuracy);
}

#[test]
fn full_mode_without_auxiliary_terms_is_coteaching() {
    let dir = tempfile::tempdir().unwrap();
    let mut full = common::experiment(dir.path(), Mode::Full, 3);
    full.train.as_mut().unwrap().weights = LossWeights::ZERO;
    let mut cot = full.clone();
    cot.mode = Mode::CoteachingBaseline;
    cot.out_dir = dir.path().join("cot");
    let a = twin(cmd_train(&full, &mut ()).unwrap().1);
    let b = twin(cmd_train(&cot, &mut ()).unwrap().1);
    let acc = |r: &RunReport| {
        r.epochs
            .iter()
            .map(|e| (e.train_accuracy, e.test_accuracy, e.coteaching))
            .collect::<Vec<_>>()
    };
    assert_eq!(acc(&a), acc(&b));
    assert_eq!(a.final_test_accuracy, b.final_test_accuracy);
}

#[test]
fn ce_baseline_learns_clean_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::experiment(dir.path(), Mode::CeBaseline, 20);
    cfg.noise = None;
    cfg.train.as_mut().unwrap().learning_rate = 1e-2;
    let (s, _) = cmd_train(&cfg, &mut ()).unwrap();
    assert!(s.final_test_accuracy.unwrap() >= 0.95, "{:?}", s.final_test_accuracy);
}

#[test]
fn one_cell_grid_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let base = common::experiment(dir.path(), Mode::Full, 2);
    let rows = cmd_grid(&base, &[0.5], &[0.2], &[3]).unwrap();
    assert_eq!(rows.len(), 1);
    let mut single = base.clone();
    single.perturbation_gamma = Some(0.5);
    single.out_dir = dir.path().join("single");
    let (s, _) = cmd_train(&single, &mut ()).unwrap();
    assert_eq!(rows[0].final_test_accuracy, s.final_test_accuracy);
    assert_eq!(rows[0].transition_frobenius, s.transition.map(|t| t.frobenius_error));
    assert_eq!(read_grid_csv(&base.out_dir.join(GRID_FILE)).unwrap(), rows);
}

#[test]
fn grid_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let base = common::experiment(dir.path(), Mode::CeBaseline, 1);
    let rows = cmd_grid(&base, &[0.0, 1.0], &[0.1, 0.3], &[1, 2]).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.status == "ok"));
    let cells: std::collections::BTreeSet<String> = rows
        .iter()
        .map(|r| format!("{} {} {}", r.gamma, r.rate, r.seed))
        .collect();
    assert_eq!(cells.len(), 8);
}

#[test]
fn grid_reports_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let base = common::experiment(dir.path(), Mode::CeBaseline, 1);
    // a rate of 1 is not a valid corruption, so that cell fails
    match cmd_grid(&base, &[0.0], &[0.1, 1.0], &[1]) {
        Err(Error::PartialGrid { failed, total }) => assert_eq!((failed, total), (1, 2)),
        other => panic!("expected PartialGrid, got {other:?}"),
    }
    let rows = read_grid_csv(&base.out_dir.join(GRID_FILE)).unwrap();
    assert_eq!(rows.iter().filter(|r| r.status == "failed").count(), 1);
}

#[test]
fn verify_causal_passes_and_is_fast() {
    let start = std::time::Instant::now();
    let s = cmd_verify_causal(&VerifyArgs {
        num_scms: 100,
        sizes: None,
        tol: 1e-10,
        seed: 0,
        scm: None,
    })
    .unwrap();
    assert!(s.passed, "{s:?}");
    assert!(s.theorem1_max_error < 1e-10 && s.theorem2_max_error < 1e-10);
    assert!(start.elapsed().as_secs_f64() < 10.0);

    let fixed = cmd_verify_causal(&VerifyArgs {
        num_scms: 5,
        sizes: Some(ScmSizes::uniform(4)),
        tol: 1e-10,
        seed: 1,
        scm: None,
    })
    .unwrap();
    assert!(fixed.passed);
}

#[test]
fn verify_causal_reads_one_model() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("scm.json");
    let adv = labelnoise_core::causal::adversarial_theorem1(ScmSizes::uniform(3), 4).unwrap();
    fs::write(&p, serde_json::to_string(&adv).unwrap()).unwrap();
    let s = cmd_verify_causal(&VerifyArgs {
        num_scms: 1,
        sizes: None,
        tol: 1e-10,
        seed: 0,
        scm: Some(p),
    })
    .unwrap();
    assert!(!s.passed);
    assert!(s.theorem1_max_error > 0.01);
}
