//! The subcommands, as library functions returning what they wrote.

use std::path::{Path, PathBuf};
use std::time::Instant;

use labelnoise_core::causal::{self, DiscreteScm, ScmSizes, Verdict};
use labelnoise_core::data::{self, LabeledDataset};
use labelnoise_core::eval::{self, TransitionComparison};
use labelnoise_core::noise::{self, CorruptionRecord};
use labelnoise_core::rng;
use labelnoise_core::semi::{self, SemiReport};
use labelnoise_core::train::{self, EpochRecord, Observer, RunReport};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{ExperimentConfig, Mode};
use crate::dataset::{self, load_dataset, read_json, save_dataset, standardized, write_json};
use crate::error::{Error, Result};
use crate::plot;

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const GRID_FILE: &str = "grid.csv";

/// Stream offset for the instance perturbation under the noise seed.
const PERTURB_STREAM: u64 = 60;

/// Training data as the learner sees it, plus what evaluation needs.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: Option<LabeledDataset>,
    pub record: Option<CorruptionRecord>,
}

/// Loads the datasets, corrupts labels per `[noise]` (or picks up a stored
/// corruption record), standardizes and perturbs.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let raw = load_dataset(&cfg.dataset)?;
    let (raw, record) = match &cfg.noise {
        Some(spec) => {
            let (noisy, record) = spec.apply(&raw)?;
            (raw.with_noisy_labels(noisy)?, Some(record))
        }
        None => {
            let sidecar = cfg.dataset.with_file_name(dataset::RECORD_FILE);
            let record = if sidecar.exists() {
                Some(dataset::load_record(&sidecar)?)
            } else {
                None
            };
            (raw, record)
        }
    };
    let mut train = standardized(&raw)?;
    if let Some(gamma) = cfg.perturbation_gamma.filter(|g| *g > 0.0) {
        let seed = cfg.noise.as_ref().map_or(0, |n| n.seed);
        train.features = noise::perturb_instances(&train.features, gamma, rng::derive(seed, PERTURB_STREAM))?;
    }
    let test = match &cfg.test_dataset {
        Some(p) => Some(standardized(&load_dataset(p)?)?),
        None => None,
    };
    Ok(PreparedData { train, test, record })
}

/// Dataset-averaged ground-truth transition matrix of a corruption.
pub fn ground_truth_transition(record: &CorruptionRecord, dataset: &LabeledDataset) -> Result<eval::Matrix> {
    let clean = dataset
        .clean_labels
        .as_deref()
        .ok_or_else(|| Error::Config("ground truth needs clean labels".into()))?;
    Ok(eval::defined_rows(&noise::averaged_true_transition(record, clean)?)?)
}

/// Prints one line per epoch to stderr.
pub struct Progress;

impl Observer for Progress {
    fn on_epoch(&mut self, r: &EpochRecord) {
        let test = r
            .test_accuracy
            .map_or(String::from("-"), |t| format!("{:.4}/{:.4}", t[0], t[1]));
        eprintln!(
            "epoch {:>3}  keep {:.3}  train {:.4}/{:.4}  test {test}  total {:.4}",
            r.epoch, r.keep_ratio, r.train_accuracy[0], r.train_accuracy[1], r.total
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: Mode,
    pub final_test_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized_noise_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<TransitionComparison>,
    pub wall_clock_seconds: f64,
    pub files: Vec<PathBuf>,
}

/// Everything a training command produced, in memory.
#[derive(Debug, Clone)]
pub enum TrainOutput {
    Twin(Box<RunReport>),
    Semi(Box<SemiReport>),
}

/// Trains per mode and writes report, summary, CSV, plots and checkpoint
/// under `out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig, observer: &mut impl Observer) -> Result<(TrainSummary, TrainOutput)> {
    cfg.validate()?;
    let start = Instant::now();
    let data = prepare_data(cfg)?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let mut files = vec![out.join(CONFIG_FILE)];
    let realized_noise_rate = data.record.as_ref().map(|r| r.realized_rate);

    if cfg.mode == Mode::Semi {
        let split = cfg.semi_split.as_ref().expect("validated");
        let semi_cfg = cfg.semi.as_ref().expect("validated");
        let (clean, noisy) = data::split(&data.train, split)?;
        let (heads, mut report) = semi::semi_fit(&clean, Some(&noisy), data.test.as_ref(), semi_cfg)?;
        let secs = start.elapsed().as_secs_f64();
        report.wall_clock_seconds = Some(secs);
        checkpoint::semi_checkpoint(&heads).save(&out.join(CHECKPOINT_FILE))?;
        write_json(&out.join(REPORT_FILE), &report)?;
        files.extend([out.join(CHECKPOINT_FILE), out.join(REPORT_FILE)]);
        files.extend(plot::plot_semi_report(&report, out)?);
        files.push(out.join(SUMMARY_FILE));
        let summary = TrainSummary {
            mode: cfg.mode,
            final_test_accuracy: report.final_test_accuracy,
            realized_noise_rate,
            transition: None,
            wall_clock_seconds: secs,
            files,
        };
        write_json(&out.join(SUMMARY_FILE), &summary)?;
        return Ok((summary, TrainOutput::Semi(Box::new(report))));
    }

    let tcfg = cfg.effective_train()?;
    let fitted = train::fit_with(&data.train, data.test.as_ref(), &tcfg, observer)?;
    let secs = start.elapsed().as_secs_f64();
    let mut report = fitted.report.clone();
    report.wall_clock_seconds = Some(secs);
    let transition = match (&data.record, &report.transition_matrix) {
        (Some(rec), Some(est)) => Some(eval::compare_transition(
            est,
            &ground_truth_transition(rec, &data.train)?,
        )?),
        _ => None,
    };
    checkpoint::network_checkpoint(fitted.chosen()).save(&out.join(CHECKPOINT_FILE))?;
    write_json(&out.join(REPORT_FILE), &report)?;
    files.extend([out.join(CHECKPOINT_FILE), out.join(REPORT_FILE)]);
    files.extend(plot::plot_report(&report, out)?);
    files.push(out.join(SUMMARY_FILE));
    let summary = TrainSummary {
        mode: cfg.mode,
        final_test_accuracy: report.final_test_accuracy,
        realized_noise_rate,
        transition,
        wall_clock_seconds: secs,
        files,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok((summary, TrainOutput::Twin(Box::new(report))))
}

/// Writes the corrupted dataset to `out_dir/data` with its record sidecar and
/// returns the manifest path. Features are copied as stored.
pub fn cmd_corrupt(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let spec = cfg
        .noise
        .as_ref()
        .ok_or_else(|| Error::Config("corrupt requires a [noise] section".into()))?;
    let raw = load_dataset(&cfg.dataset)?;
    let (noisy, record) = spec.apply(&raw)?;
    let ds = raw.with_noisy_labels(noisy)?;
    let dir = cfg.out_dir.join("data");
    let manifest = save_dataset(&ds, &dir)?;
    dataset::save_record(&record, &dir.join(dataset::RECORD_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub examples: usize,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<TransitionComparison>,
}

/// Test accuracy of a checkpoint against clean labels, and optionally the
/// distance of a report's transition matrix to a corruption's ground truth
/// (averaged over `dataset`).
pub fn cmd_evaluate(
    checkpoint_path: &Path,
    manifest: &Path,
    report: Option<&Path>,
    record: Option<&Path>,
) -> Result<EvalSummary> {
    let ds = standardized(&load_dataset(manifest)?)?;
    let labels = ds
        .clean_labels
        .clone()
        .or_else(|| ds.observed_labels().map(<[usize]>::to_vec))
        .ok_or_else(|| Error::Config("evaluation dataset has no labels".into()))?;
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let x = ds.batch(&(0..ds.len()).collect::<Vec<_>>());
    let predictions = match ckpt.kind.as_str() {
        "semi" => checkpoint::semi_from_checkpoint(&ckpt)?.predict(&x)?,
        _ => checkpoint::network_from_checkpoint(&ckpt)?.predict(&x)?,
    };
    let transition = match (report, record) {
        (Some(rp), Some(rc)) => {
            let report: RunReport = read_json(rp)?;
            let est = report
                .transition_matrix
                .ok_or_else(|| Error::format(rp, "report has no transition matrix"))?;
            let rec = dataset::load_record(rc)?;
            Some(eval::compare_transition(&est, &ground_truth_transition(&rec, &ds)?)?)
        }
        (None, None) => None,
        _ => return Err(Error::Config("--report and --record go together".into())),
    };
    Ok(EvalSummary {
        examples: ds.len(),
        accuracy: eval::accuracy(&predictions, &labels)?,
        transition,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyArgs {
    pub num_scms: usize,
    /// Fixed supports; `None` draws each support uniformly from 2..=4.
    pub sizes: Option<ScmSizes>,
    pub tol: f64,
    pub seed: u64,
    /// Check this SCM instead of random ones.
    pub scm: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub checked: usize,
    pub failures: usize,
    pub theorem1_max_error: f64,
    pub theorem2_max_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial_theorem1_violation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial_theorem2_violation: Option<f64>,
    pub passed: bool,
}

/// Violation below which an adversarial construction counts as accepted.
pub const ADVERSARIAL_MARGIN: f64 = 0.01;

fn verdicts(scm: &DiscreteScm, tol: f64) -> Result<(Verdict, Verdict)> {
    Ok((causal::verify_theorem1(scm, tol)?, causal::verify_theorem2(scm, tol)?))
}

pub fn cmd_verify_causal(args: &VerifyArgs) -> Result<VerifySummary> {
    if !(args.tol >= 0.0) {
        return Err(Error::Config("tolerance must be non-negative".into()));
    }
    if let Some(path) = &args.scm {
        let scm: DiscreteScm = read_json(path)?;
        scm.validate()?;
        let (t1, t2) = verdicts(&scm, args.tol)?;
        let passed = t1.holds && t2.holds;
        return Ok(VerifySummary {
            checked: 1,
            failures: usize::from(!passed),
            theorem1_max_error: t1.max_error,
            theorem2_max_error: t2.max_error,
            adversarial_theorem1_violation: None,
            adversarial_theorem2_violation: None,
            passed,
        });
    }
    if args.num_scms == 0 {
        return Err(Error::Config("num_scms must be positive".into()));
    }
    if let Some(s) = args.sizes {
        if [s.z, s.x2, s.x1, s.y, s.yhat].iter().any(|&n| n < 2) {
            return Err(Error::Config("every support must have at least 2 values".into()));
        }
    }
    let mut size_rng = rng::seeded(rng::derive(args.seed, 1));
    let draw = |r: &mut rng::Rng| {
        args.sizes.unwrap_or_else(|| ScmSizes {
            z: r.random_range(2..=4),
            x2: r.random_range(2..=4),
            x1: r.random_range(2..=4),
            y: r.random_range(2..=4),
            yhat: r.random_range(2..=4),
        })
    };
    let (mut m1, mut m2, mut failures) = (0.0f64, 0.0f64, 0);
    for i in 0..args.num_scms {
        let sizes = draw(&mut size_rng);
        let scm = causal::random_scm(sizes, rng::derive(args.seed, 100 + i as u64))?;
        let (t1, t2) = verdicts(&scm, args.tol)?;
        m1 = m1.max(t1.max_error);
        m2 = m2.max(t2.max_error);
        failures += usize::from(!(t1.holds && t2.holds));
    }
    let adv_sizes = draw(&mut size_rng);
    let a1 = causal::verify_theorem1(
        &causal::adversarial_theorem1(adv_sizes, rng::derive(args.seed, 2))?,
        args.tol,
    )?;
    let a2 = causal::verify_theorem2(
        &causal::adversarial_theorem2(adv_sizes, rng::derive(args.seed, 3))?,
        args.tol,
    )?;
    let rejected = |v: &Verdict| !v.holds && v.max_error > ADVERSARIAL_MARGIN;
    Ok(VerifySummary {
        checked: args.num_scms,
        failures,
        theorem1_max_error: m1,
        theorem2_max_error: m2,
        adversarial_theorem1_violation: Some(a1.max_error),
        adversarial_theorem2_violation: Some(a2.max_error),
        passed: failures == 0 && rejected(&a1) && rejected(&a2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub gamma: f64,
    pub rate: f64,
    pub seed: u64,
    pub status: String,
    pub final_test_accuracy: Option<f64>,
    pub transition_frobenius: Option<f64>,
    pub error: Option<String>,
}

/// One training run per `(seed, gamma, rate)` cell, each in its own output
/// directory, aggregated into `out_dir/grid.csv`. Failed cells are recorded
/// and reported as [`Error::PartialGrid`] after all cells ran.
pub fn cmd_grid(base: &ExperimentConfig, gammas: &[f64], rates: &[f64], seeds: &[u64]) -> Result<Vec<GridRow>> {
    if gammas.is_empty() || rates.is_empty() {
        return Err(Error::Config("grid needs at least one gamma and one rate".into()));
    }
    let noise = base
        .noise
        .as_ref()
        .ok_or_else(|| Error::Config("grid requires a [noise] section".into()))?;
    let base_seed = base.train.as_ref().map_or(0, |t| t.seed);
    let seeds = if seeds.is_empty() {
        vec![base_seed]
    } else {
        seeds.to_vec()
    };
    let mut rows = Vec::new();
    for &seed in &seeds {
        for &rate in rates {
            for &gamma in gammas {
                let mut cfg = base.clone();
                cfg.perturbation_gamma = Some(gamma);
                cfg.noise = Some(noise::NoiseSpec { rate, ..noise.clone() });
                if let Some(t) = &mut cfg.train {
                    t.seed = seed;
                    t.schedule.noise_rate_estimate = rate;
                }
                if let Some(s) = &mut cfg.semi {
                    s.seed = seed;
                }
                cfg.out_dir = base.out_dir.join(format!("gamma{gamma}_rate{rate}_seed{seed}"));
                let row = match cmd_train(&cfg, &mut ()) {
                    Ok((s, _)) => GridRow {
                        gamma,
                        rate,
                        seed,
                        status: "ok".into(),
                        final_test_accuracy: s.final_test_accuracy,
                        transition_frobenius: s.transition.map(|t| t.frobenius_error),
                        error: None,
                    },
                    Err(e) => GridRow {
                        gamma,
                        rate,
                        seed,
                        status: "failed".into(),
                        final_test_accuracy: None,
                        transition_frobenius: None,
                        error: Some(e.to_string()),
                    },
                };
                rows.push(row);
            }
        }
    }
    write_grid_csv(&base.out_dir.join(GRID_FILE), &rows)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        return Err(Error::PartialGrid {
            failed,
            total: rows.len(),
        });
    }
    Ok(rows)
}

pub fn write_grid_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<GridRow>> {
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().map(|row| row.map_err(err)).collect()
}
