use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use labelnoise::commands::{self, Progress, VerifyArgs};
use labelnoise::config::{ExperimentConfig, Mode, Overrides};
use labelnoise::convert::{self, ConvertOptions, Source};
use labelnoise::{Error, Result};
use labelnoise_core::causal::ScmSizes;

#[derive(Parser)]
#[command(
    name = "labelnoise",
    version,
    about = "Label-noise learning with causal transition matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the mode: full, ablate_policy, ce_baseline, coteaching_baseline, semi.
    #[arg(long)]
    mode: Option<Mode>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(
            &self.config,
            &Overrides {
                seed: self.seed,
                out_dir: self.out.clone(),
                mode: self.mode,
            },
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Import IDX files or per-class JSON files into the dataset format.
    Convert {
        /// `idx` or `class-json`.
        #[arg(long, default_value = "idx")]
        format: String,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Directory of `0.json`, `1.json`, ... for `class-json`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "dataset")]
        name: String,
        /// Hold out this many examples (stratified) as `out/test`.
        #[arg(long)]
        test_examples: Option<usize>,
        /// Keep at most this many training examples (stratified).
        #[arg(long)]
        max_train_examples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Record per-channel standardization statistics in the manifests.
        #[arg(long)]
        standardize: bool,
    },
    /// Write a label-corrupted copy of the dataset plus its corruption record.
    Corrupt(Common),
    /// Train per mode; writes report, summary, CSV, plots and checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Suppress per-epoch progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Accuracy of a checkpoint, and optionally transition-matrix error.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Run report holding an estimated transition matrix.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Corruption record giving the ground truth.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Check the identifiability identities on random and adversarial SCMs.
    VerifyCausal {
        #[arg(long, default_value_t = 100)]
        num_scms: usize,
        /// Supports of Z,X2,X1,Y,Yhat, e.g. `3,3,3,3,3`; random in 2..=4 if absent.
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check one SCM from a JSON file instead.
        #[arg(long)]
        scm: Option<PathBuf>,
    },
    /// One run per (gamma, rate, seed) cell, aggregated into grid.csv.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
        gammas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        rates: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

fn parse_sizes(s: &str) -> Result<ScmSizes> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("bad size `{p}`"))))
        .collect::<Result<_>>()?;
    match v[..] {
        [z, x2, x1, y, yhat] => Ok(ScmSizes { z, x2, x1, y, yhat }),
        _ => Err(Error::Config("sizes takes five comma-separated values".into())),
    }
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Convert {
            format,
            images,
            labels,
            input,
            out,
            name,
            test_examples,
            max_train_examples,
            seed,
            standardize,
        } => {
            let source = match (format.as_str(), images, labels, input) {
                ("idx", Some(images), Some(labels), None) => Source::Idx { images, labels },
                ("class-json", None, None, Some(dir)) => Source::ClassJson { dir },
                ("idx", ..) => return Err(Error::Config("idx needs --images and --labels".into())),
                ("class-json", ..) => return Err(Error::Config("class-json needs --input".into())),
                (f, ..) => return Err(Error::Config(format!("unknown format `{f}`"))),
            };
            let opts = ConvertOptions {
                name,
                test_examples,
                max_train_examples,
                seed,
                standardize,
            };
            for p in convert::convert(&source, &out, &opts)? {
                println!("{}", p.display());
            }
        }
        Command::Corrupt(common) => {
            let cfg = common.load()?;
            println!("{}", commands::cmd_corrupt(&cfg)?.display());
        }
        Command::Train { common, quiet } => {
            let cfg = common.load()?;
            let (summary, _) = if quiet {
                commands::cmd_train(&cfg, &mut ())?
            } else {
                commands::cmd_train(&cfg, &mut Progress)?
            };
            print_json(&summary);
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            report,
            record,
        } => {
            let s = commands::cmd_evaluate(&checkpoint, &dataset, report.as_deref(), record.as_deref())?;
            print_json(&s);
        }
        Command::VerifyCausal {
            num_scms,
            sizes,
            tol,
            seed,
            scm,
        } => {
            let sizes = sizes.as_deref().map(parse_sizes).transpose()?;
            let s = commands::cmd_verify_causal(&VerifyArgs {
                num_scms,
                sizes,
                tol,
                seed,
                scm,
            })?;
            print_json(&s);
            if !s.passed {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Grid {
            common,
            gammas,
            rates,
            seeds,
        } => {
            let cfg = common.load()?;
            let rates = if rates.is_empty() {
                vec![cfg.noise.as_ref().map_or(0.0, |n| n.rate)]
            } else {
                rates
            };
            for row in commands::cmd_grid(&cfg, &gammas, &rates, &seeds)? {
                println!(
                    "gamma {} rate {} seed {}: {}",
                    row.gamma,
                    row.rate,
                    row.seed,
                    row.final_test_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
