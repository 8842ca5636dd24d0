use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conformal_ood::io::{
    read_artifact, write_artifact, write_feature_file, FeatureFileHeader, FeatureRecord,
};
use conformal_ood::Split;
use conformal_ood_cli::pipeline::{self, Dataset, TestInput};
use conformal_ood_cli::{report, CliError, Overrides, RunConfig};

/// Conformal out-of-distribution detection with transformation-based scores.
#[derive(Parser)]
#[command(name = "cood", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `n` from the config.
    #[arg(long)]
    n: Option<usize>,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn load(&self, epsilons: Vec<f64>, smoothed: bool) -> Result<RunConfig, CliError> {
        let overrides = Overrides {
            seed: self.seed,
            n: self.n,
            epsilons,
            smoothed,
        };
        Ok(RunConfig::load(self.config.as_deref())?.apply(&overrides))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic splits as a feature file.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Score the calibration split and write a calibration artifact.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Score test points against an artifact and write per-point decisions.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        artifact: PathBuf,
        /// Threshold; repeat for several. Replaces `epsilons` from the config.
        #[arg(long = "epsilon")]
        epsilons: Vec<f64>,
        /// Use randomized tie-breaking p-values.
        #[arg(long)]
        smoothed: bool,
        /// Proceed with a warning when the artifact came from another config.
        #[arg(long)]
        allow_fingerprint_mismatch: bool,
    },
    /// AUROC and TNR for each transform count in `n_sweep`.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        smoothed: bool,
    },
    /// False detection rate under calibration resampling.
    FdrSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long = "epsilon")]
        epsilons: Vec<f64>,
    },
    /// Histogram of iD p-values over independent trials.
    PvalueHist {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = common.load(Vec::new(), false)?;
            cfg.validate()?;
            let seed = cfg.require_seed()?;
            let data = Dataset::load(&cfg, seed)?;
            let records = synth_records(&data);
            write_feature_file(
                &common.out,
                &FeatureFileHeader {
                    format_version: 1,
                    shape: vec![2],
                },
                &records,
            )?;
            println!(
                "wrote {} records to {}",
                records.len(),
                common.out.display()
            );
        }
        Command::Calibrate { common } => {
            let cfg = common.load(Vec::new(), false)?;
            let art = pipeline::run_calibrate(&cfg)?;
            write_artifact(&common.out, &art)?;
            println!("k {} fingerprint {}", art.k(), art.fingerprint());
        }
        Command::Detect {
            common,
            artifact,
            epsilons,
            smoothed,
            allow_fingerprint_mismatch,
        } => {
            let cfg = common.load(epsilons, smoothed)?;
            let art = read_artifact(&artifact)?;
            let rows = pipeline::run_detect(&cfg, &art, allow_fingerprint_mismatch)?;
            report::write(&common.out, &report::detect_csv(&rows, &cfg.epsilons))?;
            println!("scored {} test points", rows.len());
        }
        Command::Evaluate { common, smoothed } => {
            let cfg = common.load(Vec::new(), smoothed)?;
            let reports = pipeline::run_evaluate(&cfg)?;
            report::write(&common.out, &report::evaluate_csv(&reports))?;
            for (n, r) in &reports {
                println!("n {n} auroc {:.4} tnr {:.4}", r.auroc, r.tnr_at_level);
            }
        }
        Command::FdrSweep { common, epsilons } => {
            let cfg = common.load(epsilons, false)?;
            let rows = pipeline::run_fdr_sweep(&cfg)?;
            report::write(&common.out, &report::fdr_csv(&rows))?;
            for row in &rows {
                println!(
                    "epsilon {} mean_fdr {:.4} stderr {:.4}",
                    row.epsilon,
                    row.mean_fdr,
                    row.stderr()
                );
            }
        }
        Command::PvalueHist { common } => {
            let cfg = common.load(Vec::new(), false)?;
            let hist = pipeline::run_pvalue_hist(&cfg)?;
            report::write(&common.out, &report::hist_csv(&hist))?;
            println!("chi_square {:.3} dof {}", hist.chi_square, hist.dof());
        }
    }
    Ok(())
}

fn synth_records(data: &Dataset) -> Vec<FeatureRecord> {
    let features = |input: &TestInput| match input {
        TestInput::Features(x) => x.data().to_vec(),
        TestInput::Scores(_) => unreachable!("synthetic data has features"),
    };
    let mut records = Vec::new();
    for (j, x) in data.train.iter().enumerate() {
        records.push(FeatureRecord {
            id: format!("train-{j}"),
            split: Split::Train,
            data: x.data().to_vec(),
        });
    }
    for (j, x) in data.cal.iter().enumerate() {
        records.push(FeatureRecord {
            id: format!("cal-{j}"),
            split: Split::Cal,
            data: features(x),
        });
    }
    for p in &data.test {
        records.push(FeatureRecord {
            id: p.id.clone(),
            split: p.split,
            data: features(&p.input),
        });
    }
    records
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
