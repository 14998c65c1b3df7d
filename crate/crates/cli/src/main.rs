use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ccagnn::data::{extract_logfb, save_dataset, LogFBConfig};
use ccagnn::enhance::enhance_waveform;
use ccagnn::model::load_checkpoint;
use ccagnn::numeric::Matrix;
use ccagnn_cli::audio::{read_waveform, write_waveform};
use ccagnn_cli::compare::{compare_runs, format_comparisons, RunScores};
use ccagnn_cli::experiment::load_experiment_dataset;
use ccagnn_cli::model::TrainedModel;
use ccagnn_cli::{run_experiment, ExperimentConfig, Profile, FAILURE_MARKER};

#[derive(Parser)]
#[command(
    name = "ccagnn",
    version,
    about = "CCA-pretrained graph encoders for audio-visual speech features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration layered over the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the profile named in the config file.
    #[arg(long, value_enum)]
    profile: Option<Profile>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, self.profile)?,
            None => ExperimentConfig::profile(self.profile.unwrap_or(Profile::Desk)),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset and save it.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Dataset file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured experiment.
    Train {
        #[command(flatten)]
        common: Common,
        /// Output directory; overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Folds trained concurrently; overrides `workers`.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Pairwise Wilcoxon tests on per-fold test MSE of finished runs.
    Compare {
        /// Run directories or summary files.
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enhance a noisy waveform with a trained fold checkpoint.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Noisy waveform (WAV or text list of samples).
        #[arg(long)]
        input: PathBuf,
        /// Visual features, one row of 50 values per frame; needed by
        /// multimodal checkpoints.
        #[arg(long)]
        visual: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Sample rate assumed for text input.
        #[arg(long, default_value_t = 22_050)]
        sample_rate: u32,
    },
    /// Extract log-filterbank features from a waveform.
    Features {
        #[arg(long)]
        input: PathBuf,
        /// Tab-separated output; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sample rate assumed for text input.
        #[arg(long, default_value_t = 22_050)]
        sample_rate: u32,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { common, out } => {
            let ds = load_experiment_dataset(&common.resolve()?)?;
            save_dataset(&ds, &out).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "wrote {} sequences ({} frames) to {}",
                ds.n_sequences(),
                ds.n_frames(),
                out.display()
            );
        }
        Command::Train { common, out, workers } => {
            let mut cfg = common.resolve()?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let outcome = run_experiment(&cfg)?;
            print!("{}", outcome.summary);
            if outcome.failed() {
                eprintln!("training failed; see {}", cfg.output_dir.join(FAILURE_MARKER).display());
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Compare { runs, alpha, out } => {
            let scores = runs.iter().map(|p| RunScores::load(p)).collect::<Result<Vec<_>>>()?;
            let table = format_comparisons(&scores, &compare_runs(&scores, alpha)?);
            print!("{table}");
            if let Some(o) = out {
                fs::write(&o, &table)?;
            }
        }
        Command::Enhance {
            checkpoint,
            input,
            visual,
            out,
            sample_rate,
        } => {
            let model = TrainedModel::from_checkpoint(&load_checkpoint(&checkpoint)?)?;
            let wave = read_waveform(&input, sample_rate)?;
            let cfg = LogFBConfig {
                sample_rate: wave.spec.sample_rate as f64,
                ..LogFBConfig::default()
            };
            let noisy = extract_logfb(&wave.samples, &cfg)?;
            let visual = visual.as_deref().map(read_matrix).transpose()?;
            if let Some(v) = &visual {
                if v.rows() != noisy.rows() {
                    bail!(
                        "visual features have {} rows, waveform has {} frames",
                        v.rows(),
                        noisy.rows()
                    );
                }
            }
            let estimate = model.estimate_clean(&noisy, visual.as_ref())?;
            let enhanced = enhance_waveform(&wave.samples, &estimate, &cfg)?;
            write_waveform(&out, &enhanced, wave.spec)?;
        }
        Command::Features {
            input,
            out,
            sample_rate,
        } => {
            let wave = read_waveform(&input, sample_rate)?;
            let cfg = LogFBConfig {
                sample_rate: wave.spec.sample_rate as f64,
                ..LogFBConfig::default()
            };
            let text = matrix_tsv(&extract_logfb(&wave.samples, &cfg)?);
            match out {
                Some(o) => fs::write(o, text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read_matrix(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .with_context(|| format!("{}:{}: bad value {t:?}", path.display(), i + 1))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_rows(&rows)?)
}

fn matrix_tsv(m: &Matrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let cells: Vec<String> = m.row(i).iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{}", cells.join("\t"));
    }
    s
}
