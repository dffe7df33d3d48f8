use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use vidtok::encoding::write_token_sequence;
use vidtok::storage::describe;
use vidtok::{
    compress, generate_synthetic, gradcheck, load_config, profile_corpus, read_tensor, train_demo, write_tensor,
    DType, Error, GradcheckSetup, Mode, ModelParams, Result, RunConfig, SyntheticSpec, Tensor, Thresholds,
};

/// Compress video feature streams into a small, query-aware token budget.
#[derive(Parser)]
#[command(name = "vidtok", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic video with planted ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress one video's features into tokens.
    Compress {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "infer")]
        mode: Mode,
    },
    /// Estimate repeated and answer-irrelevant frame ratios over a corpus.
    Profile {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 20)]
        sample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Only the two threshold keys are read from the config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check the scorer gradient through the perturbed selector against
    /// finite differences. Exits 3 if the relative error reaches 1e-4.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the scorer on a synthetic video and write the loss curve.
    TrainDemo {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Token budget of a compression run against uniform baselines.
    Bench {
        #[arg(long)]
        frames: PathBuf,
        /// Defaults to a single all-zero query row.
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print a .dft header and summary statistics.
    Dump {
        #[arg(long)]
        file: PathBuf,
    },
}

const GRAD_TOLERANCE: f64 = 1e-4;

fn config_or_default(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
    Ok(serde_json::from_str(&text)?)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io { path: path.into(), source })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io { path: path.into(), source })
}

fn print(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("values serialize"));
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { spec, out } => {
            let spec: SyntheticSpec = read_json(&spec)?;
            let video = generate_synthetic(&spec)?;
            create_dir(&out)?;
            write_tensor(out.join("frames.dft"), &video.frames)?;
            write_tensor(out.join("text.dft"), &video.text)?;
            write_tensor(out.join("truth.dft"), &video.truth_tensor())?;
            write_tensor(out.join("qa.dft"), &video.qa_embedding()?)?;
            print(&json!({
                "out": out.display().to_string(),
                "frames": video.frames.dims(),
                "relevant_events": video.relevant_events,
                "relevant_frames": video.truth.iter().filter(|&&b| b == 1).count(),
                "config": spec,
            }));
        }
        Command::Compress { frames, text, config, out, mode } => {
            let cfg = config_or_default(config.as_deref())?;
            let frames = read_tensor(frames)?;
            let text = read_tensor(text)?;
            let params = ModelParams::init(&cfg)?;
            let (seq, report) = compress(&frames, &text, &params, &cfg, mode)?;
            create_dir(&out)?;
            write_token_sequence(&out, &seq)?;
            write_json(&out.join("report.json"), &report)?;
            print(&json!({
                "out": out.display().to_string(),
                "total_tokens": seq.budget.total_tokens,
                "selected_frames": report.selected_frames,
            }));
        }
        Command::Profile { corpus, sample, seed, config, out, csv } => {
            let cfg = config_or_default(config.as_deref())?;
            let thresholds = Thresholds {
                repeated: cfg.r_d_threshold,
                irrelevant: cfg.r_a_threshold,
            };
            let report = profile_corpus(&corpus, sample, seed, thresholds)?;
            if let Some(csv) = csv {
                write_file(&csv, &report.to_csv())?;
            }
            let mut value = serde_json::to_value(&report)?;
            value["config"] = json!({
                "corpus": corpus.display().to_string(),
                "sample": sample,
                "seed": seed,
                "r_d_threshold": thresholds.repeated,
                "r_a_threshold": thresholds.irrelevant,
            });
            write_json(&out, &value)?;
            print(&json!({ "r_d": report.r_d, "r_a": report.r_a, "n_videos": report.n_videos }));
        }
        Command::Gradcheck { config, seed } => {
            let mut setup = match config {
                Some(p) => GradcheckSetup::from_config(&load_config(p)?),
                None => GradcheckSetup::default(),
            };
            if let Some(s) = seed {
                setup.seed = s;
            }
            let report = gradcheck(&setup)?;
            let pass = report.max_rel_err < GRAD_TOLERANCE;
            print(&json!({
                "pass": pass,
                "tolerance": GRAD_TOLERANCE,
                "max_abs_err": report.max_abs_err,
                "max_rel_err": report.max_rel_err,
                "worst": report.worst(),
                "per_param_errs": report.per_param_errs,
                "config": setup,
            }));
            if !pass {
                return Err(Error::Evaluation(format!(
                    "max relative error {:.3e} reaches the {GRAD_TOLERANCE:e} tolerance",
                    report.max_rel_err
                )));
            }
        }
        Command::TrainDemo { spec, config, steps, lr, out } => {
            let spec: SyntheticSpec = read_json(&spec)?;
            let cfg = config_or_default(config.as_deref())?;
            let curve = train_demo(&spec, &cfg, steps, lr)?;
            write_file(&out, &curve.to_csv())?;
            print(&json!({
                "initial_recall": curve.initial_recall,
                "final_recall": curve.final_recall,
                "chance": curve.chance,
                "final_loss": curve.steps.last().map(|s| s.loss),
                "selected_frames": curve.selected_frames,
                "config": { "spec": spec, "run": cfg, "steps": steps, "lr": lr },
            }));
        }
        Command::Bench { frames, text, config } => {
            let cfg = config_or_default(config.as_deref())?;
            let frames = read_tensor(frames)?;
            let text = match text {
                Some(p) => read_tensor(p)?,
                None => Tensor::zeros(&[1, cfg.d], DType::F32),
            };
            let params = ModelParams::init(&cfg)?;
            let (_, report) = compress(&frames, &text, &params, &cfg, Mode::Infer)?;
            print(&json!({
                "budget": report.budget,
                "timing": report.timing,
                "config": cfg,
            }));
        }
        Command::Dump { file } => print(&describe(file)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
