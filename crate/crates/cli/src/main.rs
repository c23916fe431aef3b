mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reid_core::eval::EvalMode;
use reid_core::sequence::Attention;
use reid_core::transfer::Treatment;

/// Environment variable naming the directory under which runs without
/// `--output` are written (as `<root>/<command>`).
pub const OUTPUT_ROOT_ENV: &str = "REID_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "reid", version, about = "Depth-based person re-identification toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: $REID_OUTPUT_ROOT/<command>, or runs/<command>].
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Dotted config override such as `train.rho=5`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic depth (or RGB) dataset into the output directory.
    Synth,
    /// Scan and preprocess a dataset; writes its manifest and input previews.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the frame embedding as a single-frame classifier.
    TrainEmbedding {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the LSTM and attention unit on top of a trained embedding.
    TrainSequence {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint written by `train-embedding` or `transfer`.
        #[arg(long)]
        embedding: PathBuf,
    },
    /// Initialise an embedding from a source checkpoint and train it on `data`.
    Transfer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_parser = parse_treatment)]
        treatment: Option<Treatment>,
    },
    /// Layer-freezing sweep over k, transfer methods and seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        source: PathBuf,
        /// Inclusive range `a..b` or a comma list.
        #[arg(long, value_parser = parse_k_values)]
        k: Option<KValues>,
        #[arg(long, value_parser = parse_treatment)]
        treatment: Option<Treatment>,
    },
    /// Score a checkpoint on one split of a dataset.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<EvalMode>,
        #[arg(long, value_parser = parse_attention)]
        attention: Option<Attention>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess { .. } => "preprocess",
            Command::TrainEmbedding { .. } => "train-embedding",
            Command::TrainSequence { .. } => "train-sequence",
            Command::Transfer { .. } => "transfer",
            Command::Ablate { .. } => "ablate",
            Command::Evaluate { .. } => "evaluate",
        }
    }

    /// Config overrides implied by command flags; these win over `--set`.
    fn flag_overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            Command::Transfer { k, treatment, .. } => {
                if let Some(k) = k {
                    out.push(format!("transfer.k={k}"));
                }
                if let Some(t) = treatment {
                    out.push(format!("transfer.treatment=\"{}\"", t.as_str()));
                }
            }
            Command::Ablate { k, treatment, .. } => {
                if let Some(KValues(ks)) = k {
                    out.push(format!("transfer.k_values={ks:?}"));
                }
                if let Some(t) = treatment {
                    out.push(format!("transfer.treatment=\"{}\"", t.as_str()));
                }
            }
            Command::Evaluate { mode, attention, .. } => {
                if let Some(m) = mode {
                    out.push(format!("eval.mode=\"{}\"", mode_str(*m)));
                }
                if let Some(a) = attention {
                    out.push(format!("eval.attention=\"{}\"", attention_str(*a)));
                }
            }
            _ => {}
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KValues(pub Vec<usize>);

fn parse_k_values(s: &str) -> Result<KValues, String> {
    let bad = |_| format!("`{s}` is not `a..b` or a comma list of integers");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a > b {
            return Err(format!("empty range `{s}`"));
        }
        return Ok(KValues((a..=b).collect()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(bad))
        .collect::<Result<Vec<_>, _>>()
        .map(KValues)
}

fn parse_treatment(s: &str) -> Result<Treatment, String> {
    match s {
        "frozen" => Ok(Treatment::Frozen),
        "fine_tuned" | "fine-tuned" => Ok(Treatment::FineTuned),
        _ => Err("expected `frozen` or `fine_tuned`".into()),
    }
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    match s {
        "single_shot" | "single-shot" => Ok(EvalMode::SingleShot),
        "multi_shot" | "multi-shot" => Ok(EvalMode::MultiShot),
        _ => Err("expected `single_shot` or `multi_shot`".into()),
    }
}

fn parse_attention(s: &str) -> Result<Attention, String> {
    match s {
        "rta" => Ok(Attention::Rta),
        "uniform" => Ok(Attention::Uniform),
        _ => Err("expected `rta` or `uniform`".into()),
    }
}

fn mode_str(m: EvalMode) -> &'static str {
    match m {
        EvalMode::SingleShot => "single_shot",
        EvalMode::MultiShot => "multi_shot",
    }
}

fn attention_str(a: Attention) -> &'static str {
    match a {
        Attention::Rta => "rta",
        Attention::Uniform => "uniform",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    // clap prints usage and exits with status 2 on malformed arguments.
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(1)
        }
    }
}
