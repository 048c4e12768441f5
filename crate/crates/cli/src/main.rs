//! `forcecheck`: generate, preprocess, train, eval, explain and classify
//! force/torque action recordings.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use forcecheck_core::nn::Preset;
use forcecheck_core::record::ActionKind;

#[derive(Parser, Debug)]
#[command(name = "forcecheck", version, about = "Validate robot cockpit actions from force/torque recordings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Seed for every random choice the command makes
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON configuration file (pipeline config for `preprocess`, run config for `train`)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic labelled dataset with a ground-truth sidecar
    Generate {
        /// Generator spec JSON; defaults are used for missing fields
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_parser = parse_kind)]
        action: Option<ActionKind>,
        /// Records per class
        #[arg(long)]
        count: Option<usize>,
        /// Knob-style imbalanced set with this mid-state fraction
        #[arg(long)]
        imbalanced: Option<f64>,
    },
    /// Isolate the main transient of every record and write the windows
    Preprocess {
        /// Dataset manifest written by `generate`
        #[arg(long)]
        manifest: PathBuf,
        /// Also export scaleograms of the wrench channels
        #[arg(long)]
        scaleograms: bool,
    },
    /// Split, preprocess, train and evaluate one preset
    Train {
        /// Dataset manifest written by `generate`
        #[arg(long)]
        manifest: PathBuf,
        /// ff-ann, cnn1d, cnn2d, hybrid-all, hybrid-unit-measure or hybrid-specific
        #[arg(long, value_parser = parse_preset, default_value = "cnn1d")]
        preset: Preset,
        /// Expected action kind of the dataset
        #[arg(long, value_parser = parse_kind)]
        action: Option<ActionKind>,
        /// 70-30 train/test split without validation
        #[arg(long = "final")]
        final_split: bool,
        /// Balance the training split with augmented copies
        #[arg(long)]
        augment: bool,
    },
    /// Evaluate a trained model on a labelled dataset
    Eval {
        /// Model file written by `train`
        #[arg(long)]
        model: PathBuf,
        /// Dataset manifest written by `generate`
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Grad-CAM attributions of one record for one class
    Explain {
        /// Model file written by `train`
        #[arg(long)]
        model: PathBuf,
        /// Record CSV; a sidecar JSON next to it is used when present
        #[arg(long)]
        record: PathBuf,
        /// Class id or class name
        #[arg(long)]
        class: String,
        /// Restrict to one branch (name); default is every convolutional branch
        #[arg(long)]
        branch: Option<String>,
        #[command(flatten)]
        cam: CamArgs,
    },
    /// Classify one record and print the verdict JSON
    Classify {
        /// Model file written by `train`
        #[arg(long)]
        model: PathBuf,
        /// Record CSV; a sidecar JSON next to it is used when present
        #[arg(long)]
        record: PathBuf,
        /// Attach Grad-CAM artifacts for the predicted class (needs --out)
        #[arg(long)]
        explain: bool,
        #[command(flatten)]
        cam: CamArgs,
    },
}

#[derive(Args, Debug, Clone, Copy)]
pub struct CamArgs {
    /// Differentiate the softmax probability instead of the logit
    #[arg(long)]
    pub probability: bool,
    /// Average gradients over time instead of max-pooling them
    #[arg(long)]
    pub average: bool,
    /// Sample rate for records without a sidecar
    #[arg(long, default_value_t = 500.0)]
    pub sample_rate: f64,
}

fn parse_kind(s: &str) -> Result<ActionKind, String> {
    s.parse().map_err(|e: forcecheck_core::Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::ALL
        .into_iter()
        .find(|p| p.as_str() == s.to_ascii_lowercase().replace('_', "-"))
        .ok_or_else(|| {
            let names: Vec<_> = Preset::ALL.iter().map(|p| p.as_str()).collect();
            format!("unknown preset '{s}', expected one of {}", names.join(", "))
        })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
