//! Argument handling for the `rankscl` binary.
//!
//! Settings resolve as command-line flag, then config file, then built-in
//! default.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rankscl::config::RunConfig;
use rankscl::data::{load_dataset, DataFormat, TimeSeriesDataset};
use rankscl::model::save_checkpoint;
use rankscl::pipeline::{
    self, encode_file, evaluate, load_prepared, read_representations, run_pipeline, write_train_log, CHECKPOINT_FILE,
    PREPROCESS_FILE, TRAIN_LOG_FILE,
};
use rankscl::rankloss::{LossNormalization, NegativeDomain};
use rankscl::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "rankscl", version, about = "Rank-supervised contrastive encoder for time series classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an encoder and write its checkpoint and training log.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Seed of this run; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write eval-mode representations of a dataset.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Preprocessing saved at training time; defaults to the file next to
        /// the checkpoint.
        #[arg(long)]
        preprocess: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "delimited")]
        format: DataFormat,
    },
    /// Fit the SVM on training representations and score the test split.
    Evaluate {
        #[arg(long)]
        train_reps: PathBuf,
        #[arg(long)]
        test_reps: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Metrics destination; printed to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train, encode and evaluate once per seed, then aggregate.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Flags mirroring [`RunConfig`] fields.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<DataFormat>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub num_augments: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub jitter_scales: Option<Vec<f64>>,
    #[arg(long)]
    pub loss_normalization: Option<LossNormalization>,
    #[arg(long)]
    pub negative_domain: Option<NegativeDomain>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub conv_channels: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub kernel_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub repr_dim: Option<usize>,
    /// Comma-separated penalties; `inf` for the unbounded value.
    #[arg(long)]
    pub c_grid: Option<String>,
    #[arg(long)]
    pub cv_folds: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

macro_rules! override_fields {
    ($cfg:ident, $args:ident, $($field:ident),* $(,)?) => {
        $(if let Some(v) = &$args.$field { $cfg.$field = v.clone(); })*
    };
}

impl RunArgs {
    /// Defaults, overlaid by the config file, overlaid by flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(p) = &self.train {
            cfg.train = Some(p.clone());
        }
        if let Some(p) = &self.test {
            cfg.test = Some(p.clone());
        }
        override_fields!(
            cfg,
            self,
            format,
            epochs,
            batch_size,
            learning_rate,
            weight_decay,
            num_augments,
            jitter_scales,
            loss_normalization,
            negative_domain,
            temperature,
            seeds,
            conv_channels,
            kernel_sizes,
            repr_dim,
            cv_folds,
            output_dir,
        );
        if let Some(grid) = &self.c_grid {
            cfg.set("c-grid", grid)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn train_command(cfg: &RunConfig, seed: Option<u64>) -> Result<String> {
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let data = load_prepared::<f32>(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Io { path: cfg.output_dir.clone(), source: e })?;
    let outcome = pipeline::train(&data.train, cfg, seed)?;
    save_checkpoint(&outcome.model, cfg.output_dir.join(CHECKPOINT_FILE))?;
    data.preprocess.save(cfg.output_dir.join(PREPROCESS_FILE))?;
    write_train_log(&outcome.log, cfg.output_dir.join(TRAIN_LOG_FILE))?;
    let last = outcome.log.last().map_or(0.0, |e| e.mean_loss);
    Ok(format!("trained {} epochs, final loss {last:.6}, wrote {}", outcome.log.len(), cfg.output_dir.display()))
}

fn dataset_labels(path: &Path, format: DataFormat, map: Option<&rankscl::data::LabelMap>) -> Result<TimeSeriesDataset<f32>> {
    load_dataset(path, format, map)
}

fn evaluate_command(train_reps: &Path, test_reps: &Path, cfg: &RunConfig, output: Option<&Path>) -> Result<String> {
    let train_path = cfg.train.as_ref().ok_or_else(|| Error::Config("--train dataset is required for its labels".into()))?;
    let test_path = cfg.test.as_ref().ok_or_else(|| Error::Config("--test dataset is required for its labels".into()))?;
    let train = dataset_labels(train_path, cfg.format, None)?;
    let test = dataset_labels(test_path, cfg.format, Some(&train.label_map))?;
    let tr = read_representations::<f32>(train_reps)?;
    let te = read_representations::<f32>(test_reps)?;
    if tr.shape()[0] != train.len() || te.shape()[0] != test.len() {
        return Err(Error::InvalidInput(format!(
            "representation rows ({}, {}) do not match dataset sizes ({}, {})",
            tr.shape()[0],
            te.shape()[0],
            train.len(),
            test.len()
        )));
    }
    let report = evaluate(&tr, &train.labels, &te, &test.labels, &cfg.svm(), train.label_map.names())?;
    match output {
        Some(path) => {
            report.save(path)?;
            Ok(format!("accuracy {:.4}, wrote {}", report.accuracy, path.display()))
        }
        None => Ok(report.to_json()),
    }
}

/// Executes a parsed command, returning the text to print.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Train { run, seed } => train_command(&run.resolve()?, seed),
        Command::Encode { checkpoint, preprocess, data, output, format } => {
            let pre = preprocess.unwrap_or_else(|| checkpoint.with_file_name(PREPROCESS_FILE));
            let cfg = RunConfig { format, ..RunConfig::default() };
            let reps = encode_file(&checkpoint, &pre, &data, &cfg, &output)?;
            Ok(format!("wrote {} x {} representations to {}", reps.shape()[0], reps.shape()[1], output.display()))
        }
        Command::Evaluate { train_reps, test_reps, run, output } => {
            evaluate_command(&train_reps, &test_reps, &run.resolve()?, output.as_deref())
        }
        Command::Pipeline { run } => {
            let cfg = run.resolve()?;
            let data = load_prepared::<f32>(&cfg)?;
            let report = run_pipeline(&data, &cfg)?;
            let failed = report.seeds.iter().filter(|s| s.error.is_some()).count();
            Ok(format!(
                "mean accuracy {:.4} over {} seeds ({failed} failed), wrote {}",
                report.accuracy,
                report.seeds.len() - failed,
                cfg.output_dir.join(pipeline::METRICS_FILE).display()
            ))
        }
    }
}
