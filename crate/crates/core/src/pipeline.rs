//! End-to-end stages: train the encoder, export representations, evaluate
//! them with the SVM protocol, and repeat over seeds.
//!
//! Training and encoding never see test labels; only [`evaluate`] does.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{expand_batch, expand_batch_backward};
use crate::config::RunConfig;
use crate::data::{apply_norm_stats, batches, clean_missing, fit_norm_stats, load_dataset, BatchPlan, LabelMap, NormStats, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::evalkit::{metrics_with_labels, predict, svm_fit_select, MetricsReport, SelectConfig};
use crate::model::{init_model, load_checkpoint, save_checkpoint, Gradients, ModelState};
use crate::rankloss::rank_loss;
use crate::rng::{stream, BoxMuller};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tensorkit::Mode;

/// Mixed into the run seed to derive the augmentation noise stream.
const AUGMENT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Rows per encoder call when exporting representations.
const ENCODE_CHUNK: usize = 128;

pub const CHECKPOINT_FILE: &str = "checkpoint.rscl";
pub const PREPROCESS_FILE: &str = "preprocess.json";
pub const TRAIN_LOG_FILE: &str = "train_log.txt";
pub const TRAIN_REPS_FILE: &str = "train_reps.txt";
pub const TEST_REPS_FILE: &str = "test_reps.txt";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!("epoch {} loss {:.9} wall_s {:.3}", self.epoch, self.mean_loss, self.wall_seconds)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub model: ModelState<S>,
    pub log: Vec<EpochLog>,
}

impl<S> TrainOutcome<S> {
    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().map(|e| e.mean_loss).collect()
    }
}

/// Normalization statistics and label map fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub norm_stats: NormStats,
    pub label_map: LabelMap,
}

impl Preprocess {
    pub fn fit<S: Scalar>(train: &TimeSeriesDataset<S>) -> Self {
        Self { norm_stats: fit_norm_stats(train), label_map: train.label_map.clone() }
    }

    /// Z-scores with the stored statistics and fills missing values.
    pub fn apply<S: Scalar>(&self, ds: &TimeSeriesDataset<S>) -> Result<TimeSeriesDataset<S>> {
        Ok(clean_missing(&apply_norm_stats(ds, &self.norm_stats)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("preprocess serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), None, e.to_string()))
    }
}

/// Trains a fresh model on an already preprocessed training split.
pub fn train<S: Scalar>(data: &TimeSeriesDataset<S>, config: &RunConfig, seed: u64) -> Result<TrainOutcome<S>> {
    config.validate()?;
    data.x.check_finite("training data")?;
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("training needs at least 2 series, got {n}")));
    }
    let mut model: ModelState<S> = init_model(&config.encoder(data.num_features()), seed)?;
    model.set_optimizer_rates(S::lit(config.learning_rate), S::lit(config.weight_decay));
    let plan = BatchPlan::new(config.batch_size.min(n), seed)?;
    let augment = config.augment(seed ^ AUGMENT_SALT);
    let loss_cfg = config.rank_loss();

    let mut log = Vec::with_capacity(config.epochs);
    let mut global_batch = 0u64;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        for (bi, idx) in batches(n, &plan, epoch as u64).into_iter().enumerate() {
            let batch_seed = augment.batch_seed(global_batch);
            global_batch += 1;
            // batch norm needs two values per channel and the loss needs pairs
            if idx.len() < 2 {
                continue;
            }
            let x = data.batch_input(&idx)?;
            let labels = data.batch_labels(&idx);
            let enc = model.forward(&x, Mode::Train)?;
            let (z, head) = model.project_forward(&enc.r)?;
            let expanded = expand_batch(&z, &labels, &augment, &mut BoxMuller::new(stream(batch_seed)))?;
            let loss = rank_loss(&expanded.z, &expanded.labels, &loss_cfg).map_err(|e| match e {
                Error::Numeric { detail, .. } => {
                    Error::numeric(format!("training epoch {} batch {}", epoch + 1, bi + 1), detail)
                }
                other => other,
            })?;
            let mut grads = Gradients::zeros(&model.config);
            let grad_z = expand_batch_backward(&expanded, &loss.grad_z)?;
            let grad_r = model.project_backward(&head, &grad_z, &mut grads)?;
            model.encode_backward(&enc.trace, &grad_r, &mut grads)?;
            model.commit_norm_states(enc.norm_states);
            model.apply_gradients(&grads).map_err(|e| match e {
                Error::Numeric { context, detail } => {
                    Error::numeric(format!("training epoch {} batch {}: {context}", epoch + 1, bi + 1), detail)
                }
                other => other,
            })?;
            loss_sum += loss.loss.as_f64();
            counted += 1;
        }
        let mean_loss = if counted > 0 { loss_sum / counted as f64 } else { 0.0 };
        log.push(EpochLog { epoch: epoch + 1, mean_loss, wall_seconds: started.elapsed().as_secs_f64() });
    }
    model.set_mode(Mode::Eval);
    Ok(TrainOutcome { model, log })
}

/// Eval-mode representations `r` of every instance, `[N, D]`.
pub fn encode<S: Scalar>(model: &ModelState<S>, data: &TimeSeriesDataset<S>) -> Result<Tensor<S>> {
    if data.num_features() != model.config.in_features {
        return Err(Error::dim(
            "encode",
            format!("dataset has {} variables, model expects {}", data.num_features(), model.config.in_features),
        ));
    }
    data.x.check_finite("encoder input")?;
    let n = data.len();
    let d = model.config.repr_width();
    let mut out = Vec::with_capacity(n * d);
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(ENCODE_CHUNK) {
        out.extend_from_slice(model.encode_eval(&data.batch_input(chunk)?)?.data());
    }
    Tensor::new(&[n, d], out)
}

/// Header `N D`, then one row of `D` space-separated decimals per instance.
pub fn write_representations<S: Scalar>(reps: &Tensor<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    reps.expect_ndim("write_representations", 2)?;
    let (n, d) = (reps.shape()[0], reps.shape()[1]);
    let mut text = format!("{n} {d}\n");
    for i in 0..n {
        for (j, v) in reps.row(i).iter().enumerate() {
            if j > 0 {
                text.push(' ');
            }
            write!(text, "{v}").expect("write to string");
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_representations<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::format(&pstr, None, "empty representation file"))?;
    let dims: Vec<usize> = header.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| {
        Error::format(&pstr, Some(1), "header must be `N D`")
    })?;
    let [n, d] = dims[..] else {
        return Err(Error::format(&pstr, Some(1), "header must be `N D`"));
    };
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (i, line) in lines {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(&pstr, Some(i + 1), "non-numeric value"))?;
        if vals.len() != d {
            return Err(Error::format(&pstr, Some(i + 1), format!("{} values, expected {d}", vals.len())));
        }
        data.extend(vals.into_iter().map(S::lit));
        rows += 1;
    }
    if rows != n {
        return Err(Error::format(&pstr, None, format!("{rows} rows, header says {n}")));
    }
    Tensor::new(&[n, d], data)
}

/// Fits the SVM on training representations and scores the test split.
pub fn evaluate<S: Scalar>(
    train_reps: &Tensor<S>,
    train_labels: &[usize],
    test_reps: &Tensor<S>,
    test_labels: &[usize],
    svm: &SelectConfig,
    label_names: &[String],
) -> Result<MetricsReport> {
    if train_reps.shape()[1] != test_reps.shape()[1] {
        return Err(Error::dim(
            "evaluate",
            format!("train representations have width {}, test {}", train_reps.shape()[1], test_reps.shape()[1]),
        ));
    }
    let model = svm_fit_select(train_reps, train_labels, svm)?;
    let pred = predict(&model, test_reps)?;
    metrics_with_labels(test_labels, &pred, label_names)
}

/// Both splits, preprocessed with training statistics.
pub struct PreparedData<S> {
    pub train: TimeSeriesDataset<S>,
    pub test: TimeSeriesDataset<S>,
    pub preprocess: Preprocess,
}

pub fn prepare_data<S: Scalar>(train: &TimeSeriesDataset<S>, test: &TimeSeriesDataset<S>) -> Result<PreparedData<S>> {
    let preprocess = Preprocess::fit(train);
    Ok(PreparedData { train: preprocess.apply(train)?, test: preprocess.apply(test)?, preprocess })
}

pub fn load_prepared<S: Scalar>(config: &RunConfig) -> Result<PreparedData<S>> {
    let train_path = config.train.as_ref().ok_or_else(|| Error::Config("no training dataset given".into()))?;
    let test_path = config.test.as_ref().ok_or_else(|| Error::Config("no test dataset given".into()))?;
    let train: TimeSeriesDataset<S> = load_dataset(train_path, config.format, None)?;
    let test = load_dataset(test_path, config.format, Some(&train.label_map))?;
    if train.series_len() != test.series_len() || train.num_features() != test.num_features() {
        return Err(Error::InvalidInput(format!(
            "train series are {}x{} but test series are {}x{}",
            train.series_len(),
            train.num_features(),
            test.series_len(),
            test.num_features()
        )));
    }
    prepare_data(&train, &test)
}

/// Artifacts of one seed, written under `dir`.
pub struct SeedRun {
    pub dir: PathBuf,
    pub outcome: TrainOutcome<f32>,
    pub metrics: MetricsReport,
}

pub fn write_train_log(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text: String = log.iter().map(|e| e.line() + "\n").collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Train, checkpoint, encode and evaluate one seed in `dir`.
pub fn run_seed(data: &PreparedData<f32>, config: &RunConfig, seed: u64, dir: &Path) -> Result<SeedRun> {
    create_dir(dir)?;
    let outcome = train(&data.train, config, seed)?;
    save_checkpoint(&outcome.model, dir.join(CHECKPOINT_FILE))?;
    data.preprocess.save(dir.join(PREPROCESS_FILE))?;
    write_train_log(&outcome.log, dir.join(TRAIN_LOG_FILE))?;
    let train_reps = encode(&outcome.model, &data.train)?;
    let test_reps = encode(&outcome.model, &data.test)?;
    write_representations(&train_reps, dir.join(TRAIN_REPS_FILE))?;
    write_representations(&test_reps, dir.join(TEST_REPS_FILE))?;
    let metrics = evaluate(
        &train_reps,
        &data.train.labels,
        &test_reps,
        &data.test.labels,
        &config.svm(),
        data.preprocess.label_map.names(),
    )?;
    metrics.save(dir.join(METRICS_FILE))?;
    Ok(SeedRun { dir: dir.to_path_buf(), outcome, metrics })
}

/// Runs every configured seed in sequence and writes the aggregate report
/// to `<output_dir>/metrics.json`. A failing seed is recorded, not fatal.
pub fn run_pipeline(data: &PreparedData<f32>, config: &RunConfig) -> Result<MetricsReport> {
    config.validate()?;
    create_dir(&config.output_dir)?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let dir = config.output_dir.join(format!("seed_{seed}"));
        let result = run_seed(data, config, seed, &dir).map(|r| r.metrics).map_err(|e| e.to_string());
        runs.push((seed, result));
    }
    let report = MetricsReport::aggregate(&runs)?;
    report.save(config.output_dir.join(METRICS_FILE))?;
    Ok(report)
}

/// Loads a checkpoint and its preprocessing, then encodes `data_path`.
pub fn encode_file(checkpoint: &Path, preprocess: &Path, data_path: &Path, config: &RunConfig, output: &Path) -> Result<Tensor<f32>> {
    let model: ModelState<f32> = load_checkpoint(checkpoint)?;
    let pre = Preprocess::load(preprocess)?;
    let raw: TimeSeriesDataset<f32> = load_dataset(data_path, config.format, Some(&pre.label_map))?;
    let data = pre.apply(&raw)?;
    let reps = encode(&model, &data)?;
    write_representations(&reps, output)?;
    Ok(reps)
}
