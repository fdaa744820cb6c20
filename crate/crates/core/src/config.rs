//! Run configuration shared by the library pipeline and the CLI.
//!
//! Files are UTF-8 `key = value` lines; `#` starts a comment. Keys are the
//! kebab-case field names (snake_case is accepted too). List values are
//! comma-separated.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::AugmentConfig;
use crate::data::DataFormat;
use crate::error::{Error, Result};
use crate::evalkit::{default_c_grid, SelectConfig};
use crate::model::EncoderConfig;
use crate::rankloss::{LossNormalization, NegativeDomain, RankLossConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: DataFormat,
    pub epochs: usize,
    /// Capped at the training set size.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub num_augments: usize,
    pub jitter_scales: Vec<f64>,
    pub loss_normalization: LossNormalization,
    pub negative_domain: NegativeDomain,
    pub temperature: f64,
    pub seeds: Vec<u64>,
    pub conv_channels: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub repr_dim: usize,
    pub c_grid: Vec<f64>,
    pub cv_folds: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::new(1);
        Self {
            train: None,
            test: None,
            format: DataFormat::Delimited,
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            num_augments: 5,
            jitter_scales: vec![0.03, 0.05],
            loss_normalization: LossNormalization::Mean,
            negative_domain: NegativeDomain::All,
            temperature: 1.0,
            seeds: (0..5).collect(),
            conv_channels: enc.conv_channels,
            kernel_sizes: enc.kernel_sizes,
            repr_dim: enc.repr_dim,
            c_grid: default_c_grid(),
            cv_folds: 5,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|v| parse(key, v)).collect()
}

/// `inf`/`infinity` in a C grid stands for the unbounded penalty.
fn parse_c(key: &str, value: &str) -> Result<f64> {
    let v = value.trim();
    if v.eq_ignore_ascii_case("inf") || v.eq_ignore_ascii_case("infinity") {
        Ok(crate::evalkit::C_INFINITY)
    } else {
        parse(key, v)
    }
}

impl FromStr for DataFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "delimited" | "tsv" | "csv" => Ok(DataFormat::Delimited),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(Error::Config(format!("unknown format {other:?} (delimited|jsonl)"))),
        }
    }
}

impl FromStr for LossNormalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(LossNormalization::Mean),
            "sum" => Ok(LossNormalization::Sum),
            other => Err(Error::Config(format!("unknown loss normalization {other:?} (mean|sum)"))),
        }
    }
}

impl FromStr for NegativeDomain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "all" => Ok(NegativeDomain::All),
            "valid-only" => Ok(NegativeDomain::ValidOnly),
            other => Err(Error::Config(format!("unknown negative domain {other:?} (all|valid-only)"))),
        }
    }
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let k = key.as_str();
        match k {
            "train" => self.train = Some(PathBuf::from(value.trim())),
            "test" => self.test = Some(PathBuf::from(value.trim())),
            "format" => self.format = value.parse()?,
            "epochs" => self.epochs = parse(k, value)?,
            "batch-size" => self.batch_size = parse(k, value)?,
            "learning-rate" => self.learning_rate = parse(k, value)?,
            "weight-decay" => self.weight_decay = parse(k, value)?,
            "num-augments" => self.num_augments = parse(k, value)?,
            "jitter-scales" => self.jitter_scales = parse_list(k, value)?,
            "loss-normalization" => self.loss_normalization = value.parse()?,
            "negative-domain" => self.negative_domain = value.parse()?,
            "temperature" => self.temperature = parse(k, value)?,
            "seeds" => self.seeds = parse_list(k, value)?,
            "conv-channels" => self.conv_channels = parse_list(k, value)?,
            "kernel-sizes" => self.kernel_sizes = parse_list(k, value)?,
            "repr-dim" => self.repr_dim = parse(k, value)?,
            "c-grid" => {
                self.c_grid = value.split(',').filter(|s| !s.trim().is_empty()).map(|v| parse_c(k, v)).collect::<Result<_>>()?
            }
            "cv-folds" => self.cv_folds = parse(k, value)?,
            "output-dir" => self.output_dir = PathBuf::from(value.trim()),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin} line {}: expected `key = value`", i + 1)))?;
            self.set(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{origin} line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate must be positive and weight decay non-negative".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.c_grid.is_empty() {
            return Err(Error::Config("empty C grid".into()));
        }
        self.augment(0).validate()?;
        self.encoder(1).validate()
    }

    pub fn encoder(&self, in_features: usize) -> EncoderConfig {
        EncoderConfig {
            in_features,
            conv_channels: self.conv_channels.clone(),
            kernel_sizes: self.kernel_sizes.clone(),
            repr_dim: self.repr_dim,
            dense_repr: true,
        }
    }

    pub fn augment(&self, rng_seed: u64) -> AugmentConfig {
        AugmentConfig { num_augments: self.num_augments, scales: self.jitter_scales.clone(), rng_seed }
    }

    pub fn rank_loss(&self) -> RankLossConfig {
        RankLossConfig {
            negative_domain: self.negative_domain,
            normalization: self.loss_normalization,
            temperature: self.temperature,
        }
    }

    pub fn svm(&self) -> SelectConfig {
        SelectConfig { c_grid: self.c_grid.clone(), folds: self.cv_folds, ..SelectConfig::default() }
    }
}
