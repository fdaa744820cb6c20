//! Binary checkpoint format.
//!
//! ```text
//! "RSCL"                      4 bytes magic
//! version                     u32 little-endian
//! metadata length             u32 little-endian
//! metadata                    UTF-8 JSON (architecture, tensor order, hyperparameters)
//! tensor data                 f32 little-endian, tensors concatenated in metadata order
//! ```
//!
//! Tensor order: for every trainable tensor in layout order the parameter
//! itself; then each block's running mean and variance; then each trainable
//! tensor's Adam first and second moments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_model, EncoderConfig, ModelState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tensorkit::Mode;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RSCL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    step_count: u64,
    beta1: f32,
    beta2: f32,
    epsilon: f32,
    learning_rate: f32,
    weight_decay: f32,
}

#[derive(Serialize, Deserialize)]
struct NormMeta {
    momentum: f32,
    epsilon: f32,
    mode: Mode,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: EncoderConfig,
    rng_seed: u64,
    tensors: Vec<TensorEntry>,
    adam: Vec<AdamMeta>,
    norm: Vec<NormMeta>,
}

fn tensor_order<S: Scalar>(m: &ModelState<S>) -> Vec<(String, &Tensor<S>)> {
    let layout = m.config.parameter_layout();
    let mut out: Vec<(String, &Tensor<S>)> = layout.iter().map(|(n, _)| n.clone()).zip(m.parameters()).collect();
    for (i, b) in m.blocks.iter().enumerate() {
        out.push((format!("bn{i}.running_mean"), &b.norm.running_mean));
        out.push((format!("bn{i}.running_var"), &b.norm.running_var));
    }
    for ((name, _), a) in layout.iter().zip(&m.adam) {
        out.push((format!("{name}.adam_m"), &a.m));
    }
    for ((name, _), a) in layout.iter().zip(&m.adam) {
        out.push((format!("{name}.adam_v"), &a.v));
    }
    out
}

/// Serializes a model. Values are stored as `f32`, so only `f32` models
/// round-trip bitwise.
pub fn save_checkpoint<S: Scalar>(model: &ModelState<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let order = tensor_order(model);
    let meta = Metadata {
        config: model.config.clone(),
        rng_seed: model.rng_seed,
        tensors: order.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        adam: model
            .adam
            .iter()
            .map(|a| AdamMeta {
                step_count: a.step_count,
                beta1: a.beta1.as_f32(),
                beta2: a.beta2.as_f32(),
                epsilon: a.epsilon.as_f32(),
                learning_rate: a.learning_rate.as_f32(),
                weight_decay: a.weight_decay.as_f32(),
            })
            .collect(),
        norm: model
            .blocks
            .iter()
            .map(|b| NormMeta { momentum: b.norm.momentum.as_f32(), epsilon: b.norm.epsilon.as_f32(), mode: b.norm.mode })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::checkpoint("metadata", e.to_string()))?;
    let values: usize = order.iter().map(|(_, t)| t.len()).sum();
    let mut buf = Vec::with_capacity(12 + json.len() + 4 * values);
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let len = u32::try_from(json.len()).map_err(|_| Error::checkpoint("metadata", "metadata exceeds 4 GiB"))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in &order {
        for v in t.data() {
            buf.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::checkpoint(
                field,
                format!("file truncated: need {n} bytes at offset {}, {} remain", self.pos, self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<ModelState<S>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rd = Reader { bytes: &bytes, pos: 0 };
    if rd.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::checkpoint("magic", "not a rankscl checkpoint"));
    }
    let version = rd.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::checkpoint("version", format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let len = rd.u32("metadata_length")? as usize;
    let meta: Metadata =
        serde_json::from_slice(rd.take(len, "metadata")?).map_err(|e| Error::checkpoint("metadata", e.to_string()))?;
    meta.config.validate().map_err(|e| Error::checkpoint("config", e.to_string()))?;

    let mut model = init_model::<S>(&meta.config, meta.rng_seed)?;
    model.rng_seed = meta.rng_seed;
    let expected: Vec<(String, Vec<usize>)> =
        tensor_order(&model).into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    if meta.tensors.len() != expected.len() {
        return Err(Error::checkpoint(
            "tensors",
            format!("{} tensors listed, architecture has {}", meta.tensors.len(), expected.len()),
        ));
    }
    for (entry, (name, shape)) in meta.tensors.iter().zip(&expected) {
        if &entry.name != name {
            return Err(Error::checkpoint("tensors", format!("expected tensor `{name}`, found `{}`", entry.name)));
        }
        if &entry.shape != shape {
            return Err(Error::checkpoint(name.clone(), format!("shape {:?} does not match architecture {shape:?}", entry.shape)));
        }
    }
    if meta.adam.len() != model.adam.len() {
        return Err(Error::checkpoint("adam", "optimizer state count mismatch"));
    }
    if meta.norm.len() != model.blocks.len() {
        return Err(Error::checkpoint("norm", "batch-norm state count mismatch"));
    }

    let mut values = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let n: usize = shape.iter().product();
        let raw = rd.take(4 * n, name)?;
        let data: Vec<S> = raw
            .chunks_exact(4)
            .map(|c| S::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        values.push(Tensor::new(shape, data)?);
    }
    if rd.pos != bytes.len() {
        return Err(Error::checkpoint("tensor_data", format!("{} trailing bytes", bytes.len() - rd.pos)));
    }

    let mut values = values.into_iter();
    for p in model.parameters_mut() {
        *p = values.next().expect("counted");
    }
    for (b, nm) in model.blocks.iter_mut().zip(&meta.norm) {
        b.norm.running_mean = values.next().expect("counted");
        b.norm.running_var = values.next().expect("counted");
        b.norm.momentum = S::lit(nm.momentum as f64);
        b.norm.epsilon = S::lit(nm.epsilon as f64);
        b.norm.mode = nm.mode;
    }
    for a in model.adam.iter_mut() {
        a.m = values.next().expect("counted");
    }
    for (a, am) in model.adam.iter_mut().zip(&meta.adam) {
        a.v = values.next().expect("counted");
        a.step_count = am.step_count;
        a.beta1 = S::lit(am.beta1 as f64);
        a.beta2 = S::lit(am.beta2 as f64);
        a.epsilon = S::lit(am.epsilon as f64);
        a.learning_rate = S::lit(am.learning_rate as f64);
        a.weight_decay = S::lit(am.weight_decay as f64);
    }
    Ok(model)
}
