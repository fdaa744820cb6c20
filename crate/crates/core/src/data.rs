//! Dataset ingestion, normalization and batching.
//!
//! Series are stored as `x: [N, T, F]`. The encoder consumes `[B, F, T]`, see
//! [`TimeSeriesDataset::batch_input`].

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower bound on the standard deviation used for z-scoring.
pub const STD_GUARD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Delimiter {
    /// Tab, then comma, then runs of whitespace.
    #[default]
    Auto,
    Tab,
    Comma,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    #[default]
    Delimited,
    Jsonl,
}

/// Original label tokens in class-index order.
///
/// Classes are ordered numerically when every token parses as a number and
/// lexicographically otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    names: Vec<String>,
    numeric: bool,
}

impl LabelMap {
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut names: Vec<String> = tokens.into_iter().map(str::to_owned).collect();
        let numeric = names.iter().all(|n| n.parse::<f64>().is_ok_and(f64::is_finite));
        if numeric {
            names.sort_by(|a, b| num(a).partial_cmp(&num(b)).unwrap_or(Ordering::Equal));
            names.dedup_by(|a, b| num(a) == num(b));
        } else {
            names.sort();
            names.dedup();
        }
        Self { names, numeric }
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    /// Class index of a label token; numeric maps compare by value so that
    /// `1` and `1.0` coincide.
    pub fn index_of(&self, token: &str) -> Option<usize> {
        if self.numeric {
            let v = token.parse::<f64>().ok()?;
            self.names.iter().position(|n| num(n) == v)
        } else {
            self.names.iter().position(|n| n == token)
        }
    }
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

/// Per-variable z-score statistics; a single entry for univariate data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset<S> {
    /// `[N, T, F]`, may hold NaN until [`clean_missing`].
    pub x: Tensor<S>,
    pub labels: Vec<usize>,
    pub label_map: LabelMap,
    pub norm_stats: Option<NormStats>,
}

impl<S: Scalar> TimeSeriesDataset<S> {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn series_len(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn num_features(&self) -> usize {
        self.x.shape()[2]
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.num_classes()
    }

    /// Selected instances transposed to `[B, F, T]`.
    pub fn batch_input(&self, indices: &[usize]) -> Result<Tensor<S>> {
        let (n, t, f) = (self.len(), self.series_len(), self.num_features());
        let mut out = Vec::with_capacity(indices.len() * t * f);
        for &i in indices {
            if i >= n {
                return Err(Error::Contract(format!("instance {i} out of range for {n} series")));
            }
            let inst = &self.x.data()[i * t * f..(i + 1) * t * f];
            for c in 0..f {
                out.extend((0..t).map(|s| inst[s * f + c]));
            }
        }
        Tensor::new(&[indices.len(), f, t], out)
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Loaded rows before label remapping.
struct RawSeries {
    labels: Vec<String>,
    values: Vec<f64>,
    t: usize,
    f: usize,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_value(token: &str, path: &Path, line: usize) -> Result<f64> {
    let t = token.trim();
    if t.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    t.parse::<f64>()
        .map_err(|_| Error::format(path.display().to_string(), Some(line), format!("not a number: {t:?}")))
}

fn split_line(line: &str, delimiter: Delimiter) -> Vec<&str> {
    let delimiter = match delimiter {
        Delimiter::Auto if line.contains('\t') => Delimiter::Tab,
        Delimiter::Auto if line.contains(',') => Delimiter::Comma,
        d => d,
    };
    match delimiter {
        Delimiter::Tab => line.split('\t').map(str::trim).collect(),
        Delimiter::Comma => line.split(',').map(str::trim).collect(),
        Delimiter::Auto => line.split_whitespace().collect(),
    }
}

fn parse_delimited(path: &Path, delimiter: Delimiter) -> Result<RawSeries> {
    let text = read_text(path)?;
    let pstr = path.display().to_string();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut t = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_line(line.trim(), delimiter);
        if fields.len() < 2 {
            return Err(Error::format(&pstr, Some(lineno), "expected a label followed by values"));
        }
        let len = fields.len() - 1;
        match t {
            None => t = Some(len),
            Some(t) if t != len => {
                return Err(Error::format(&pstr, Some(lineno), format!("{len} values, expected {t}")));
            }
            _ => {}
        }
        labels.push(fields[0].to_owned());
        for tok in &fields[1..] {
            values.push(parse_value(tok, path, lineno)?);
        }
    }
    let t = t.ok_or_else(|| Error::format(&pstr, None, "file contains no series"))?;
    Ok(RawSeries { labels, values, t, f: 1 })
}

fn label_token(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_jsonl(path: &Path) -> Result<RawSeries> {
    let text = read_text(path)?;
    let pstr = path.display().to_string();
    let err = |line: usize, d: String| Error::format(&pstr, Some(line), d);
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(line).map_err(|e| err(lineno, e.to_string()))?;
        let label = obj.get("label").and_then(label_token).ok_or_else(|| err(lineno, "missing label".into()))?;
        let series = obj
            .get("series")
            .and_then(Value::as_array)
            .ok_or_else(|| err(lineno, "missing series array".into()))?;
        let mut vars = Vec::with_capacity(series.len());
        for var in series {
            let arr = var.as_array().ok_or_else(|| err(lineno, "each variable must be an array".into()))?;
            let vals = arr
                .iter()
                .map(|v| match v {
                    Value::Null => Some(f64::NAN),
                    Value::String(s) if s.eq_ignore_ascii_case("nan") => Some(f64::NAN),
                    v => v.as_f64(),
                })
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| err(lineno, "non-numeric value".into()))?;
            vars.push(vals);
        }
        let f = vars.len();
        let t = vars.first().map_or(0, Vec::len);
        if f == 0 || t == 0 {
            return Err(err(lineno, "empty series".into()));
        }
        if let Some(v) = vars.iter().find(|v| v.len() != t) {
            return Err(err(lineno, format!("variables of unequal length ({} vs {t})", v.len())));
        }
        match shape {
            None => shape = Some((t, f)),
            Some(s) if s != (t, f) => {
                return Err(err(lineno, format!("shape (T={t}, F={f}) differs from (T={}, F={})", s.0, s.1)));
            }
            _ => {}
        }
        labels.push(label);
        rows.push(vars);
    }
    let (t, f) = shape.ok_or_else(|| Error::format(&pstr, None, "file contains no series"))?;
    let mut values = Vec::with_capacity(rows.len() * t * f);
    for vars in &rows {
        for s in 0..t {
            values.extend(vars.iter().map(|v| v[s]));
        }
    }
    Ok(RawSeries { labels, values, t, f })
}

fn assemble<S: Scalar>(raw: RawSeries, path: &Path, labels: Option<&LabelMap>) -> Result<TimeSeriesDataset<S>> {
    let label_map = match labels {
        Some(m) => m.clone(),
        None => LabelMap::from_tokens(raw.labels.iter().map(String::as_str)),
    };
    let ids = raw
        .labels
        .iter()
        .map(|l| {
            label_map
                .index_of(l)
                .ok_or_else(|| Error::format(path.display().to_string(), None, format!("label {l:?} not seen in training data")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = ids.len();
    let x = Tensor::new(&[n, raw.t, raw.f], raw.values.into_iter().map(S::lit).collect())?;
    Ok(TimeSeriesDataset { x, labels: ids, label_map, norm_stats: None })
}

/// Univariate delimited text: one series per line, label first.
pub fn load_delimited<S: Scalar>(path: impl AsRef<Path>, delimiter: Delimiter) -> Result<TimeSeriesDataset<S>> {
    let path = path.as_ref();
    assemble(parse_delimited(path, delimiter)?, path, None)
}

/// JSON lines, one `{"label": .., "series": [[T values] x F]}` per line;
/// `null` marks a missing value.
pub fn load_multivariate_jsonl<S: Scalar>(path: impl AsRef<Path>) -> Result<TimeSeriesDataset<S>> {
    let path = path.as_ref();
    assemble(parse_jsonl(path)?, path, None)
}

/// Loads a split in either format. Passing the training label map keeps
/// class indices consistent across splits.
pub fn load_dataset<S: Scalar>(
    path: impl AsRef<Path>,
    format: DataFormat,
    labels: Option<&LabelMap>,
) -> Result<TimeSeriesDataset<S>> {
    let path = path.as_ref();
    let raw = match format {
        DataFormat::Delimited => parse_delimited(path, Delimiter::Auto)?,
        DataFormat::Jsonl => parse_jsonl(path)?,
    };
    assemble(raw, path, labels)
}

pub fn export_jsonl<S: Scalar>(dataset: &TimeSeriesDataset<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (t, f) = (dataset.series_len(), dataset.num_features());
    let mut out = Vec::new();
    for (i, &label) in dataset.labels.iter().enumerate() {
        let inst = &dataset.x.data()[i * t * f..(i + 1) * t * f];
        let series: Vec<Vec<Option<f64>>> = (0..f)
            .map(|c| {
                (0..t)
                    .map(|s| {
                        let v = inst[s * f + c].as_f64();
                        (!v.is_nan()).then_some(v)
                    })
                    .collect()
            })
            .collect();
        let line = serde_json::json!({ "label": dataset.label_map.name(label), "series": series });
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::InvalidInput(e.to_string()))?;
        out.push(b'\n');
    }
    fs::File::create(path).and_then(|mut fh| fh.write_all(&out)).map_err(|e| Error::io(path, e))
}

/// Statistics ignoring missing values: one global pair when `F = 1`, one per
/// variable otherwise. Population standard deviation.
pub fn fit_norm_stats<S: Scalar>(dataset: &TimeSeriesDataset<S>) -> NormStats {
    let f = dataset.num_features();
    let mut sum = vec![0.0; f];
    let mut count = vec![0usize; f];
    for (k, v) in dataset.x.data().iter().enumerate() {
        let v = v.as_f64();
        if v.is_finite() {
            sum[k % f] += v;
            count[k % f] += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let mut sq = vec![0.0; f];
    for (k, v) in dataset.x.data().iter().enumerate() {
        let v = v.as_f64();
        if v.is_finite() {
            sq[k % f] += (v - mean[k % f]).powi(2);
        }
    }
    let std = sq.iter().zip(&count).map(|(s, &c)| if c > 0 { (s / c as f64).sqrt() } else { 0.0 }).collect();
    NormStats { mean, std }
}

/// Applies `(x − mean) / max(std, 1e-8)` per variable and records `stats`.
pub fn apply_norm_stats<S: Scalar>(dataset: &TimeSeriesDataset<S>, stats: &NormStats) -> Result<TimeSeriesDataset<S>> {
    let f = dataset.num_features();
    if stats.mean.len() != f || stats.std.len() != f {
        return Err(Error::dim("apply_norm_stats", format!("{} statistics for {f} variables", stats.mean.len())));
    }
    let mut out = dataset.clone();
    for (k, v) in out.x.data_mut().iter_mut().enumerate() {
        let c = k % f;
        *v = S::lit((v.as_f64() - stats.mean[c]) / stats.std[c].max(STD_GUARD));
    }
    out.norm_stats = Some(stats.clone());
    Ok(out)
}

/// Z-scores a split with its own statistics.
pub fn znormalize<S: Scalar>(dataset: &TimeSeriesDataset<S>) -> TimeSeriesDataset<S> {
    let stats = fit_norm_stats(dataset);
    apply_norm_stats(dataset, &stats).expect("statistics fitted on the same dataset")
}

/// Replaces NaN with 0, the post-normalization mean.
pub fn clean_missing<S: Scalar>(dataset: &TimeSeriesDataset<S>) -> TimeSeriesDataset<S> {
    let mut out = dataset.clone();
    for v in out.x.data_mut() {
        if v.is_nan() {
            *v = S::zero();
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub rng_seed: u64,
    pub drop_last: bool,
}

impl BatchPlan {
    pub fn new(batch_size: usize, rng_seed: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::Config(format!("batch size must be at least 2, got {batch_size}")));
        }
        Ok(Self { batch_size, rng_seed, drop_last: false })
    }
}

/// Index lists for one epoch; the permutation is seeded with
/// `rng_seed ^ epoch`.
pub fn batches(n: usize, plan: &BatchPlan, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(plan.rng_seed ^ epoch));
    order
        .chunks(plan.batch_size.max(1))
        .filter(|c| !plan.drop_last || c.len() == plan.batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}
