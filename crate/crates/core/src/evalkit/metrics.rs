//! Accuracy and macro-averaged precision, recall and F1.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Outcome of one seed in a multi-seed run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub macro_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub macro_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Per-seed values of an aggregate; empty for a single evaluation.
    pub seeds: Vec<SeedMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro averages run over the classes present in `y_true`; `0/0` is 0.
pub fn metrics(y_true: &[usize], y_pred: &[usize]) -> Result<MetricsReport> {
    metrics_with_labels(y_true, y_pred, &[])
}

/// As [`metrics`], naming classes with `labels[class]` where available.
pub fn metrics_with_labels(y_true: &[usize], y_pred: &[usize], labels: &[String]) -> Result<MetricsReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Contract(format!("{} true labels vs {} predictions", y_true.len(), y_pred.len())));
    }
    if y_true.is_empty() {
        return Err(Error::Contract("metrics need at least one instance".into()));
    }
    let k = y_true.iter().chain(y_pred).copied().max().unwrap_or(0) + 1;
    let mut tp = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    let mut support = vec![0usize; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        support[t] += 1;
        predicted[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .filter(|&c| support[c] > 0)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], support[c]);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            let label = labels.get(c).cloned().unwrap_or_else(|| c.to_string());
            ClassMetrics { class: c, label, precision, recall, f1, support: support[c] }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / per_class.len() as f64;
    Ok(MetricsReport {
        accuracy: ratio(tp.iter().sum(), y_true.len()),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
        seeds: Vec::new(),
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), None, e.to_string()))
    }

    fn seed_entry(&self, seed: u64) -> SeedMetrics {
        SeedMetrics {
            seed,
            accuracy: Some(self.accuracy),
            macro_precision: Some(self.macro_precision),
            macro_recall: Some(self.macro_recall),
            macro_f1: Some(self.macro_f1),
            error: None,
        }
    }

    /// Means over the completed seeds; failed seeds are listed with their
    /// error and excluded from the averages.
    pub fn aggregate(runs: &[(u64, std::result::Result<MetricsReport, String>)]) -> Result<Self> {
        let done: Vec<(u64, &MetricsReport)> =
            runs.iter().filter_map(|(s, r)| r.as_ref().ok().map(|r| (*s, r))).collect();
        let seeds = runs
            .iter()
            .map(|(s, r)| match r {
                Ok(rep) => rep.seed_entry(*s),
                Err(e) => SeedMetrics {
                    seed: *s,
                    accuracy: None,
                    macro_precision: None,
                    macro_recall: None,
                    macro_f1: None,
                    error: Some(e.clone()),
                },
            })
            .collect();
        if done.is_empty() {
            return Err(Error::InvalidInput("every seed failed".into()));
        }
        let n = done.len() as f64;
        let avg = |f: &dyn Fn(&MetricsReport) -> f64| done.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
        let per_class = done[0]
            .1
            .per_class
            .iter()
            .map(|c0| {
                let matching: Vec<&ClassMetrics> =
                    done.iter().filter_map(|(_, r)| r.per_class.iter().find(|c| c.class == c0.class)).collect();
                let m = matching.len() as f64;
                ClassMetrics {
                    class: c0.class,
                    label: c0.label.clone(),
                    precision: matching.iter().map(|c| c.precision).sum::<f64>() / m,
                    recall: matching.iter().map(|c| c.recall).sum::<f64>() / m,
                    f1: matching.iter().map(|c| c.f1).sum::<f64>() / m,
                    support: c0.support,
                }
            })
            .collect();
        Ok(Self {
            accuracy: avg(&|r| r.accuracy),
            macro_precision: avg(&|r| r.macro_precision),
            macro_recall: avg(&|r| r.macro_recall),
            macro_f1: avg(&|r| r.macro_f1),
            per_class,
            seeds,
        })
    }
}
