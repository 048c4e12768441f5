use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use forcecheck_core::dataset::ClassMap;
use forcecheck_core::metrics::{f1_scores, ConfusionMatrix};
use forcecheck_core::nn::{Architecture, History};
use forcecheck_core::record::ActionKind;
use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// `train` or `eval`.
    pub command: String,
    pub tool_version: String,
    pub action_kind: ActionKind,
    pub preset: Option<String>,
    pub config_hashes: BTreeMap<String, String>,
    pub seeds: Option<Seeds>,
    pub split: Option<SplitSummary>,
    pub class_map: Vec<ClassEntry>,
    pub param_count: usize,
    pub branches: Vec<BranchSummary>,
    pub metrics: Metrics,
    pub training: Option<TrainingSummary>,
    /// Paths relative to the report's directory.
    pub artifacts: BTreeMap<String, String>,
    /// The only non-reproducible part of a report.
    pub timings: Timings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub command: u64,
    pub split: u64,
    pub init: u64,
    pub train: u64,
    pub augment: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub fractions: [f64; 3],
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub augmented: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u32,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub name: String,
    /// `signals` or `scaleograms`.
    pub input: String,
    pub channels: Vec<String>,
    pub layers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: u32,
    pub class_name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Which records the metrics describe: `test` or `all`.
    pub evaluated_on: String,
    pub records: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are true classes, columns predictions, both in class-map order.
    pub confusion_matrix: Vec<Vec<u64>>,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_macro_f1: Option<f64>,
    pub stopped_early: bool,
    pub final_train_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix_s: u64,
    pub preprocess_s: f64,
    pub train_s: f64,
    pub eval_s: f64,
    pub total_s: f64,
}

impl Metrics {
    pub fn from_confusion(cm: &ConfusionMatrix, class_map: &ClassMap, evaluated_on: &str, mean_loss: f64) -> Self {
        let f1 = f1_scores(cm);
        let p = cm.precision();
        let r = cm.recall();
        let per_class = class_map
            .iter()
            .enumerate()
            .map(|(i, (&id, name))| ClassMetrics {
                class_id: id,
                class_name: name.clone(),
                precision: p[i],
                recall: r[i],
                f1: f1.per_class[i],
                support: cm.counts()[i].iter().sum(),
            })
            .collect();
        Metrics {
            evaluated_on: evaluated_on.into(),
            records: cm.total(),
            accuracy: cm.accuracy(),
            macro_f1: f1.macro_f1,
            per_class,
            confusion_matrix: cm.counts().to_vec(),
            mean_loss,
        }
    }
}

impl TrainingSummary {
    pub fn from_history(h: &History) -> Self {
        TrainingSummary {
            epochs_run: h.epochs.len(),
            best_epoch: h.best_epoch,
            best_val_macro_f1: h.best_val_macro_f1,
            stopped_early: h.stopped_early,
            final_train_loss: h.epochs.last().map(|e| e.train_loss).unwrap_or(f64::NAN),
        }
    }
}

pub fn class_entries(class_map: &ClassMap) -> Vec<ClassEntry> {
    class_map
        .iter()
        .map(|(&id, name)| ClassEntry { id, name: name.clone() })
        .collect()
}

pub fn branch_summaries(arch: &Architecture) -> Vec<BranchSummary> {
    use forcecheck_core::record::Channel;
    arch.branches
        .iter()
        .map(|b| BranchSummary {
            name: b.name.clone(),
            input: if b.input.is_2d() { "scaleograms" } else { "signals" }.into(),
            channels: b
                .input
                .channels()
                .iter()
                .map(|&c| Channel::from_index(c).map(|ch| ch.name().to_string()).unwrap_or_else(|| c.to_string()))
                .collect(),
            layers: b.layers.iter().map(|l| l.kind_name().to_string()).collect(),
        })
        .collect()
}

pub fn write_json<T: Serialize>(v: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Output of `classify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub record_id: String,
    /// A model class name, or `NoContact` when no transient was found.
    pub class_name: String,
    pub class_id: Option<u32>,
    /// Softmax probability per class name; empty for `NoContact`.
    pub probabilities: BTreeMap<String, f64>,
    pub onset_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribution_path: Option<String>,
}

pub const NO_CONTACT: &str = "NoContact";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub record_id: String,
    pub true_class_id: u32,
    pub true_class: String,
    pub predicted_class_id: u32,
    pub predicted_class: String,
    pub confidence: f64,
    pub correct: bool,
    pub onset_index: usize,
}

pub fn write_verdicts(rows: &[VerdictRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
