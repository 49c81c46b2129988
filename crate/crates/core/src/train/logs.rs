//! Deterministic log artifacts: per-epoch CSV and final result records.
//!
//! Wall-clock time deliberately never enters these files; identical
//! (config, seed, corpus) runs must produce byte-identical logs.

use serde::{Deserialize, Serialize};

use crate::train::metrics::EvalResult;
use crate::train::run::EpochReport;

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render epoch reports as CSV with one column group per task:
/// `epoch, val_<t>.., ratio_<t>.., p_<t>.., batches_<t>.., loss_<t>..`.
pub fn epoch_csv_string(task_order: &[String], reports: &[EpochReport]) -> String {
    let mut out = String::from("epoch");
    for prefix in ["val", "ratio", "p", "batches", "loss"] {
        for task in task_order {
            out.push_str(&format!(",{prefix}_{task}"));
        }
    }
    out.push('\n');
    for report in reports {
        out.push_str(&report.epoch.to_string());
        for task in task_order {
            out.push(',');
            out.push_str(&fmt_opt(report.val_scores.get(task).copied()));
        }
        for task in task_order {
            let ratio = report
                .ratios
                .as_ref()
                .and_then(|rs| rs.iter().find(|(t, _)| t == task).map(|(_, r)| *r));
            out.push(',');
            out.push_str(&fmt_opt(ratio));
        }
        for task in task_order {
            let p = report
                .distribution
                .as_ref()
                .and_then(|ds| ds.iter().find(|(t, _)| t == task).map(|(_, p)| *p));
            out.push(',');
            out.push_str(&fmt_opt(p));
        }
        for task in task_order {
            out.push(',');
            out.push_str(
                &report
                    .batch_counts
                    .get(task)
                    .map(|c| c.to_string())
                    .unwrap_or_default(),
            );
        }
        for task in task_order {
            out.push(',');
            out.push_str(&fmt_opt(report.mean_losses.get(task).copied().flatten()));
        }
        out.push('\n');
    }
    out
}

/// Final line of a training run, appended to a results JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub preset: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test: EvalResult,
}

impl ResultRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("in-memory serialization")
    }
}
