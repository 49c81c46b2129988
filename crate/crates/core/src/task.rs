//! Task declarations for multi-task training.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const STRESS: &str = "stress";
pub const ACTIVATION: &str = "activation";
pub const VALENCE: &str = "valence";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    BinaryClassification,
    ScalarRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Accuracy,
    Rmse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

/// One task: what it predicts, how it is scored, and which direction is
/// better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub kind: TaskKind,
    pub metric: Metric,
    pub orientation: Orientation,
    pub label_range: Option<(f64, f64)>,
}

impl TaskSpec {
    pub fn classification(id: impl Into<String>) -> Self {
        TaskSpec {
            id: id.into(),
            kind: TaskKind::BinaryClassification,
            metric: Metric::Accuracy,
            orientation: Orientation::HigherBetter,
            label_range: None,
        }
    }

    pub fn regression(id: impl Into<String>, label_range: (f64, f64)) -> Self {
        TaskSpec {
            id: id.into(),
            kind: TaskKind::ScalarRegression,
            metric: Metric::Rmse,
            orientation: Orientation::LowerBetter,
            label_range: Some(label_range),
        }
    }

    /// Output units of this task's head.
    pub fn head_outputs(&self) -> usize {
        match self.kind {
            TaskKind::BinaryClassification => 2,
            TaskKind::ScalarRegression => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let consistent = matches!(
            (self.metric, self.orientation),
            (Metric::Accuracy, Orientation::HigherBetter)
                | (Metric::Rmse, Orientation::LowerBetter)
        );
        if !consistent {
            return Err(CoreError::Config(format!(
                "task {}: metric {:?} requires the matching orientation",
                self.id, self.metric
            )));
        }
        if let Some((lo, hi)) = self.label_range {
            if !(lo < hi) {
                return Err(CoreError::Config(format!(
                    "task {}: empty label range [{lo}, {hi}]",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Stress classification plus the two emotion regressions, with the given
/// score range for the regression labels.
pub fn default_tasks(score_range: (f64, f64)) -> Vec<TaskSpec> {
    vec![
        TaskSpec::classification(STRESS),
        TaskSpec::regression(ACTIVATION, score_range),
        TaskSpec::regression(VALENCE, score_range),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_orientation_pairing_enforced() {
        let mut t = TaskSpec::classification("stress");
        t.validate().unwrap();
        t.orientation = Orientation::LowerBetter;
        assert!(t.validate().is_err());

        let mut t = TaskSpec::regression("activation", (1.0, 9.0));
        t.validate().unwrap();
        t.orientation = Orientation::HigherBetter;
        assert!(t.validate().is_err());
    }

    #[test]
    fn head_sizes_follow_task_kind() {
        assert_eq!(TaskSpec::classification("s").head_outputs(), 2);
        assert_eq!(TaskSpec::regression("a", (0.0, 1.0)).head_outputs(), 1);
    }
}
