//! `muser simulate-sampler`

use std::io::BufRead;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use muser_core::sched::{simulate_trace, Strategy, TraceRow};
use muser_core::task::{Metric, TaskSpec};

#[derive(Deserialize)]
struct TraceHeader {
    tasks: Vec<HeaderTask>,
}

#[derive(Deserialize)]
struct HeaderTask {
    id: String,
    metric: Metric,
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    Ok(match s {
        "uniform" => Strategy::Uniform,
        "speed" => Strategy::Speed,
        "loss" => Strategy::LossBased,
        other => bail!("unknown strategy {other}; expected uniform, speed, or loss"),
    })
}

/// First line may be a header declaring task metrics; otherwise the row keys
/// must be the built-in task ids (stress/activation/valence).
fn read_trace(path: &Path) -> Result<(Vec<TaskSpec>, Vec<TraceRow>)> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let first = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => bail!(muser_core::CoreError::Data("empty metric trace".into())),
        }
    };

    let mut rows = Vec::new();
    let tasks = if let Ok(header) = serde_json::from_str::<TraceHeader>(&first) {
        header
            .tasks
            .into_iter()
            .map(|t| match t.metric {
                Metric::Accuracy => TaskSpec::classification(t.id),
                Metric::Rmse => TaskSpec::regression(t.id, (0.0, 1.0)),
            })
            .collect()
    } else {
        let row: TraceRow = serde_json::from_str(&first)
            .map_err(|e| muser_core::CoreError::Data(format!("trace line 1: {e}")))?;
        let tasks = row
            .scores
            .keys()
            .map(|id| match id.as_str() {
                "stress" => Ok(TaskSpec::classification("stress")),
                "activation" | "valence" => Ok(TaskSpec::regression(id.clone(), (0.0, 1.0))),
                other => bail!(
                    "task {other} needs a metric; start the trace with a header line like \
                     {{\"tasks\":[{{\"id\":\"{other}\",\"metric\":\"rmse\"}}]}}"
                ),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
        tasks
    };

    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TraceRow = serde_json::from_str(&line)
            .map_err(|e| muser_core::CoreError::Data(format!("trace line {}: {e}", i + 2)))?;
        rows.push(row);
    }
    Ok((tasks, rows))
}

pub fn run(
    trace: &Path,
    strategy: &str,
    history: usize,
    rho: f64,
    loss_temp: f64,
    out: Option<&Path>,
) -> Result<()> {
    let strategy = parse_strategy(strategy)?;
    let (tasks, rows) = read_trace(trace)?;
    let steps = simulate_trace(&tasks, &rows, strategy, history, rho, loss_temp)?;

    let mut csv = String::from("epoch");
    for t in &tasks {
        csv.push_str(&format!(",ratio_{}", t.id));
    }
    for t in &tasks {
        csv.push_str(&format!(",p_{}", t.id));
    }
    csv.push('\n');
    for step in &steps {
        csv.push_str(&step.epoch.to_string());
        for t in &tasks {
            let ratio = step
                .ratios
                .as_ref()
                .and_then(|r| r.0.iter().find(|(id, _)| id == &t.id).map(|(_, v)| *v));
            csv.push(',');
            if let Some(r) = ratio {
                csv.push_str(&r.to_string());
            }
        }
        for t in &tasks {
            csv.push(',');
            csv.push_str(&step.distribution.prob(&t.id).unwrap_or(0.0).to_string());
        }
        csv.push('\n');
    }

    match out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
