//! Indicator analysis: z-normalized linear fits per task, top-k coefficient
//! extraction, overlap/unique-set reports, and paired significance tests.

use std::collections::{BTreeMap, BTreeSet};

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CoreError, Result};

const RIDGE_LAMBDA: f64 = 1e-6;
const LOGISTIC_GRAD_TOL: f64 = 1e-8;
const LOGISTIC_MAX_ITERS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    Classification,
    Regression,
}

/// Z-normalize each column in place (population std; constant columns map
/// to zeros).
pub fn znormalize_columns(rows: &mut [Vec<f64>]) {
    if rows.is_empty() {
        return;
    }
    let n = rows.len() as f64;
    let d = rows[0].len();
    for j in 0..d {
        let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var: f64 = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        for r in rows.iter_mut() {
            r[j] = if std == 0.0 { 0.0 } else { (r[j] - mean) / std };
        }
    }
}

fn solve_linear_system(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(CoreError::Numeric("singular normal equations".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

fn ridge_regression(rows: &[Vec<f64>], targets: &[f64]) -> Result<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean_y: f64 = targets.iter().sum::<f64>() / n as f64;
    // Gram matrix plus ridge; intercept handled by centering the target.
    let mut gram = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            if r[i] == 0.0 {
                continue;
            }
            for j in i..d {
                gram[i][j] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[i][j] = gram[j][i];
        }
        gram[i][i] += RIDGE_LAMBDA;
    }
    let mut rhs = vec![0.0; d];
    for (r, y) in rows.iter().zip(targets) {
        let yc = y - mean_y;
        for (j, v) in r.iter().enumerate() {
            rhs[j] += v * yc;
        }
    }
    solve_linear_system(gram, rhs)
}

/// Plain gradient descent on the ridge-regularized mean log-loss, with the
/// step size set from a power-iteration bound on the Lipschitz constant.
/// Returns (weights, intercept, per-iteration loss trace).
fn logistic_fit(rows: &[Vec<f64>], targets: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let nf = n as f64;

    // lambda_max(X^T X) via power iteration.
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda_max: f64 = 1.0;
    for _ in 0..50 {
        let mut xv = vec![0.0; n];
        for (i, r) in rows.iter().enumerate() {
            xv[i] = r.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let mut next = vec![0.0; d];
        for (r, &s) in rows.iter().zip(&xv) {
            for (j, a) in r.iter().enumerate() {
                next[j] += a * s;
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda_max = norm;
        for (vj, nj) in v.iter_mut().zip(&next) {
            *vj = nj / norm;
        }
    }
    let lipschitz = lambda_max / (4.0 * nf) + RIDGE_LAMBDA;
    let step = 1.0 / lipschitz;

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut trace = Vec::new();
    for _ in 0..LOGISTIC_MAX_ITERS {
        let mut loss = 0.0;
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (r, &y) in rows.iter().zip(targets) {
            let z: f64 = b + r.iter().zip(&w).map(|(a, ww)| a * ww).sum::<f64>();
            // log(1 + e^z) - y z, computed stably.
            loss += if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() } - y * z;
            let p = 1.0 / (1.0 + (-z).exp());
            let residual = p - y;
            gb += residual;
            for (gj, a) in gw.iter_mut().zip(r) {
                *gj += residual * a;
            }
        }
        loss = loss / nf + 0.5 * RIDGE_LAMBDA * w.iter().map(|x| x * x).sum::<f64>();
        trace.push(loss);
        let mut grad_sq = 0.0;
        for (gj, wj) in gw.iter_mut().zip(&w) {
            *gj = *gj / nf + RIDGE_LAMBDA * wj;
            grad_sq += *gj * *gj;
        }
        gb /= nf;
        grad_sq += gb * gb;
        if grad_sq.sqrt() < LOGISTIC_GRAD_TOL {
            break;
        }
        for (wj, gj) in w.iter_mut().zip(&gw) {
            *wj -= step * gj;
        }
        b -= step * gb;
    }
    (w, b, trace)
}

/// Fit a linear model on (already z-normalized) features and return the
/// per-feature coefficient vector. Regression solves ridge least squares in
/// closed form; classification runs a logistic fit to convergence.
pub fn fit_linear(rows: &[Vec<f64>], targets: &[f64], kind: FitKind) -> Result<Vec<f64>> {
    if rows.is_empty() || rows.len() != targets.len() {
        return Err(CoreError::Precondition(format!(
            "feature/target length mismatch: {} vs {}",
            rows.len(),
            targets.len()
        )));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(CoreError::Shape("ragged feature rows".into()));
    }
    let distinct = targets
        .iter()
        .any(|t| (t - targets[0]).abs() > 0.0);
    if !distinct {
        return Err(CoreError::Precondition(
            "targets must take at least two distinct values".into(),
        ));
    }
    match kind {
        FitKind::Regression => ridge_regression(rows, targets),
        FitKind::Classification => {
            if targets.iter().any(|t| *t != 0.0 && *t != 1.0) {
                return Err(CoreError::Data("classification targets must be 0/1".into()));
            }
            Ok(logistic_fit(rows, targets).0)
        }
    }
}

/// Features with the `k` largest absolute coefficients, ranked descending;
/// ties break on feature name. The flag reports `k` exceeding the feature
/// count (all features are returned in that case).
pub fn top_k_indicators(
    coefs: &[f64],
    names: &[String],
    k: usize,
) -> Result<(Vec<(String, f64)>, bool)> {
    if k == 0 {
        return Err(CoreError::Config("k must be >= 1".into()));
    }
    if coefs.len() != names.len() {
        return Err(CoreError::Shape("coefficient/name length mismatch".into()));
    }
    let mut order: Vec<usize> = (0..coefs.len()).collect();
    order.sort_by(|&i, &j| {
        coefs[j]
            .abs()
            .partial_cmp(&coefs[i].abs())
            .unwrap()
            .then_with(|| names[i].cmp(&names[j]))
    });
    let clipped = k > coefs.len();
    let take = k.min(coefs.len());
    Ok((
        order[..take]
            .iter()
            .map(|&i| (names[i].clone(), coefs[i]))
            .collect(),
        clipped,
    ))
}

/// Cross-task overlap structure of top-k indicator sets.
#[derive(Debug, Clone)]
pub struct IndicatorReport {
    /// Task id -> ranked (feature, coefficient) list.
    pub per_task: BTreeMap<String, Vec<(String, f64)>>,
    /// Features present in every task's top-k set.
    pub intersection: BTreeSet<String>,
    /// Task id -> features in that task's set and no other's.
    pub unique: BTreeMap<String, BTreeSet<String>>,
}

pub fn overlap_report(per_task: BTreeMap<String, Vec<(String, f64)>>) -> Result<IndicatorReport> {
    if per_task.len() < 2 {
        return Err(CoreError::Precondition(
            "overlap report needs at least two tasks".into(),
        ));
    }
    let sets: BTreeMap<&String, BTreeSet<&String>> = per_task
        .iter()
        .map(|(task, list)| (task, list.iter().map(|(f, _)| f).collect()))
        .collect();
    let mut intersection: BTreeSet<String> = sets
        .values()
        .next()
        .unwrap()
        .iter()
        .map(|f| f.to_string())
        .collect();
    for set in sets.values() {
        intersection.retain(|f| set.contains(&f.to_string()));
    }
    let mut unique = BTreeMap::new();
    for (task, set) in &sets {
        let exclusive: BTreeSet<String> = set
            .iter()
            .filter(|f| {
                sets.iter()
                    .all(|(other, oset)| other == task || !oset.contains(**f))
            })
            .map(|f| f.to_string())
            .collect();
        unique.insert(task.to_string(), exclusive);
    }
    Ok(IndicatorReport {
        per_task,
        intersection,
        unique,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SignificanceResult {
    pub t: f64,
    pub p: f64,
    pub dof: usize,
    /// Set when the zero-variance rule decided the p-value.
    pub degenerate: bool,
}

/// Two-sided paired t-test on per-seed score differences. Zero variance of
/// the differences short-circuits: p = 0 for a nonzero mean difference,
/// p = 1 otherwise.
pub fn paired_significance(scores_a: &[f64], scores_b: &[f64]) -> Result<SignificanceResult> {
    let n = scores_a.len();
    if n < 2 || n != scores_b.len() {
        return Err(CoreError::Precondition(
            "paired test needs two equal-length lists of length >= 2".into(),
        ));
    }
    let diffs: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let dof = n - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            SignificanceResult { t: 0.0, p: 1.0, dof, degenerate: true }
        } else {
            let t = if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
            SignificanceResult { t, p: 0.0, dof, degenerate: true }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| CoreError::Numeric(format!("t-distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(SignificanceResult { t, p, dof, degenerate: false })
}

#[cfg(test)]
pub(crate) fn logistic_fit_trace(rows: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
    logistic_fit(rows, targets).2
}
