//! Central finite-difference verification of analytic gradients.
//!
//! The harness reruns the caller's forward builder with individually
//! perturbed parameter coordinates, so it is valid for any deterministic
//! forward pass (dropout must be disabled).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::tape::{NodeId, Tape};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Relative error denominator floor; coordinates with gradients below
    /// this magnitude are effectively compared absolutely.
    pub denom_floor: f64,
    /// Check at most this many randomly chosen coordinates per parameter
    /// tensor (None = exhaustive).
    pub max_coords_per_param: Option<usize>,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            denom_floor: 1e-6,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Parameter name, flat index, analytic and numeric values at the worst
    /// coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compare analytic gradients of a scalar loss against central differences
/// `(f(t+h) - f(t-h)) / 2h` per parameter coordinate and report the worst
/// relative error.
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    build_loss: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    // Analytic pass.
    store.zero_grads(ids);
    let mut tape = Tape::new();
    let loss = build_loss(&mut tape, store)?;
    if !tape.value(loss).is_finite() {
        return Err(CoreError::Numeric("non-finite loss in gradient check".into()));
    }
    tape.backward(loss)?;
    tape.accumulate_param_grads(store);
    let analytic: Vec<Tensor> = ids.iter().map(|id| store.node(*id).grad.clone()).collect();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build_loss(&mut tape, store)?;
        let v = tape.value(loss).item()?;
        if !v.is_finite() {
            return Err(CoreError::Numeric("non-finite loss in gradient check".into()));
        }
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst: None,
    };

    for (slot, id) in ids.iter().enumerate() {
        let numel = store.node(*id).value.numel();
        let coords: Vec<usize> = match cfg.max_coords_per_param {
            Some(limit) if limit < numel => {
                let mut all: Vec<usize> = (0..numel).collect();
                all.shuffle(&mut rng);
                all.truncate(limit);
                all
            }
            _ => (0..numel).collect(),
        };
        for ci in coords {
            let original = store.node(*id).value.data()[ci];
            store.node_mut(*id).value.data_mut()[ci] = original + cfg.step;
            let plus = eval(store)?;
            store.node_mut(*id).value.data_mut()[ci] = original - cfg.step;
            let minus = eval(store)?;
            store.node_mut(*id).value.data_mut()[ci] = original;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[slot].data()[ci];
            let denom = a.abs().max(numeric.abs()).max(cfg.denom_floor);
            let rel = (a - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((store.node(*id).name.clone(), ci, a, numeric));
            }
        }
    }
    Ok(report)
}
