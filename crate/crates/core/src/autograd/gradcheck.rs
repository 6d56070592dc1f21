//! Central finite-difference verification of tape gradients.

use super::params::{Grads, ParameterStore};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    /// Parameters whose worst entry exceeds the tolerance.
    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.entries
            .iter()
            .filter(|e| e.max_rel_error > self.tolerance)
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is ~0 are judged by absolute error instead.
    pub floor: f64,
    /// Cap on entries checked per parameter; `None` checks all of them.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_entries: None,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `grad(store)` with central differences of `loss(store)`.
///
/// Both closures must be deterministic; any randomness has to be frozen
/// inside them. When `max_entries` caps the work, the checked entries are
/// spread evenly across each tensor.
pub fn gradient_check<L, G>(
    store: &ParameterStore,
    loss: L,
    grad: G,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    L: Fn(&ParameterStore) -> Result<f64>,
    G: Fn(&ParameterStore) -> Result<Grads>,
{
    let analytic = grad(store)?;
    let mut probe = store.clone();
    let mut entries = Vec::with_capacity(store.len());
    for p in 0..store.len() {
        let name = store.name_at(p).to_string();
        let n = store.value_at(p).len();
        let count = opts.max_entries.map_or(n, |m| m.min(n));
        let mut worst = (0.0f64, 0usize);
        for j in 0..count {
            let idx = if count == n { j } else { j * n / count };
            let orig = store.value_at(p).data()[idx];
            probe.get_mut(&name).expect("cloned store").data_mut()[idx] = orig + opts.step;
            let up = loss(&probe)?;
            probe.get_mut(&name).expect("cloned store").data_mut()[idx] = orig - opts.step;
            let down = loss(&probe)?;
            probe.get_mut(&name).expect("cloned store").data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let err = relative_error(analytic.get(p).data()[idx], numeric, opts.floor);
            if err > worst.0 || err.is_nan() {
                worst = (err, idx);
            }
        }
        entries.push(ParamCheck {
            name,
            checked: count,
            max_rel_error: worst.0,
            worst_index: worst.1,
        });
    }
    Ok(GradCheckReport {
        entries,
        tolerance: opts.tolerance,
    })
}
