//! Central-difference check of analytic parameter gradients.

use serde::Serialize;

use super::params::{Gradients, ParamStore};

/// Perturbation used for the central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that pairs of tiny
/// gradients compare on absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        !self.entries.is_empty() && self.max_rel_error() < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` with `(L(p+h) − L(p−h)) / 2h` for every trainable
/// scalar, visiting every `stride`-th entry of each parameter. Frozen
/// parameters are skipped.
pub fn grad_check(
    store: &ParamStore,
    analytic: &Gradients,
    stride: usize,
    loss: impl Fn(&ParamStore) -> f64,
) -> GradCheckReport {
    let stride = stride.max(1);
    let mut probe = store.clone();
    let mut report = GradCheckReport::default();
    for (id, param) in store.iter() {
        if param.frozen {
            continue;
        }
        for index in (0..param.value.len()).step_by(stride) {
            let orig = param.value.as_slice()[index];
            probe.value_mut(id).as_mut_slice()[index] = orig + FD_STEP;
            let plus = loss(&probe);
            probe.value_mut(id).as_mut_slice()[index] = orig - FD_STEP;
            let minus = loss(&probe);
            probe.value_mut(id).as_mut_slice()[index] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.get(id).as_slice()[index];
            report.entries.push(GradCheckEntry {
                param: param.name.clone(),
                index,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    report
}
