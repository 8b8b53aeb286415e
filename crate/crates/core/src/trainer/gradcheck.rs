//! Central finite differences of the training loss, used to check the
//! analytic gradient. Only loss evaluations are used here.

use super::loss::{loss_value, ReplayDraw};
use super::model::Model;
use crate::error::Result;

/// Magnitude below which a component's error is measured absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max |a − n| / max(|a|, |n|, REL_ERROR_FLOOR)
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// (L(θ + h·e_k) − L(θ − h·e_k)) / 2h for every trainable scalar.
pub fn numerical_gradient(model: &Model, batch: &[(Vec<f64>, u32)], replay: &ReplayDraw, h: f64) -> Result<Vec<Vec<f64>>> {
    let params = model.trainable_params();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(params.len());
    for r in params {
        let n = model.param(r).len();
        let mut g = vec![0.0; n];
        for (k, gk) in g.iter_mut().enumerate() {
            let original = model.param(r)[k];
            probe.param_mut(r)[k] = original + h;
            let plus = loss_value(&probe, batch, replay)?.total;
            probe.param_mut(r)[k] = original - h;
            let minus = loss_value(&probe, batch, replay)?.total;
            probe.param_mut(r)[k] = original;
            *gk = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

pub fn compare(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    for (a, n) in analytic.iter().zip(numeric) {
        for (&x, &y) in a.iter().zip(n) {
            let abs = (x - y).abs();
            let rel = abs / x.abs().max(y.abs()).max(REL_ERROR_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    report
}

pub fn check_gradients(model: &Model, batch: &[(Vec<f64>, u32)], replay: &ReplayDraw, h: f64) -> Result<GradCheckReport> {
    let (_, analytic) = super::loss_and_grad(model, batch, replay)?;
    let numeric = numerical_gradient(model, batch, replay, h)?;
    Ok(compare(&analytic, &numeric))
}
