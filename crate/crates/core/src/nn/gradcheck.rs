//! Central finite-difference checks of the analytic gradients.

use crate::error::Result;
use crate::nn::model::{Batch, Model};
use crate::nn::params::ModelParams;
use crate::nn::tape::{BackwardFault, Mode};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error, so entries
    /// whose true gradient is essentially zero are compared absolutely.
    pub floor: f64,
    pub mode: Mode,
    pub fault: Option<BackwardFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            mode: Mode::Eval,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorReport {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// `(f(x + h) − f(x − h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

/// Compares every parameter gradient of `model` on `batch` with central
/// differences of the loss. Dropout is never applied.
pub fn check_model(
    model: &Model,
    params: &ModelParams,
    batch: &Batch,
    opts: &GradCheckOptions,
) -> Result<Vec<TensorReport>> {
    let pass = model.pass::<rand_chacha::ChaCha8Rng>(params, batch, opts.mode, None, opts.fault)?;
    let mut probe = params.clone();
    let mut reports = Vec::with_capacity(params.len());
    for id in params.ids() {
        let analytic = pass
            .grads
            .iter()
            .find(|(gid, _)| *gid == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| {
                let (r, c) = params.param(id).value.shape();
                crate::dense::Matrix::zeros(r, c)
            });
        let len = analytic.as_slice().len();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for i in 0..len {
            let original = params.param(id).value.as_slice()[i];
            let numeric = central_difference(
                |x| {
                    probe.param_mut(id).value.as_mut_slice()[i] = x;
                    model.loss(&probe, batch, opts.mode)
                },
                original,
                opts.step,
            )?;
            probe.param_mut(id).value.as_mut_slice()[i] = original;
            let a = analytic.as_slice()[i];
            max_rel = max_rel.max(relative_error(a, numeric, opts.floor));
            max_abs = max_abs.max((a - numeric).abs());
        }
        reports.push(TensorReport {
            name: params.param(id).name.clone(),
            len,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            passed: max_rel <= opts.tolerance,
        });
    }
    Ok(reports)
}
