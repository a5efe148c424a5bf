//! Central finite-difference verification of [`backward`].

use super::engine::{backward, forward};
use super::{NetworkSpec, ParamSet};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor of the relative error, so gradients that are
    /// numerically zero compare on an absolute scale.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, floor: 1e-4 }
    }
}

/// One compared scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradEntry {
    pub layer: usize,
    pub is_bias: bool,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradEntry>,
    /// Parameters whose `+-step` evaluations crossed a ReLU or max-pool
    /// decision boundary; the loss is not differentiable there.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradEntry> {
        self.entries.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |e| e.rel_error)
    }
}

/// Compares every parameter's analytic gradient with
/// `(L(p + h) - L(p - h)) / 2h`.
pub fn check_gradients(
    spec: &NetworkSpec,
    params: &ParamSet,
    batch: &Tensor,
    labels: &[usize],
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let base = forward(spec, params, batch, labels)?;
    let decisions = base.cache.decision_digest(spec);
    let grads = backward(spec, params, &base.cache)?;

    let mut probe = params.clone();
    let mut entries = Vec::new();
    let mut skipped = 0;
    for layer in 0..params.layers.len() {
        let Some(g) = &grads.layers[layer] else { continue };
        for (is_bias, analytic) in [(false, g.weight.data()), (true, g.bias.data())] {
            for (index, &a) in analytic.iter().enumerate() {
                let mut eval = |delta: f64| -> Result<(f64, u64)> {
                    let p = probe.layers[layer].as_mut().expect("parameterized");
                    let t = if is_bias { &mut p.bias } else { &mut p.weight };
                    let orig = t.data()[index];
                    t.data_mut()[index] = orig + delta;
                    let out = forward(spec, &probe, batch, labels);
                    let p = probe.layers[layer].as_mut().expect("parameterized");
                    let t = if is_bias { &mut p.bias } else { &mut p.weight };
                    t.data_mut()[index] = orig;
                    let out = out?;
                    Ok((out.loss, out.cache.decision_digest(spec)))
                };
                let (plus, dp) = eval(opts.step)?;
                let (minus, dm) = eval(-opts.step)?;
                if dp != decisions || dm != decisions {
                    skipped += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * opts.step);
                let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
                entries.push(GradEntry {
                    layer,
                    is_bias,
                    index,
                    analytic: a,
                    numeric,
                    rel_error,
                });
            }
        }
    }
    Ok(GradCheckReport { entries, skipped })
}
