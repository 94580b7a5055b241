//! Central finite-difference check of tape gradients.

use std::collections::BTreeMap;

use serde::Serialize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{concat_rows, BoundParams, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{forward_var, TwinModelConfig};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    /// Largest relative error seen in each parameter.
    pub per_parameter: BTreeMap<String, f64>,
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub tolerance: f64,
    pub coordinates: usize,
    pub pass: bool,
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares tape gradients of `f` with central differences
/// `(f(p + h·eᵢ) − f(p − h·eᵢ)) / 2h` over every coordinate of `params`.
///
/// `f` is evaluated twice at the unperturbed point first; if the two values
/// differ bitwise the check fails with [`Error::Determinism`].
pub fn finite_diff_check<F>(f: F, params: &ParameterSet, step: f64, tolerance: f64) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::contract("finite difference step must be positive"));
    }
    let eval = |p: &ParameterSet| -> Result<f64> {
        let tape = Tape::no_grad();
        let bound = tape.bind(p);
        let loss = f(&tape, &bound)?;
        let v = loss.value();
        if v.numel() != 1 {
            return Err(Error::contract("checked function must return a scalar"));
        }
        Ok(v.data()[0])
    };

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }

    let tape = Tape::new();
    let bound = tape.bind(params);
    let loss = f(&tape, &bound)?;
    let analytic = tape.backward(loss, &bound)?;

    let mut per_parameter = BTreeMap::new();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut coordinates = 0;
    let mut probe = params.clone();
    for (name, tensor) in params.iter() {
        let grad = &analytic[name];
        let mut param_max = 0.0f64;
        for i in 0..tensor.numel() {
            let orig = tensor.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + step;
            let plus = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig - step;
            let minus = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(grad.data()[i], numeric);
            coordinates += 1;
            param_max = param_max.max(err);
            if err > max_rel || worst.is_none() {
                max_rel = max_rel.max(err);
                worst = Some((name.to_string(), i));
            }
        }
        per_parameter.insert(name.to_string(), param_max);
    }
    Ok(GradReport {
        per_parameter,
        max_relative_error: max_rel,
        worst,
        tolerance,
        coordinates,
        pass: max_rel < tolerance,
    })
}

/// Windows and labels plus perturbed parameters for a model gradient check.
///
/// Biases, layer-norm parameters and gate logits are moved off their
/// initial values so that no coordinate sits at a special point.
pub fn model_check_inputs(
    config: &TwinModelConfig,
    seed: u64,
    batch: usize,
) -> Result<(ParameterSet, Vec<Tensor>, Vec<usize>)> {
    let mut params = config.init_params(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let windows = (0..batch)
        .map(|_| {
            let data = (0..config.window_len * config.n_features)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            Tensor::new(vec![config.window_len, config.n_features], data)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = (0..batch).map(|i| i % config.n_classes).collect();
    Ok((params, windows, labels))
}

/// Checks every parameter of the twin model under the mean cross-entropy of
/// a small random batch.
pub fn check_model(config: &TwinModelConfig, seed: u64, step: f64, tolerance: f64) -> Result<GradReport> {
    let (params, windows, labels) = model_check_inputs(config, seed, 2)?;
    finite_diff_check(
        |_, bound| {
            let logits = windows
                .iter()
                .map(|w| forward_var(w, bound, config))
                .collect::<Result<Vec<_>>>()?;
            concat_rows(&logits)?.cross_entropy(&labels)
        },
        &params,
        step,
        tolerance,
    )
}
