//! Modal-data likelihood.
//!
//! Per mode `m` the eigenvalue prediction error `η_λ = λ̃ − λ(θ)` is zero-mean
//! Gaussian with standard deviation `c_λm · λ̃_m` (proportional to the measured
//! eigenvalue), and the shape error `η_Φ = γ Φ̃ − Φ(θ)` has i.i.d. components
//! with standard deviation `c_Φm · ‖γ Φ̃‖`, where the normalization
//! `γ = Φ̃ᵀΦ(θ) / ‖Φ̃‖²` removes the arbitrary scaling of identified shapes.
//! Curvature terms follow the same template. Modes and yearly data sets are
//! treated as independent, so log-likelihoods add.

use crate::vibration::{curvature_of, ModalDataSet};
use crate::{Error, Result};

use super::InferenceProblem;

const LN_2PI: f64 = 1.8378770664093453;

#[inline]
fn normal_logpdf(residual: f64, std: f64) -> f64 {
    let z = residual / std;
    -0.5 * z * z - std.ln() - 0.5 * LN_2PI
}

/// Log-density of one eigenvalue observation.
#[inline]
pub fn eigenvalue_logpdf(lambda_data: f64, lambda_model: f64, c_lambda: f64) -> f64 {
    normal_logpdf(lambda_data - lambda_model, c_lambda * lambda_data)
}

/// Log-density of one mode-shape (or curvature) vector observation.
///
/// Invariant under rescaling of the data vector: γ compensates in the
/// residual and the component standard deviation scales with `‖γ Φ̃‖`.
pub fn shape_logpdf(data: &[f64], model: &[f64], c_phi: f64) -> f64 {
    debug_assert_eq!(data.len(), model.len());
    let norm2: f64 = data.iter().map(|x| x * x).sum();
    if norm2 == 0.0 {
        return f64::NEG_INFINITY;
    }
    let gamma = data.iter().zip(model).map(|(d, m)| d * m).sum::<f64>() / norm2;
    let std = c_phi * gamma.abs() * norm2.sqrt();
    if std == 0.0 {
        return f64::NEG_INFINITY;
    }
    data.iter()
        .zip(model)
        .map(|(d, m)| normal_logpdf(gamma * d - m, std))
        .sum()
}

/// Log-likelihood of one yearly data set given the damage vector at that year.
pub(super) fn log_likelihood_at_damage(
    problem: &InferenceProblem,
    damage: &[f64],
    data: &ModalDataSet,
) -> Result<f64> {
    let cfg = &problem.likelihood;
    let n_modes = cfg.n_modes;
    if data.lambdas.len() < n_modes {
        return Err(Error::Inference(format!(
            "data set at year {} holds {} modes, likelihood needs {}",
            data.t_years,
            data.lambdas.len(),
            n_modes
        )));
    }
    let lam_model = problem.forward.lambdas(damage);
    let mut ll = 0.0;
    for m in 0..n_modes {
        let lm = lam_model[m];
        if !lm.is_finite() {
            return Err(Error::Inference(format!(
                "non-finite forward eigenvalue for damage {damage:?}"
            )));
        }
        ll += eigenvalue_logpdf(data.lambdas[m], lm, cfg.c_lambda[m]);
    }
    if cfg.use_shapes || cfg.use_curvatures {
        let model_shapes = problem
            .forward
            .shapes_at(damage, &problem.sensor_top_indices);
        let (data_vecs, model_vecs): (&[Vec<f64>], Vec<Vec<f64>>) = if cfg.use_curvatures {
            let dv = data.curvatures.as_ref().ok_or_else(|| {
                Error::Inference(format!(
                    "curvature likelihood enabled but data at year {} has no curvatures",
                    data.t_years
                ))
            })?;
            let spacing = problem.sensor_spacing.ok_or_else(|| {
                Error::Config("curvature likelihood requires a uniform sensor layout".to_string())
            })?;
            (dv, curvature_of(&model_shapes, spacing)?)
        } else {
            let dv = data.shapes.as_ref().ok_or_else(|| {
                Error::Inference(format!(
                    "shape likelihood enabled but data at year {} has no shapes",
                    data.t_years
                ))
            })?;
            (dv, model_shapes)
        };
        for m in 0..n_modes {
            ll += shape_logpdf(&data_vecs[m], &model_vecs[m], cfg.c_phi[m]);
        }
    }
    Ok(ll)
}

/// Log-likelihood of one yearly data set for parameters `theta`.
pub fn log_likelihood_single(
    problem: &InferenceProblem,
    theta: &[f64],
    data: &ModalDataSet,
) -> Result<f64> {
    let damage = crate::deterioration::evaluate(theta, data.t_years)?;
    log_likelihood_at_damage(problem, &damage, data)
}

/// Log-likelihood of a multi-year history (independent yearly sets).
pub fn log_likelihood_history(
    problem: &InferenceProblem,
    theta: &[f64],
    data: &[ModalDataSet],
) -> Result<f64> {
    let mut ll = 0.0;
    for set in data {
        ll += log_likelihood_single(problem, theta, set)?;
    }
    Ok(ll)
}
