//! Sequential Bayesian inference of the deterioration parameters.
//!
//! Inference runs in a transformed space where every lognormal rate parameter
//! is represented by its logarithm, making the prior exactly Gaussian and the
//! sampler geometry benign; results are reported in the natural space. The
//! posterior is explored either by MAP + Laplace approximation or by adaptive
//! Metropolis MCMC; with yearly data the updating is sequential, warm-started
//! from the previous year.

mod laplace;
mod likelihood;
mod mcmc;
mod optimize;

pub use laplace::{fd_hessian, gaussian_at_mode, minimize_multistart};
pub use likelihood::{
    eigenvalue_logpdf, log_likelihood_history, log_likelihood_single, shape_logpdf,
};
pub use mcmc::{adaptive_metropolis, ChainResult, McmcOptions};
pub use optimize::{nelder_mead, OptResult};

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::deterioration::{lognormal_from_mean_cv, Family, PriorSpec};
use crate::seeds::stream_rng;
use crate::surrogate::SurrogateBundle;
use crate::vibration::{ModalDataSet, SensorLayout};
use crate::{Error, Result};

/// Total-prediction-error model of the likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodConfig {
    /// Eigenvalue error coefficient per mode.
    pub c_lambda: Vec<f64>,
    /// Shape/curvature error coefficient per mode.
    pub c_phi: Vec<f64>,
    pub use_shapes: bool,
    pub use_curvatures: bool,
    /// Modes entering the likelihood.
    pub n_modes: usize,
}

impl LikelihoodConfig {
    /// Eigenvalues only (scour default).
    pub fn eigenvalues_only(n_modes: usize, c: f64) -> Self {
        Self {
            c_lambda: vec![c; n_modes],
            c_phi: vec![c; n_modes],
            use_shapes: false,
            use_curvatures: false,
            n_modes,
        }
    }

    /// Eigenvalues plus mode-shape curvatures (corrosion default).
    pub fn with_curvatures(n_modes: usize, c: f64) -> Self {
        Self {
            use_curvatures: true,
            ..Self::eigenvalues_only(n_modes, c)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::Config("likelihood needs at least one mode".to_string()));
        }
        if self.c_lambda.len() != self.n_modes || self.c_phi.len() != self.n_modes {
            return Err(Error::Config(format!(
                "coefficient vectors must hold {} entries",
                self.n_modes
            )));
        }
        if self.c_lambda.iter().chain(&self.c_phi).any(|c| !(*c > 0.0)) {
            return Err(Error::Config("error coefficients must be positive".to_string()));
        }
        if self.use_shapes && self.use_curvatures {
            return Err(Error::Config(
                "shape and curvature terms cannot both be active".to_string(),
            ));
        }
        Ok(())
    }
}

/// Everything a posterior evaluation needs: prior, forward surrogate, sensor
/// geometry and the likelihood error model.
#[derive(Debug, Clone)]
pub struct InferenceProblem {
    pub prior: PriorSpec,
    pub forward: Arc<SurrogateBundle>,
    /// Sensor indices into the surrogate's stored top-edge rows.
    pub sensor_top_indices: Vec<usize>,
    /// Uniform sensor spacing (required for curvature terms).
    pub sensor_spacing: Option<f64>,
    pub likelihood: LikelihoodConfig,
}

impl InferenceProblem {
    pub fn new(
        prior: PriorSpec,
        forward: Arc<SurrogateBundle>,
        layout: &SensorLayout,
        likelihood: LikelihoodConfig,
    ) -> Result<Self> {
        prior.validate()?;
        likelihood.validate()?;
        if likelihood.n_modes > forward.n_modes() {
            return Err(Error::Config(format!(
                "likelihood uses {} modes but the surrogate stores {}",
                likelihood.n_modes,
                forward.n_modes()
            )));
        }
        Ok(Self {
            prior,
            forward,
            sensor_top_indices: layout.top_indices.clone(),
            sensor_spacing: layout.spacing,
            likelihood,
        })
    }

    pub fn dim(&self) -> usize {
        self.prior.dimension()
    }

    /// Natural → sampling space (log of lognormal components).
    pub fn to_transformed(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.prior.marginals)
            .map(|(&x, m)| match m.family {
                Family::Lognormal => x.ln(),
                Family::Normal => x,
            })
            .collect()
    }

    /// Sampling space → natural.
    pub fn from_transformed(&self, eta: &[f64]) -> Vec<f64> {
        eta.iter()
            .zip(&self.prior.marginals)
            .map(|(&x, m)| match m.family {
                Family::Lognormal => x.exp(),
                Family::Normal => x,
            })
            .collect()
    }

    /// Prior mean and standard deviation of each transformed coordinate
    /// (the transformed prior is exactly Gaussian).
    pub fn transformed_prior_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let mut mean = Vec::with_capacity(self.dim());
        let mut std = Vec::with_capacity(self.dim());
        for m in &self.prior.marginals {
            match m.family {
                Family::Lognormal => {
                    let (mu, sigma) = lognormal_from_mean_cv(m.mean, m.cv).expect("valid prior");
                    mean.push(mu);
                    std.push(sigma);
                }
                Family::Normal => {
                    mean.push(m.mean);
                    std.push(m.std_dev());
                }
            }
        }
        (mean, std)
    }

    /// Log prior density in the sampling space.
    pub fn log_prior_transformed(&self, eta: &[f64]) -> f64 {
        let (mean, std) = self.transformed_prior_moments();
        let mut lp = 0.0;
        for ((x, mu), sigma) in eta.iter().zip(&mean).zip(&std) {
            let z = (x - mu) / sigma;
            lp += -0.5 * z * z - sigma.ln() - 0.5 * 1.8378770664093453;
        }
        lp
    }

    /// Log posterior (up to the evidence constant) in the sampling space;
    /// non-finite forward outputs map to `-inf` so samplers reject them.
    pub fn log_posterior_transformed(&self, eta: &[f64], data: &[ModalDataSet]) -> f64 {
        let theta = self.from_transformed(eta);
        let ll = match log_likelihood_history(self, &theta, data) {
            Ok(v) => v,
            Err(_) => return f64::NEG_INFINITY,
        };
        ll + self.log_prior_transformed(eta)
    }
}

/// Which posterior machinery produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Prior,
    Laplace,
    Mcmc,
}

/// Posterior (or prior) over the deterioration parameters at one data horizon.
#[derive(Debug, Clone)]
pub struct PosteriorResult {
    pub method: Method,
    /// Samples in the natural parameter space, one row per draw.
    pub samples: Vec<Vec<f64>>,
    /// MAP estimate in the natural space (Laplace path).
    pub map: Option<Vec<f64>>,
    /// Gaussian summary in the sampling space: mean and covariance.
    pub mean_t: Vec<f64>,
    pub cov_t: DMatrix<f64>,
    /// Acceptance rate (MCMC path).
    pub acceptance: Option<f64>,
    /// Objective evaluations spent on the MAP search (Laplace path).
    pub optimizer_evals: Option<usize>,
    pub warnings: Vec<String>,
    /// Number of yearly data sets the posterior conditions on.
    pub years_included: usize,
}

impl PosteriorResult {
    pub fn natural_mean(&self) -> Vec<f64> {
        let n = self.samples.len() as f64;
        let d = self.samples[0].len();
        let mut mean = vec![0.0; d];
        for s in &self.samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n;
            }
        }
        mean
    }

    pub fn natural_variances(&self) -> Vec<f64> {
        let mean = self.natural_mean();
        let n = self.samples.len() as f64;
        let d = mean.len();
        let mut var = vec![0.0; d];
        for s in &self.samples {
            for i in 0..d {
                var[i] += (s[i] - mean[i]).powi(2) / (n - 1.0);
            }
        }
        var
    }

    /// Sample covariance of the natural-space draws.
    pub fn natural_cov(&self) -> DMatrix<f64> {
        let mean = self.natural_mean();
        let n = self.samples.len() as f64;
        let d = mean.len();
        let mut cov = DMatrix::zeros(d, d);
        for s in &self.samples {
            for i in 0..d {
                for j in 0..d {
                    cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        cov
    }
}

/// Prior "posterior": i.i.d. draws from the prior itself (zero data years).
pub fn prior_result(problem: &InferenceProblem, n_samples: usize, seed: u64) -> PosteriorResult {
    let samples: Vec<Vec<f64>> = (0..n_samples)
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            problem.prior.sample(&mut rng)
        })
        .collect();
    let (mean_t, std_t) = problem.transformed_prior_moments();
    let d = mean_t.len();
    let mut cov_t = DMatrix::zeros(d, d);
    for i in 0..d {
        cov_t[(i, i)] = std_t[i] * std_t[i];
    }
    PosteriorResult {
        method: Method::Prior,
        samples,
        map: None,
        mean_t,
        cov_t,
        acceptance: None,
        optimizer_evals: None,
        warnings: Vec::new(),
        years_included: 0,
    }
}

/// MAP estimate of the posterior given a data history.
///
/// Runs multi-start Nelder–Mead in the sampling space (warm start plus the
/// prior mean); the reported estimate is mapped back to the natural space.
pub fn map_estimate(
    problem: &InferenceProblem,
    data: &[ModalDataSet],
    init: Option<&[f64]>,
) -> Result<(Vec<f64>, OptResult)> {
    let (prior_mean, prior_std) = problem.transformed_prior_moments();
    let mut starts = Vec::new();
    if let Some(theta0) = init {
        starts.push(problem.to_transformed(theta0));
    }
    starts.push(prior_mean);
    let steps: Vec<f64> = prior_std.iter().map(|s| 0.25 * s).collect();
    let f = |eta: &[f64]| -problem.log_posterior_transformed(eta, data);
    let budget = 4000 * problem.dim();
    let coarse = minimize_multistart(&f, &starts, &steps, 1e-8, budget)?;
    // Refinement pass with locally scaled steps; with warm starts the coarse
    // stage can terminate on a flat ridge one simplex-width away.
    let fine_steps: Vec<f64> = coarse.x.iter().map(|x| 0.02 * (x.abs() + 0.1)).collect();
    let mut best = minimize_multistart(&f, &[coarse.x.clone()], &fine_steps, 1e-10, budget)?;
    best.evals += coarse.evals;
    Ok((problem.from_transformed(&best.x), best))
}

/// Laplace posterior: Gaussian at the MAP with covariance from the inverse
/// Hessian of the negative log-posterior, plus `n_draws` samples from it.
pub fn laplace_posterior(
    problem: &InferenceProblem,
    data: &[ModalDataSet],
    n_draws: usize,
    seed: u64,
    init: Option<&[f64]>,
) -> Result<PosteriorResult> {
    let (map_natural, run) = map_estimate(problem, data, init)?;
    let f = |eta: &[f64]| -problem.log_posterior_transformed(eta, data);
    let (mean, cov) = gaussian_at_mode(f, &problem.to_transformed(&map_natural))?;
    let chol = Cholesky::new(cov.clone())
        .ok_or_else(|| Error::Inference("Laplace covariance not positive definite".to_string()))?;
    let l = chol.l();
    let d = problem.dim();
    let samples: Vec<Vec<f64>> = (0..n_draws)
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
            let eta = &mean + &l * z;
            problem.from_transformed(eta.as_slice())
        })
        .collect();
    Ok(PosteriorResult {
        method: Method::Laplace,
        samples,
        map: Some(map_natural),
        mean_t: mean.as_slice().to_vec(),
        cov_t: cov,
        acceptance: None,
        optimizer_evals: Some(run.evals),
        warnings: Vec::new(),
        years_included: data.len(),
    })
}

/// Adaptive-MCMC posterior given a data history.
pub fn adaptive_mcmc(
    problem: &InferenceProblem,
    data: &[ModalDataSet],
    n_samples: usize,
    seed: u64,
    init: Option<&[f64]>,
    init_cov: Option<&DMatrix<f64>>,
) -> Result<PosteriorResult> {
    let (prior_mean, prior_std) = problem.transformed_prior_moments();
    let d = problem.dim();
    let start = match init {
        Some(theta0) => problem.to_transformed(theta0),
        None => prior_mean.clone(),
    };
    let default_cov = {
        let mut c = DMatrix::zeros(d, d);
        for i in 0..d {
            c[(i, i)] = prior_std[i] * prior_std[i];
        }
        c
    };
    let cov0 = init_cov.unwrap_or(&default_cov);
    let target = |eta: &[f64]| problem.log_posterior_transformed(eta, data);
    let chain = adaptive_metropolis(
        target,
        &start,
        cov0,
        &McmcOptions {
            n_samples,
            ..McmcOptions::default()
        },
        seed,
    )?;
    let samples: Vec<Vec<f64>> = chain
        .samples
        .iter()
        .map(|eta| problem.from_transformed(eta))
        .collect();
    Ok(PosteriorResult {
        method: Method::Mcmc,
        samples,
        map: None,
        mean_t: chain.mean.clone(),
        cov_t: chain.cov.clone(),
        acceptance: Some(chain.acceptance),
        optimizer_evals: None,
        warnings: chain.warnings,
        years_included: data.len(),
    })
}

/// Inference backend selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMethod {
    Laplace,
    Mcmc,
}

/// Posterior per year: year `i` conditions on data sets `1..=i`, recomputed
/// from scratch against the full history and warm-started from year `i − 1`
/// (previous MAP for Laplace, previous chain mean and covariance for MCMC).
///
/// With an empty history this returns the prior draw only. A failing year
/// aborts the sequence; the error reports the year while earlier results are
/// preserved in the partial output.
pub fn sequential_update(
    problem: &InferenceProblem,
    data: &[ModalDataSet],
    method: InferenceMethod,
    n_samples: usize,
    seed: u64,
) -> (Vec<PosteriorResult>, Option<Error>) {
    let mut results = Vec::with_capacity(data.len() + 1);
    if data.is_empty() {
        results.push(prior_result(problem, n_samples, seed));
        return (results, None);
    }
    let mut prev_theta: Option<Vec<f64>> = None;
    let mut prev_cov: Option<DMatrix<f64>> = None;
    for i in 1..=data.len() {
        let year_seed = crate::seeds::splitmix64(seed ^ (i as u64));
        let outcome = match method {
            InferenceMethod::Laplace => {
                laplace_posterior(problem, &data[..i], n_samples, year_seed, prev_theta.as_deref())
            }
            InferenceMethod::Mcmc => adaptive_mcmc(
                problem,
                &data[..i],
                n_samples,
                year_seed,
                prev_theta.as_deref(),
                prev_cov.as_ref(),
            ),
        };
        match outcome {
            Ok(post) => {
                prev_theta = Some(match (&post.map, post.method) {
                    (Some(map), Method::Laplace) => map.clone(),
                    _ => post.natural_mean(),
                });
                prev_cov = Some(post.cov_t.clone());
                results.push(post);
            }
            Err(e) => {
                let err = Error::Inference(format!("year {i}: {e}"));
                return (results, Some(err));
            }
        }
    }
    (results, None)
}
