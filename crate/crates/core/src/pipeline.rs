//! End-to-end campaign glue.
//!
//! A [`StudySetup`] owns the per-case artifacts (surrogate bundle, demand
//! model, capacity curve, sensor layout, likelihood), generates monitoring
//! histories along either data path, and runs the per-sample sequential
//! updating that produces the posterior hazard sequences the decision layer
//! consumes. Samples are processed in parallel; every random stream is keyed
//! by (stage seed, sample index, year), so the outputs are identical no
//! matter how work is scheduled.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{
    adaptive_mcmc, laplace_posterior, prior_result, InferenceMethod, InferenceProblem,
    LikelihoodConfig, PosteriorResult,
};
use crate::decision::{PreposteriorEnsemble, SampleEnsemble};
use crate::deterioration::{evaluate, PriorSpec};
use crate::fe::{build_model, BridgeModel, DamageKind, DamageSpec, MeshConfig};
use crate::reliability::{CapacityCurve, DemandModel};
use crate::seeds::{splitmix64, stream_rng};
use crate::surrogate::{GridSpec, SurrogateBundle};
use crate::vibration::{
    add_noise, curvature, curvature_of, fast_modal_observation, match_modes, simulate_bridge_response,
    ssi_identify, ModalDataSet, SensorLayout, SimulationConfig, SsiConfig,
};
use crate::{Error, Result};

/// How yearly modal data sets are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataPath {
    /// Perturb exact surrogate modal outputs with CoV `c_sim` (default for
    /// Monte Carlo campaigns).
    Fast { c_sim: f64 },
    /// Full chain: response simulation, measurement noise, SSI, mode matching
    /// (default for validation runs).
    Ssi {
        sim: SimulationConfig,
        ssi: SsiConfig,
        noise_ratio: f64,
    },
}

impl DataPath {
    pub fn fast_default() -> Self {
        DataPath::Fast { c_sim: 0.02 }
    }

    pub fn ssi_default() -> Self {
        DataPath::Ssi {
            sim: SimulationConfig::default(),
            ssi: SsiConfig::default(),
            noise_ratio: 0.02,
        }
    }
}

/// Per-case artifacts shared by every stage of a study.
#[derive(Debug, Clone)]
pub struct StudySetup {
    pub kind: DamageKind,
    pub mesh: MeshConfig,
    pub prior: PriorSpec,
    pub layout: SensorLayout,
    pub bundle: Arc<SurrogateBundle>,
    pub demand: DemandModel,
    pub likelihood: LikelihoodConfig,
    pub horizon: usize,
}

impl StudySetup {
    /// Assembles a setup from an already-built surrogate bundle.
    pub fn new(
        kind: DamageKind,
        mesh: MeshConfig,
        prior: PriorSpec,
        layout: SensorLayout,
        bundle: Arc<SurrogateBundle>,
        demand: DemandModel,
        likelihood: LikelihoodConfig,
        horizon: usize,
    ) -> Result<Self> {
        if bundle.kind() != kind {
            return Err(Error::Config(format!(
                "surrogate bundle is for {:?}, study is {:?}",
                bundle.kind(),
                kind
            )));
        }
        if prior.dimension() != 2 * kind.dimension() {
            return Err(Error::Config(format!(
                "prior dimension {} does not match the {:?} case",
                prior.dimension(),
                kind
            )));
        }
        Ok(Self {
            kind,
            mesh,
            prior,
            layout,
            bundle,
            demand,
            likelihood,
            horizon,
        })
    }

    /// Case defaults: scour learns from eigenvalues of 12 sensors, corrosion
    /// from eigenvalues plus curvatures of 24 sensors.
    pub fn default_for(kind: DamageKind, bundle: Arc<SurrogateBundle>) -> Result<Self> {
        let mesh = MeshConfig::default();
        let n_modes = bundle.n_modes();
        let (layout, likelihood) = match kind {
            DamageKind::Scour => (
                SensorLayout::equally_spaced(&mesh, 12)?,
                LikelihoodConfig::eigenvalues_only(n_modes, 0.02),
            ),
            DamageKind::Corrosion => (
                SensorLayout::equally_spaced(&mesh, 24)?,
                LikelihoodConfig::with_curvatures(n_modes, 0.02),
            ),
        };
        Self::new(
            kind,
            mesh,
            PriorSpec::for_case(kind),
            layout,
            bundle,
            DemandModel::calibrate(1e-6, 0.20)?,
            likelihood,
            50,
        )
    }

    /// Builds the FE model and the surrogate bundle from scratch.
    pub fn build_default(kind: DamageKind) -> Result<Self> {
        let mesh = MeshConfig::default();
        let model = build_model(&mesh)?;
        let spec = match kind {
            DamageKind::Scour => GridSpec::scour_default(),
            DamageKind::Corrosion => GridSpec::corrosion_default(),
        };
        let bundle = Arc::new(SurrogateBundle::build(&model, &spec, 4)?);
        Self::default_for(kind, bundle)
    }

    pub fn problem(&self) -> Result<InferenceProblem> {
        InferenceProblem::new(
            self.prior.clone(),
            self.bundle.clone(),
            &self.layout,
            self.likelihood.clone(),
        )
    }

    pub fn capacity(&self) -> Result<CapacityCurve> {
        CapacityCurve::new(self.bundle.clone())
    }

    /// Whether the generated data must carry shapes (and curvatures).
    fn needs_shapes(&self) -> bool {
        self.likelihood.use_shapes || self.likelihood.use_curvatures
    }

    /// One monitoring history (modal data per year) for the given θ.
    ///
    /// The fast path perturbs surrogate outputs (the inverse-crime setup of a
    /// preposterior study); the SSI path runs the full simulation and
    /// identification chain on the FE model.
    pub fn generate_history(
        &self,
        theta: &[f64],
        path: &DataPath,
        model: Option<&BridgeModel>,
        seed: u64,
    ) -> Result<Vec<ModalDataSet>> {
        let n_modes = self.likelihood.n_modes;
        let mut history = Vec::with_capacity(self.horizon);
        for t in 1..=self.horizon {
            let t_years = t as f64;
            let damage = evaluate(theta, t_years)?;
            let year_seed = splitmix64(seed ^ (t as u64).wrapping_mul(0x9e37_79b9));
            let mut ds = match path {
                DataPath::Fast { c_sim } => {
                    let lambdas = self.bundle.lambdas(&damage);
                    let shapes = if self.needs_shapes() {
                        Some(self.bundle.shapes_at(&damage, &self.layout.top_indices))
                    } else {
                        None
                    };
                    let mut rng = stream_rng(year_seed, 0);
                    let mut ds = fast_modal_observation(
                        &lambdas[..n_modes],
                        shapes
                            .as_deref()
                            .filter(|_| self.likelihood.use_shapes)
                            .map(|s| &s[..n_modes]),
                        *c_sim,
                        t_years,
                        &mut rng,
                    );
                    if self.likelihood.use_curvatures {
                        // Perturb exact curvatures with the likelihood's own
                        // error model. Differentiating component-noisy shapes
                        // instead would bury the low-mode curvature signal:
                        // the second difference amplifies white noise, while
                        // real identification errors are spatially smooth.
                        let spacing = self.layout.spacing.ok_or_else(|| {
                            Error::Config(
                                "curvature data requires a uniform sensor layout".to_string(),
                            )
                        })?;
                        let exact =
                            curvature_of(&shapes.as_deref().unwrap()[..n_modes], spacing)?;
                        let noisy: Vec<Vec<f64>> = exact
                            .iter()
                            .map(|k| {
                                let norm = k.iter().map(|x| x * x).sum::<f64>().sqrt();
                                k.iter()
                                    .map(|&x| {
                                        let z: f64 = rand_distr::Distribution::sample(
                                            &rand_distr::StandardNormal,
                                            &mut rng,
                                        );
                                        x + c_sim * norm * z
                                    })
                                    .collect()
                            })
                            .collect();
                        ds.curvatures = Some(noisy);
                    }
                    ds
                }
                DataPath::Ssi {
                    sim,
                    ssi,
                    noise_ratio,
                } => {
                    let base = model.ok_or_else(|| {
                        Error::Config("SSI data path requires the FE model".to_string())
                    })?;
                    let damaged = base.apply_damage(&DamageSpec::from_values(self.kind, &damage))?;
                    let record =
                        simulate_bridge_response(&damaged, &self.layout, sim, n_modes, year_seed)?;
                    let noisy = add_noise(&record, *noise_ratio, splitmix64(year_seed));
                    let raw = ssi_identify(&noisy, ssi)?;
                    let reference = self.bundle.shapes_at(&damage, &self.layout.top_indices);
                    let mut ds = match_modes(&raw, &reference[..n_modes], t_years)?;
                    if self.likelihood.use_curvatures {
                        ds = curvature(&ds, &self.layout)?;
                    }
                    ds
                }
            };
            if !self.likelihood.use_shapes {
                ds.shapes = None;
            }
            history.push(ds);
        }
        Ok(history)
    }

    /// Shared θ sample ensemble with conditional failure curves.
    pub fn sample_ensemble(&self, n: usize, seed: u64) -> Result<SampleEnsemble> {
        let thetas = crate::deterioration::sample_prior(&self.prior, n, seed);
        SampleEnsemble::new(thetas, &self.capacity()?, &self.demand, self.horizon)
    }
}

/// Inference settings of a preposterior campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignInference {
    pub method: InferenceMethod,
    /// Chain length (MCMC) or draw count (Laplace) per year.
    pub n_samples: usize,
    /// Posterior draws used for the reliability update each year.
    pub n_reliability_draws: usize,
}

/// Monitoring-updated hazard and accumulated-probability sequences of one
/// history: entry `i` belongs to year `i + 1` and conditions on data through
/// year `i` (entry 0 is the prior, no data yet).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorHazardSequence {
    /// `h(t_{i+1} | Z_{1:i})`.
    pub hazards: Vec<f64>,
    /// `Pr[F(t_{i+1}) | Z_{1:i}]`.
    pub pf: Vec<f64>,
}

/// Posterior hazard sequence of a single monitoring history.
///
/// `h(t_1)` uses the prior (no data yet); `h(t_i)` for `i >= 2` conditions on
/// data through year `i − 1`, each year re-running inference against the full
/// history so far, warm-started from the previous year.
pub fn posterior_hazard_sequence(
    problem: &InferenceProblem,
    capacity: &CapacityCurve,
    demand: &DemandModel,
    history: &[ModalDataSet],
    horizon: usize,
    inference: &CampaignInference,
    prior_h1: f64,
    seed: u64,
) -> Result<PosteriorHazardSequence> {
    let mut hazards = Vec::with_capacity(horizon);
    let mut pf_out = Vec::with_capacity(horizon);
    hazards.push(prior_h1);
    pf_out.push(prior_h1);
    let mut prev_theta: Option<Vec<f64>> = None;
    let mut prev_cov: Option<nalgebra::DMatrix<f64>> = None;
    for j in 1..horizon {
        let year_seed = splitmix64(seed ^ (j as u64));
        let post = run_inference(problem, &history[..j], inference, year_seed, &prev_theta, &prev_cov)
            .map_err(|e| Error::Inference(format!("data horizon {j}: {e}")))?;
        prev_theta = Some(match (&post.map, post.method) {
            (Some(map), crate::bayes::Method::Laplace) => map.clone(),
            _ => post.natural_mean(),
        });
        prev_cov = Some(post.cov_t.clone());
        // Pr[F(t_j)|Z] and Pr[F(t_{j+1})|Z] from the posterior draws.
        let draws = thin(&post.samples, inference.n_reliability_draws);
        let (mut pf_j, mut pf_j1) = (0.0, 0.0);
        for theta in &draws {
            let curve = crate::reliability::conditional_accumulated(theta, j + 1, capacity, demand);
            pf_j += curve[j - 1];
            pf_j1 += curve[j];
        }
        pf_j /= draws.len() as f64;
        pf_j1 /= draws.len() as f64;
        hazards.push((pf_j1 - pf_j) / (1.0 - pf_j));
        pf_out.push(pf_j1);
    }
    Ok(PosteriorHazardSequence {
        hazards,
        pf: pf_out,
    })
}

fn run_inference(
    problem: &InferenceProblem,
    data: &[ModalDataSet],
    inference: &CampaignInference,
    seed: u64,
    prev_theta: &Option<Vec<f64>>,
    prev_cov: &Option<nalgebra::DMatrix<f64>>,
) -> Result<PosteriorResult> {
    match inference.method {
        InferenceMethod::Laplace => {
            match laplace_posterior(problem, data, inference.n_samples, seed, prev_theta.as_deref())
            {
                Ok(post) => Ok(post),
                // Nearest-neighbour surrogate cells make the posterior locally
                // flat; when the Hessian degenerates at such a MAP, sample the
                // year with the MCMC backend instead.
                Err(Error::Inference(_)) => {
                    let mut post = adaptive_mcmc(
                        problem,
                        data,
                        inference.n_samples,
                        seed,
                        prev_theta.as_deref(),
                        prev_cov.as_ref(),
                    )?;
                    post.warnings
                        .push("laplace degenerate; year sampled by MCMC".to_string());
                    Ok(post)
                }
                Err(e) => Err(e),
            }
        }
        InferenceMethod::Mcmc => adaptive_mcmc(
            problem,
            data,
            inference.n_samples,
            seed,
            prev_theta.as_deref(),
            prev_cov.as_ref(),
        ),
    }
}

fn thin(samples: &[Vec<f64>], target: usize) -> Vec<Vec<f64>> {
    if samples.len() <= target {
        return samples.to_vec();
    }
    let stride = samples.len() as f64 / target as f64;
    (0..target)
        .map(|i| samples[(i as f64 * stride) as usize].clone())
        .collect()
}

/// Full preposterior campaign: one monitoring history and one sequential
/// updating run per θ sample, in parallel, yielding the posterior hazard
/// sequences for the decision analysis.
pub fn preposterior_campaign(
    setup: &StudySetup,
    ensemble: &SampleEnsemble,
    path: &DataPath,
    inference: &CampaignInference,
    seed: u64,
) -> Result<PreposteriorEnsemble> {
    let problem = setup.problem()?;
    let capacity = setup.capacity()?;
    let prior_h1 = ensemble.mean_hazard()[0];
    let model = match path {
        DataPath::Ssi { .. } => Some(build_model(&setup.mesh)?),
        DataPath::Fast { .. } => None,
    };
    let hazards: Vec<Vec<f64>> = ensemble
        .thetas
        .par_iter()
        .enumerate()
        .map(|(k, theta)| -> Result<Vec<f64>> {
            let data_seed = splitmix64(seed ^ 0xda7a ^ (k as u64) << 1);
            let inf_seed = splitmix64(seed ^ 0x1f ^ (k as u64) << 17);
            let history = setup
                .generate_history(theta, path, model.as_ref(), data_seed)
                .map_err(|e| Error::Analysis(format!("sample {k}: {e}")))?;
            posterior_hazard_sequence(
                &problem,
                &capacity,
                &setup.demand,
                &history,
                setup.horizon,
                inference,
                prior_h1,
                inf_seed,
            )
            .map(|seq| seq.hazards)
            .map_err(|e| Error::Analysis(format!("sample {k}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreposteriorEnsemble {
        hazards,
        sample_set_id: ensemble.id,
    })
}

/// Sequential posteriors for one planted-truth history (demonstration runs).
pub fn sequential_demo(
    setup: &StudySetup,
    theta_truth: &[f64],
    path: &DataPath,
    inference: &CampaignInference,
    years: usize,
    seed: u64,
) -> Result<(Vec<ModalDataSet>, Vec<PosteriorResult>)> {
    let model = match path {
        DataPath::Ssi { .. } => Some(build_model(&setup.mesh)?),
        DataPath::Fast { .. } => None,
    };
    let mut setup_y = setup.clone();
    setup_y.horizon = years;
    let history = setup_y.generate_history(theta_truth, path, model.as_ref(), seed)?;
    let problem = setup.problem()?;
    let (results, err) = crate::bayes::sequential_update(
        &problem,
        &history,
        inference.method,
        inference.n_samples,
        splitmix64(seed ^ 0xc0de),
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok((history, results))
}

/// Prior draws as a posterior-shaped result (used when no data is available).
pub fn prior_draws(setup: &StudySetup, n: usize, seed: u64) -> Result<PosteriorResult> {
    Ok(prior_result(&setup.problem()?, n, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::Quantities;
    use std::sync::OnceLock;

    fn small_scour_setup() -> StudySetup {
        static SETUP: OnceLock<StudySetup> = OnceLock::new();
        SETUP
            .get_or_init(|| {
                let mesh = MeshConfig {
                    nx: 50,
                    ny: 2,
                    ..MeshConfig::default()
                };
                let model = build_model(&mesh).unwrap();
                let bundle = Arc::new(
                    SurrogateBundle::build(
                        &model,
                        &GridSpec {
                            kind: DamageKind::Scour,
                            max: 30.0,
                            points: 121,
                            tail_max: None,
                            tail_points: 0,
                            n_modes: 4,
                            quantities: Quantities::default(),
                        },
                        4,
                    )
                    .unwrap(),
                );
                StudySetup::new(
                    DamageKind::Scour,
                    mesh.clone(),
                    PriorSpec::scour(),
                    SensorLayout::equally_spaced(&mesh, 12).unwrap(),
                    bundle,
                    DemandModel::calibrate(1e-6, 0.20).unwrap(),
                    LikelihoodConfig::eigenvalues_only(4, 0.02),
                    20,
                )
                .unwrap()
            })
            .clone()
    }

    #[test]
    fn history_generation_is_deterministic() {
        let setup = small_scour_setup();
        let theta = [9.85e-4, 2.28];
        let path = DataPath::fast_default();
        let a = setup.generate_history(&theta, &path, None, 42).unwrap();
        let b = setup.generate_history(&theta, &path, None, 42).unwrap();
        assert_eq!(a, b);
        let c = setup.generate_history(&theta, &path, None, 43).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.len(), 20);
        for (t, ds) in a.iter().enumerate() {
            assert_eq!(ds.t_years, (t + 1) as f64);
            assert_eq!(ds.n_modes(), 4);
            assert!(ds.shapes.is_none(), "eigenvalue-only study keeps data lean");
        }
    }

    #[test]
    fn preposterior_campaign_runs_and_is_reproducible() {
        let setup = small_scour_setup();
        let ensemble = setup.sample_ensemble(8, 7).unwrap();
        let inference = CampaignInference {
            method: InferenceMethod::Laplace,
            n_samples: 400,
            n_reliability_draws: 400,
        };
        let path = DataPath::fast_default();
        let pre = preposterior_campaign(&setup, &ensemble, &path, &inference, 11).unwrap();
        assert_eq!(pre.hazards.len(), 8);
        for h in &pre.hazards {
            assert_eq!(h.len(), 20);
            assert!(h.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        // Year-1 decisions share the prior hazard.
        let h1 = ensemble.mean_hazard()[0];
        for h in &pre.hazards {
            assert_eq!(h[0], h1);
        }
        let again = preposterior_campaign(&setup, &ensemble, &path, &inference, 11).unwrap();
        assert_eq!(pre.hazards, again.hazards);
    }

    #[test]
    fn informative_sample_repairs_earlier_than_benign_sample() {
        // A fast-deteriorating truth should reach any hazard threshold before
        // a slow one, given the same monitoring machinery.
        let setup = small_scour_setup();
        let mut thetas = vec![vec![5.0e-3, 2.5], vec![2.0e-4, 1.6]];
        let capacity = setup.capacity().unwrap();
        let ensemble = SampleEnsemble::new(
            std::mem::take(&mut thetas),
            &capacity,
            &setup.demand,
            setup.horizon,
        )
        .unwrap();
        let inference = CampaignInference {
            method: InferenceMethod::Laplace,
            n_samples: 500,
            n_reliability_draws: 500,
        };
        let pre =
            preposterior_campaign(&setup, &ensemble, &DataPath::fast_default(), &inference, 3)
                .unwrap();
        let w = 1e-5;
        let fast = crate::decision::repair_time(&pre.hazards[0], w);
        let slow = crate::decision::repair_time(&pre.hazards[1], w);
        match (fast, slow) {
            (Some(tf), Some(ts)) => assert!(tf <= ts, "fast {tf} vs slow {ts}"),
            (Some(_), None) => {}
            (a, b) => panic!("unexpected repair times {a:?} / {b:?}"),
        }
    }
}
