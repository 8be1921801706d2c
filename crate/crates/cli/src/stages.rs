//! Stage orchestration: artifact caching, dependency resolution and table
//! emission.
//!
//! Expensive intermediates (the surrogate bundle, the preposterior hazard
//! matrices) live in `out/cache/` keyed by a hash of exactly the fields that
//! determine them, so cost sweeps do not retrigger FE or inference work.
//! Stage outputs land in `out/<stage>/` with a manifest; a stage whose
//! manifest matches the current configuration is a cache hit and is skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use shm_voi_core::bayes::{sequential_update, InferenceMethod, LikelihoodConfig, Method};
use shm_voi_core::decision::{
    expected_lcc_preposterior, expected_lcc_prior, optimize_w, vppi, LccOutcome,
    PreposteriorEnsemble, SampleEnsemble, ValueEstimate, WGrid,
};
use shm_voi_core::deterioration::{sample_prior, PriorSpec};
use shm_voi_core::fe::{build_model, DamageKind, MeshConfig};
use shm_voi_core::pipeline::{
    posterior_hazard_sequence, preposterior_campaign, CampaignInference, DataPath, StudySetup,
};
use shm_voi_core::reliability::{prior_reliability, DemandModel};
use shm_voi_core::seeds::stage_seed;
use shm_voi_core::surrogate::{GridSpec, Quantities, SurrogateBundle};
use shm_voi_core::vibration::{ModalDataSet, SensorLayout};

use crate::config::{DataPathKind, StudyConfig};
use crate::manifest::{self, RunManifest};
use crate::tables::{money, repair_year, sci, val, write_csv, write_json};
use crate::{CliError, Stage};

pub struct StageContext {
    pub config: StudyConfig,
    pub hash: String,
    pub canonical: String,
    pub emit_plots: bool,
}

impl StageContext {
    pub fn new(config: StudyConfig, emit_plots: bool) -> Self {
        let hash = config.hash();
        let canonical = config.canonical_json();
        Self {
            config,
            hash,
            canonical,
            emit_plots,
        }
    }

    fn out_root(&self) -> PathBuf {
        PathBuf::from(&self.config.output_dir)
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out_root().join(stage.dir_name())
    }

    fn cache_dir(&self) -> PathBuf {
        self.out_root().join("cache")
    }

    fn seed(&self, label: &str) -> u64 {
        stage_seed(self.config.master_seed, label)
    }
}

fn subkey<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("key serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Serialize)]
struct SurrogateKey<'a> {
    case: DamageKind,
    mesh: &'a MeshConfig,
    grid_max: f64,
    grid_points: usize,
    grid_tail_max: Option<f64>,
    grid_tail_points: usize,
    poly_degree: usize,
    n_modes: usize,
}

#[derive(Serialize)]
struct SidecarManifest {
    key: String,
    toolkit_version: String,
    lambda_residuals: Vec<f64>,
    capacity_residuals: Vec<f64>,
}

/// Builds or loads the per-case surrogate bundle.
pub fn ensure_bundle(ctx: &StageContext) -> Result<Arc<SurrogateBundle>, CliError> {
    let c = &ctx.config;
    let key = subkey(&SurrogateKey {
        case: c.case,
        mesh: &c.mesh,
        grid_max: c.grid_max,
        grid_points: c.grid_points,
        grid_tail_max: c.grid_tail_max,
        grid_tail_points: c.grid_tail_points,
        poly_degree: c.poly_degree,
        n_modes: c.n_modes,
    });
    let cache = ctx.cache_dir();
    let bin_path = cache.join("surrogate.bin");
    let sidecar_path = cache.join("surrogate.manifest.json");
    if let Ok(text) = fs::read_to_string(&sidecar_path) {
        let stored_key = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v["key"].as_str().map(String::from));
        if stored_key.as_deref() == Some(key.as_str()) {
            if let Ok(file) = fs::File::open(&bin_path) {
                if let Ok(bundle) = SurrogateBundle::read_binary(std::io::BufReader::new(file)) {
                    return Ok(Arc::new(bundle));
                }
            }
        }
    }
    eprintln!("building {:?} surrogate grid ({} points/axis)...", c.case, c.grid_points);
    let model = build_model(&c.mesh)?;
    let spec = GridSpec {
        kind: c.case,
        max: c.grid_max,
        points: c.grid_points,
        tail_max: c.grid_tail_max,
        tail_points: c.grid_tail_points,
        n_modes: c.n_modes,
        quantities: Quantities::default(),
    };
    let bundle = SurrogateBundle::build(&model, &spec, c.poly_degree)?;
    fs::create_dir_all(&cache)?;
    let file = fs::File::create(&bin_path)?;
    bundle.write_binary(std::io::BufWriter::new(file))?;
    write_json(
        &sidecar_path,
        &SidecarManifest {
            key,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            lambda_residuals: bundle
                .lambda_surfaces
                .iter()
                .map(|s| s.max_rel_residual)
                .collect(),
            capacity_residuals: bundle
                .capacity_surfaces
                .iter()
                .map(|s| s.max_rel_residual)
                .collect(),
        },
    )?;
    Ok(Arc::new(bundle))
}

fn make_setup(ctx: &StageContext, sensor_count: usize) -> Result<StudySetup, CliError> {
    let c = &ctx.config;
    let bundle = ensure_bundle(ctx)?;
    let layout = SensorLayout::equally_spaced(&c.mesh, sensor_count)?;
    let likelihood = LikelihoodConfig {
        c_lambda: vec![c.c_lambda; c.n_modes],
        c_phi: vec![c.c_phi; c.n_modes],
        use_shapes: c.use_shapes,
        use_curvatures: c.use_curvatures,
        n_modes: c.n_modes,
    };
    Ok(StudySetup::new(
        c.case,
        c.mesh.clone(),
        PriorSpec::for_case(c.case),
        layout,
        bundle,
        DemandModel::calibrate(1e-6, 0.20)?,
        likelihood,
        c.horizon,
    )?)
}

fn data_path(ctx: &StageContext) -> DataPath {
    let c = &ctx.config;
    match c.data_path {
        DataPathKind::Fast => DataPath::Fast { c_sim: c.c_sim },
        DataPathKind::Ssi => DataPath::Ssi {
            sim: c.simulation(),
            ssi: c.ssi(),
            noise_ratio: c.noise_ratio,
        },
    }
}

fn campaign_inference(ctx: &StageContext) -> CampaignInference {
    let c = &ctx.config;
    CampaignInference {
        method: c.inference,
        n_samples: c.n_chain,
        n_reliability_draws: c.n_reliability_draws,
    }
}

#[derive(Serialize)]
struct HazardKey<'a> {
    surrogate: String,
    sensor_count: usize,
    c_lambda: f64,
    c_phi: f64,
    use_shapes: bool,
    use_curvatures: bool,
    n_modes: usize,
    data_path: &'a DataPathKind,
    c_sim: f64,
    noise_ratio: f64,
    fs: f64,
    duration: f64,
    damping: f64,
    n_modes_sim: usize,
    ssi_order: usize,
    ssi_block_rows: usize,
    inference: InferenceMethod,
    n_chain: usize,
    n_reliability_draws: usize,
    n_theta: usize,
    horizon: usize,
    master_seed: u64,
}

fn hazard_key(ctx: &StageContext, sensor_count: usize) -> String {
    let c = &ctx.config;
    let surrogate = subkey(&SurrogateKey {
        case: c.case,
        mesh: &c.mesh,
        grid_max: c.grid_max,
        grid_points: c.grid_points,
        grid_tail_max: c.grid_tail_max,
        grid_tail_points: c.grid_tail_points,
        poly_degree: c.poly_degree,
        n_modes: c.n_modes,
    });
    subkey(&HazardKey {
        surrogate,
        sensor_count,
        c_lambda: c.c_lambda,
        c_phi: c.c_phi,
        use_shapes: c.use_shapes,
        use_curvatures: c.use_curvatures,
        n_modes: c.n_modes,
        data_path: &c.data_path,
        c_sim: c.c_sim,
        noise_ratio: c.noise_ratio,
        fs: c.fs,
        duration: c.duration,
        damping: c.damping,
        n_modes_sim: c.n_modes_sim,
        ssi_order: c.ssi_order,
        ssi_block_rows: c.ssi_block_rows,
        inference: c.inference,
        n_chain: c.n_chain,
        n_reliability_draws: c.n_reliability_draws,
        n_theta: c.n_theta,
        horizon: c.horizon,
        master_seed: c.master_seed,
    })
}

/// Shared θ samples (fixed per study seed, used by every decision stage).
fn shared_ensemble(ctx: &StageContext, setup: &StudySetup) -> Result<SampleEnsemble, CliError> {
    Ok(setup.sample_ensemble(ctx.config.n_theta, ctx.seed("theta-samples"))?)
}

/// Runs (or loads) the preposterior campaign for a sensor count.
pub fn ensure_hazards(
    ctx: &StageContext,
    setup: &StudySetup,
    ensemble: &SampleEnsemble,
    sensor_count: usize,
) -> Result<PreposteriorEnsemble, CliError> {
    let key = hazard_key(ctx, sensor_count);
    let path = ctx
        .cache_dir()
        .join(format!("hazards_s{sensor_count}.bin"));
    let key_path = ctx
        .cache_dir()
        .join(format!("hazards_s{sensor_count}.manifest.json"));
    if let Ok(text) = fs::read_to_string(&key_path) {
        let stored: Option<String> = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v["key"].as_str().map(String::from));
        if stored.as_deref() == Some(key.as_str()) {
            if let Ok(bytes) = fs::read(&path) {
                if let Ok(pre) = bincode::deserialize::<PreposteriorEnsemble>(&bytes) {
                    if pre.sample_set_id == ensemble.id {
                        return Ok(pre);
                    }
                }
            }
        }
    }
    eprintln!(
        "running preposterior campaign: {} samples × {} years ({} sensors)...",
        ensemble.thetas.len(),
        ctx.config.horizon,
        sensor_count
    );
    let pre = preposterior_campaign(
        setup,
        ensemble,
        &data_path(ctx),
        &campaign_inference(ctx),
        ctx.seed("preposterior"),
    )?;
    fs::create_dir_all(ctx.cache_dir())?;
    fs::write(
        &path,
        bincode::serialize(&pre).map_err(|e| CliError::Other(e.to_string()))?,
    )?;
    write_json(&key_path, &serde_json::json!({ "key": key }))?;
    Ok(pre)
}

struct StageRun<'a> {
    stage: Stage,
    dir: PathBuf,
    manifest: RunManifest,
    _ctx: std::marker::PhantomData<&'a ()>,
}

impl<'a> StageRun<'a> {
    fn begin(ctx: &'a StageContext, stage: Stage, seeds: &[&str]) -> Result<Option<Self>, CliError> {
        let dir = ctx.stage_dir(stage);
        if manifest::cache_hit(&dir, &ctx.hash, &ctx.canonical)? {
            println!("{}: cache hit, outputs up to date", stage.dir_name());
            return Ok(None);
        }
        let mut stage_seeds = BTreeMap::new();
        for label in seeds {
            stage_seeds.insert((*label).to_string(), ctx.seed(label));
        }
        let manifest = RunManifest::new(
            stage.dir_name(),
            &ctx.hash,
            &ctx.canonical,
            ctx.config.master_seed,
            stage_seeds,
        );
        fs::create_dir_all(&dir)?;
        Ok(Some(Self {
            stage,
            dir,
            manifest,
            _ctx: std::marker::PhantomData,
        }))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) {
        self.manifest.outputs.push(name.to_string());
    }

    fn finish(mut self, cache_hits: Vec<String>) -> Result<(), CliError> {
        self.manifest.cache_hits = cache_hits;
        manifest::write(&self.dir, &self.manifest)?;
        println!("{}: done → {}", self.stage.dir_name(), self.dir.display());
        Ok(())
    }
}

pub fn run_stage(stage: Stage, ctx: &StageContext) -> Result<(), CliError> {
    match stage {
        Stage::BuildSurrogate => stage_build_surrogate(ctx),
        Stage::SimulateData => stage_simulate_data(ctx),
        Stage::Update => stage_update(ctx),
        Stage::Reliability => stage_reliability(ctx),
        Stage::LccPrior => stage_lcc_prior(ctx),
        Stage::LccPreposterior => stage_lcc_preposterior(ctx),
        Stage::Voi => stage_voi(ctx),
        Stage::Vppi => stage_vppi(ctx),
        Stage::SensorStudy => stage_sensor_study(ctx),
    }
}

fn stage_build_surrogate(ctx: &StageContext) -> Result<(), CliError> {
    let Some(mut run) = StageRun::begin(ctx, Stage::BuildSurrogate, &[])? else {
        return Ok(());
    };
    let bundle = ensure_bundle(ctx)?;
    #[derive(Serialize)]
    struct Diag {
        case: DamageKind,
        grid_points: usize,
        n_modes: usize,
        lambda_residuals: Vec<f64>,
        capacity_residuals: Vec<f64>,
        lambda_range_mode1: (f64, f64),
    }
    let l1: Vec<f64> = bundle.table.lambdas.iter().map(|l| l[0]).collect();
    let diag = Diag {
        case: ctx.config.case,
        grid_points: ctx.config.grid_points,
        n_modes: ctx.config.n_modes,
        lambda_residuals: bundle
            .lambda_surfaces
            .iter()
            .map(|s| s.max_rel_residual)
            .collect(),
        capacity_residuals: bundle
            .capacity_surfaces
            .iter()
            .map(|s| s.max_rel_residual)
            .collect(),
        lambda_range_mode1: (
            l1.iter().copied().fold(f64::INFINITY, f64::min),
            l1.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
    };
    write_json(&run.path("diagnostics.json"), &diag)?;
    run.record("diagnostics.json");
    if ctx.emit_plots {
        let mut rows = Vec::new();
        for p in 0..bundle.table.n_points() {
            let coords = bundle.table.point_coords(p);
            let mut row: Vec<String> = coords.iter().map(|v| val(*v)).collect();
            row.push(val(bundle.table.capacity[p]));
            rows.push(row);
        }
        let header: Vec<&str> = match ctx.config.case {
            DamageKind::Scour => vec!["damage", "capacity"],
            DamageKind::Corrosion => vec!["damage_1", "damage_2", "capacity"],
        };
        write_csv(&run.path("capacity_curve.csv"), &header, &rows)?;
        run.record("capacity_curve.csv");
    }
    run.finish(vec!["surrogate".to_string()])
}

fn history_path(ctx: &StageContext) -> PathBuf {
    ctx.stage_dir(Stage::SimulateData).join("history.jsonl")
}

/// Loads the planted-truth history, regenerating it if needed.
fn ensure_history(ctx: &StageContext) -> Result<Vec<ModalDataSet>, CliError> {
    let path = history_path(ctx);
    if manifest::cache_hit(&ctx.stage_dir(Stage::SimulateData), &ctx.hash, &ctx.canonical)? {
        let file = fs::File::open(&path)?;
        return Ok(ModalDataSet::read_history(std::io::BufReader::new(file))?);
    }
    stage_simulate_data(ctx)?;
    let file = fs::File::open(&path)?;
    Ok(ModalDataSet::read_history(std::io::BufReader::new(file))?)
}

fn stage_simulate_data(ctx: &StageContext) -> Result<(), CliError> {
    let Some(mut run) = StageRun::begin(ctx, Stage::SimulateData, &["simulate-data"])? else {
        return Ok(());
    };
    let c = &ctx.config;
    let setup = make_setup(ctx, c.sensor_count)?;
    let path = data_path(ctx);
    let model = match c.data_path {
        DataPathKind::Ssi => Some(build_model(&c.mesh)?),
        DataPathKind::Fast => None,
    };
    let seed = ctx.seed("simulate-data");
    let history = setup.generate_history(&c.truth, &path, model.as_ref(), seed)?;
    let mut buf = Vec::new();
    ModalDataSet::write_history(&history, &mut buf)?;
    fs::write(run.path("history.jsonl"), buf)?;
    run.record("history.jsonl");
    // On the full chain, keep the first year's raw record for inspection.
    if let (DataPathKind::Ssi, Some(model)) = (c.data_path, model.as_ref()) {
        let damage = shm_voi_core::deterioration::evaluate(&c.truth, 1.0)?;
        let damaged = model.apply_damage(&shm_voi_core::fe::DamageSpec::from_values(
            c.case, &damage,
        ))?;
        let year_seed = shm_voi_core::seeds::splitmix64(seed ^ 1u64.wrapping_mul(0x9e37_79b9));
        let record = shm_voi_core::vibration::simulate_bridge_response(
            &damaged,
            &setup.layout,
            &c.simulation(),
            c.n_modes,
            year_seed,
        )?;
        let noisy = shm_voi_core::vibration::add_noise(
            &record,
            c.noise_ratio,
            shm_voi_core::seeds::splitmix64(year_seed),
        );
        let file = fs::File::create(run.path("record_year01.accel"))?;
        noisy.write_binary(std::io::BufWriter::new(file))?;
        run.record("record_year01.accel");
    }
    run.finish(Vec::new())
}

fn theta_header(case: DamageKind) -> Vec<&'static str> {
    match case {
        DamageKind::Scour => vec!["A", "B"],
        DamageKind::Corrosion => vec!["A1", "B1", "A2", "B2"],
    }
}

fn stage_update(ctx: &StageContext) -> Result<(), CliError> {
    let Some(mut run) = StageRun::begin(ctx, Stage::Update, &["update", "simulate-data"])? else {
        return Ok(());
    };
    let c = &ctx.config;
    let setup = make_setup(ctx, c.sensor_count)?;
    let history = ensure_history(ctx)?;
    let problem = setup.problem()?;
    let (results, err) = sequential_update(
        &problem,
        &history,
        c.inference,
        c.n_chain,
        ctx.seed("update"),
    );
    if let Some(e) = err {
        return Err(e.into());
    }
    let names = theta_header(c.case);
    let mut header = vec!["year".to_string()];
    for n in &names {
        header.push(format!("mean_{n}"));
        header.push(format!("std_{n}"));
    }
    header.push("acceptance".to_string());
    let mut rows = Vec::new();
    for (i, post) in results.iter().enumerate() {
        let mean = post.natural_mean();
        let variance = post.natural_variances();
        let mut row = vec![(i + 1).to_string()];
        for d in 0..mean.len() {
            row.push(sci(mean[d]));
            row.push(sci(variance[d].sqrt()));
        }
        row.push(match post.acceptance {
            Some(a) => val(a),
            None => "-".to_string(),
        });
        rows.push(row);
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&run.path("posterior_summary.csv"), &header_refs, &rows)?;
    run.record("posterior_summary.csv");

    for checkpoint in [10usize, 25, c.horizon] {
        if checkpoint == 0 || checkpoint > results.len() {
            continue;
        }
        let post = &results[checkpoint - 1];
        let rows: Vec<Vec<String>> = post
            .samples
            .iter()
            .map(|s| s.iter().map(|v| sci(*v)).collect())
            .collect();
        let file = format!("posterior_samples_y{checkpoint}.csv");
        write_csv(&run.path(&file), &names, &rows)?;
        run.record(&file);
    }

    #[derive(Serialize)]
    struct UpdateDiag {
        method: Method,
        years: usize,
        acceptance: Vec<Option<f64>>,
        optimizer_evals: Vec<Option<usize>>,
        warnings: Vec<Vec<String>>,
    }
    write_json(
        &run.path("diagnostics.json"),
        &UpdateDiag {
            method: results[0].method,
            years: results.len(),
            acceptance: results.iter().map(|r| r.acceptance).collect(),
            optimizer_evals: results.iter().map(|r| r.optimizer_evals).collect(),
            warnings: results.iter().map(|r| r.warnings.clone()).collect(),
        },
    )?;
    run.record("diagnostics.json");
    run.finish(vec!["simulate-data".to_string()])
}

fn stage_reliability(ctx: &StageContext) -> Result<(), CliError> {
    let Some(mut run) = StageRun::begin(
        ctx,
        Stage::Reliability,
        &["prior-mcs", "reliability-posterior", "simulate-data"],
    )?
    else {
        return Ok(());
    };
    let c = &ctx.config;
    let setup = make_setup(ctx, c.sensor_count)?;
    let capacity = setup.capacity()?;

    // Prior curve with credible bands.
    let prior_samples = sample_prior(&setup.prior, c.n_prior_mcs, ctx.seed("prior-mcs"));
    let prior_curve = prior_reliability(&prior_samples, &capacity, &setup.demand, c.horizon)?;
    let rows: Vec<Vec<String>> = prior_curve
        .years
        .iter()
        .enumerate()
        .map(|(i, y)| {
            vec![
                y.to_string(),
                sci(prior_curve.pf[i]),
                sci(prior_curve.hazard[i]),
                sci(prior_curve.band_lo.as_ref().unwrap()[i]),
                sci(prior_curve.band_hi.as_ref().unwrap()[i]),
            ]
        })
        .collect();
    write_csv(
        &run.path("prior_curve.csv"),
        &["year", "pf", "hazard", "band_lo", "band_hi"],
        &rows,
    )?;
    run.record("prior_curve.csv");

    // Posterior sequence along the planted-truth history.
    let history = ensure_history(ctx)?;
    let problem = setup.problem()?;
    let ensemble = shared_ensemble(ctx, &setup)?;
    let seq = posterior_hazard_sequence(
        &problem,
        &capacity,
        &setup.demand,
        &history,
        c.horizon,
        &campaign_inference(ctx),
        ensemble.mean_hazard()[0],
        ctx.seed("reliability-posterior"),
    )?;
    let rows: Vec<Vec<String>> = (0..seq.hazards.len())
        .map(|i| {
            vec![
                (i + 1).to_string(),
                sci(seq.pf[i]),
                sci(seq.hazards[i]),
            ]
        })
        .collect();
    write_csv(
        &run.path("posterior_curve.csv"),
        &["year", "pf_given_past", "hazard_given_past"],
        &rows,
    )?;
    run.record("posterior_curve.csv");

    if ctx.emit_plots {
        // Prior deterioration fan for hotspot 1.
        let mut rows = Vec::new();
        for t in 1..=c.horizon {
            let mut ds: Vec<f64> = prior_samples
                .iter()
                .map(|th| shm_voi_core::deterioration::evaluate(th, t as f64).unwrap()[0])
                .collect();
            ds.sort_by(f64::total_cmp);
            let q = |p: f64| ds[((ds.len() - 1) as f64 * p) as usize];
            rows.push(vec![
                t.to_string(),
                sci(q(0.05)),
                sci(q(0.25)),
                sci(q(0.5)),
                sci(q(0.75)),
                sci(q(0.95)),
            ]);
        }
        write_csv(
            &run.path("deterioration_fan.csv"),
            &["year", "q05", "q25", "q50", "q75", "q95"],
            &rows,
        )?;
        run.record("deterioration_fan.csv");
    }
    run.finish(vec!["simulate-data".to_string()])
}

fn wgrid(ctx: &StageContext) -> Result<WGrid, CliError> {
    Ok(WGrid::logarithmic(
        ctx.config.w_min,
        ctx.config.w_max,
        ctx.config.w_count,
    )?)
}

fn cost_model(ctx: &StageContext, ratio: f64) -> shm_voi_core::decision::CostModel {
    shm_voi_core::decision::CostModel {
        c_f: ctx.config.c_f,
        c_r: ratio * ctx.config.c_f,
        discount_rate: ctx.config.discount_rate,
        horizon: ctx.config.horizon,
    }
}

fn prior_optimum(
    ctx: &StageContext,
    ensemble: &SampleEnsemble,
    ratio: f64,
) -> Result<(f64, LccOutcome), CliError> {
    let grid = wgrid(ctx)?;
    let cost = cost_model(ctx, ratio);
    let hazard = ensemble.mean_hazard();
    Ok(optimize_w(&grid, |w| {
        Ok(expected_lcc_prior(ensemble, &hazard, &cost, w))
    })?)
}

fn stage_lcc_prior(ctx: &StageContext) -> Result<(), CliError> {
    let Some(mut run) = StageRun::begin(ctx, Stage::LccPrior, &["theta-samples"])? else {
        return Ok(());
    };
    let setup = make_setup(ctx, ctx.config.sensor_count)?;
    let ensemble = shared_ensemble(ctx, &setup)?;
    let mut rows = Vec::new();
    for &ratio in &ctx.config.cost_ratios {
        let (w_star, out) = prior_optimum(ctx, &ensemble, ratio)?;
        rows.push(vec![
            sci(ratio),
            sci(w_star),
            money(out.expected_total),
            repair_year(out.t_repair),
            money(out.expected_repair),
            money(out.expected_risk),
            val(out.cv),
        ]);
        if ctx.emit_plots {
            let grid = wgrid(ctx)?;
            let cost = cost_model(ctx, ratio);
            let hazard = ensemble.mean_hazard();
            let plot_rows: Vec<Vec<String>> = grid
                .values
                .iter()
                .map(|&w| {
                    let o = expected_lcc_prior(&ensemble, &hazard, &cost, w);
                    vec![
                        sci(w),
                        money(o.expected_total),
                        money(o.expected_repair),
                        money(o.expected_risk),
                    ]
                })
                .collect();
            let name = format!("cost_vs_w_ratio_{}.csv", sci(ratio));
            write_csv(
                &run.path(&name),
                &["w", "expected_total", "expected_repair", "expected_risk"],
                &plot_rows,
            )?;
            run.record(&name);
        }
    }
    write_csv(
        &run.path("table.csv"),
        &[
            "cost_ratio",
            "w_star",
            "expected_total",
            "t_repair",
            "expected_repair",
            "expected_risk",
            "cv",
        ],
        &rows,
    )?;
    run.record("table.csv");
    run.finish(Vec::new())
}

fn stage_lcc_preposterior(ctx: &StageContext) -> Result<(), CliError> {
    let Some(mut run) =
        StageRun::begin(ctx, Stage::LccPreposterior, &["theta-samples", "preposterior"])?
    else {
        return Ok(());
    };
    let setup = make_setup(ctx, ctx.config.sensor_count)?;
    let ensemble = shared_ensemble(ctx, &setup)?;
    let pre = ensure_hazards(ctx, &setup, &ensemble, ctx.config.sensor_count)?;
    let grid = wgrid(ctx)?;
    let mut rows = Vec::new();
    for &ratio in &ctx.config.cost_ratios {
        let cost = cost_model(ctx, ratio);
        let (w_star, out) = optimize_w(&grid, |w| {
            Ok(expected_lcc_preposterior(&ensemble, &pre, &cost, w)?)
        })?;
        rows.push(vec![
            sci(ratio),
            sci(w_star),
            money(out.expected_total),
            money(out.expected_repair),
            money(out.expected_risk),
            val(out.cv),
        ]);
    }
    write_csv(
        &run.path("table.csv"),
        &[
            "cost_ratio",
            "w_star_mon",
            "expected_total",
            "expected_repair",
            "expected_risk",
            "cv",
        ],
        &rows,
    )?;
    run.record("table.csv");
    run.finish(vec!["preposterior-hazards".to_string()])
}

fn stage_voi(ctx: &StageContext) -> Result<(), CliError> {
    let Some(mut run) = StageRun::begin(ctx, Stage::Voi, &["theta-samples", "preposterior"])?
    else {
        return Ok(());
    };
    let setup = make_setup(ctx, ctx.config.sensor_count)?;
    let ensemble = shared_ensemble(ctx, &setup)?;
    let pre = ensure_hazards(ctx, &setup, &ensemble, ctx.config.sensor_count)?;
    let grid = wgrid(ctx)?;
    let mut rows = Vec::new();
    #[derive(Serialize)]
    struct VoiRow {
        cost_ratio: f64,
        w0_star: f64,
        prior_total: f64,
        w_mon_star: f64,
        preposterior_total: f64,
        voi: f64,
        cv: f64,
    }
    let mut json_rows = Vec::new();
    for &ratio in &ctx.config.cost_ratios {
        let cost = cost_model(ctx, ratio);
        let (w0, prior_opt) = prior_optimum(ctx, &ensemble, ratio)?;
        let (w_mon, pre_opt) = optimize_w(&grid, |w| {
            Ok(expected_lcc_preposterior(&ensemble, &pre, &cost, w)?)
        })?;
        let estimate = shm_voi_core::decision::voi(&prior_opt, &pre_opt)?;
        rows.push(vec![
            sci(ratio),
            sci(w0),
            money(prior_opt.expected_total),
            sci(w_mon),
            money(pre_opt.expected_total),
            money(estimate.value),
            val(estimate.cv),
        ]);
        json_rows.push(VoiRow {
            cost_ratio: ratio,
            w0_star: w0,
            prior_total: prior_opt.expected_total,
            w_mon_star: w_mon,
            preposterior_total: pre_opt.expected_total,
            voi: estimate.value,
            cv: estimate.cv,
        });
    }
    write_csv(
        &run.path("voi.csv"),
        &[
            "cost_ratio",
            "w0_star",
            "prior_total",
            "w_mon_star",
            "preposterior_total",
            "voi",
            "cv",
        ],
        &rows,
    )?;
    run.record("voi.csv");
    write_json(&run.path("voi.json"), &json_rows)?;
    run.record("voi.json");
    run.finish(vec!["preposterior-hazards".to_string()])
}

fn stage_vppi(ctx: &StageContext) -> Result<(), CliError> {
    let Some(mut run) = StageRun::begin(ctx, Stage::Vppi, &["theta-samples"])? else {
        return Ok(());
    };
    let setup = make_setup(ctx, ctx.config.sensor_count)?;
    let ensemble = shared_ensemble(ctx, &setup)?;
    let grid = wgrid(ctx)?;
    let mut rows = Vec::new();
    for &ratio in &ctx.config.cost_ratios {
        let cost = cost_model(ctx, ratio);
        let (_, prior_opt) = prior_optimum(ctx, &ensemble, ratio)?;
        let estimate: ValueEstimate = vppi(&ensemble, &cost, &grid, &prior_opt)?;
        rows.push(vec![sci(ratio), money(estimate.value), val(estimate.cv)]);
    }
    write_csv(&run.path("vppi.csv"), &["cost_ratio", "vppi", "cv"], &rows)?;
    run.record("vppi.csv");
    run.finish(Vec::new())
}

fn stage_sensor_study(ctx: &StageContext) -> Result<(), CliError> {
    let Some(mut run) =
        StageRun::begin(ctx, Stage::SensorStudy, &["theta-samples", "preposterior"])?
    else {
        return Ok(());
    };
    let c = &ctx.config;
    let ratio = c.sensor_study_c_r / c.c_f;
    let cost = cost_model(ctx, ratio);
    let grid = wgrid(ctx)?;

    // The prior analysis and the VPPI do not depend on the sensor layout.
    let base_setup = make_setup(ctx, c.sensor_count)?;
    let ensemble = shared_ensemble(ctx, &base_setup)?;
    let (w0, prior_opt) = prior_optimum(ctx, &ensemble, ratio)?;
    let vppi_est = vppi(&ensemble, &cost, &grid, &prior_opt)?;

    let mut rows = Vec::new();
    for &count in &c.sensor_study_counts {
        let setup = make_setup(ctx, count)?;
        let pre = ensure_hazards(ctx, &setup, &ensemble, count)?;
        let (w_mon, pre_opt) = optimize_w(&grid, |w| {
            Ok(expected_lcc_preposterior(&ensemble, &pre, &cost, w)?)
        })?;
        let estimate = shm_voi_core::decision::voi(&prior_opt, &pre_opt)?;
        rows.push(vec![
            count.to_string(),
            sci(w_mon),
            money(pre_opt.expected_total),
            money(estimate.value),
            val(estimate.cv),
            val(estimate.value / vppi_est.value.max(f64::MIN_POSITIVE)),
        ]);
    }
    write_csv(
        &run.path("table.csv"),
        &["sensors", "w_mon_star", "preposterior_total", "voi", "cv", "voi_over_vppi"],
        &rows,
    )?;
    run.record("table.csv");
    #[derive(Serialize)]
    struct PriorBlock {
        w0_star: f64,
        t_repair: Option<usize>,
        prior_total: f64,
        vppi: f64,
        vppi_cv: f64,
    }
    write_json(
        &run.path("prior.json"),
        &PriorBlock {
            w0_star: w0,
            t_repair: prior_opt.t_repair,
            prior_total: prior_opt.expected_total,
            vppi: vppi_est.value,
            vppi_cv: vppi_est.cv,
        },
    )?;
    run.record("prior.json");
    run.finish(Vec::new())
}
