//! Study configuration: TOML schema, defaulting, validation and hashing.
//!
//! Every field is optional in the file; an empty document yields the fully
//! defaulted scour study. Case-dependent defaults (sensor count, likelihood
//! terms, inference backend, planted truth) are resolved during
//! normalization, and the canonical JSON encoding of the normalized form is
//! hashed so caches can tell configurations apart regardless of how the TOML
//! was formatted.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shm_voi_core::bayes::InferenceMethod;
use shm_voi_core::fe::{build_model, DamageKind, MeshConfig};
use shm_voi_core::vibration::{SensorLayout, SimulationConfig, SsiConfig};

use crate::CliError;

/// Scale preset: desk keeps Monte Carlo campaigns laptop-sized; paper uses
/// the sample counts of the original study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

/// Data-generation path for monitoring histories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataPathKind {
    Fast,
    Ssi,
}

/// Raw file schema: everything optional, unknown keys rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub case: Option<DamageKind>,
    pub master_seed: Option<u64>,
    pub scale: Option<Scale>,
    pub output_dir: Option<String>,
    pub data_path: Option<DataPathKind>,
    pub inference: Option<InferenceMethod>,
    pub horizon: Option<usize>,
    pub mesh: Option<MeshConfig>,
    #[serde(default)]
    pub sensors: RawSensors,
    #[serde(default)]
    pub likelihood: RawLikelihood,
    #[serde(default)]
    pub samples: RawSamples,
    #[serde(default)]
    pub vibration: RawVibration,
    #[serde(default)]
    pub costs: RawCosts,
    #[serde(default)]
    pub wgrid: RawWGrid,
    #[serde(default)]
    pub surrogate: RawSurrogate,
    #[serde(default)]
    pub truth: RawTruth,
    #[serde(default)]
    pub sensor_study: RawSensorStudy,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSensors {
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLikelihood {
    pub c_lambda: Option<f64>,
    pub c_phi: Option<f64>,
    pub use_shapes: Option<bool>,
    pub use_curvatures: Option<bool>,
    pub n_modes: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSamples {
    pub n_theta: Option<usize>,
    pub n_chain: Option<usize>,
    pub n_reliability_draws: Option<usize>,
    pub n_prior_mcs: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawVibration {
    pub fs: Option<f64>,
    pub duration: Option<f64>,
    pub damping: Option<f64>,
    pub n_modes_sim: Option<usize>,
    pub amplitude: Option<f64>,
    pub noise_ratio: Option<f64>,
    pub c_sim: Option<f64>,
    pub ssi_order: Option<usize>,
    pub ssi_block_rows: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCosts {
    pub c_f: Option<f64>,
    pub ratios: Option<Vec<f64>>,
    pub discount_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawWGrid {
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSurrogate {
    pub scour_max: Option<f64>,
    pub scour_points: Option<usize>,
    pub scour_tail_max: Option<f64>,
    pub scour_tail_points: Option<usize>,
    pub corrosion_max: Option<f64>,
    pub corrosion_points: Option<usize>,
    pub poly_degree: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTruth {
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSensorStudy {
    pub counts: Option<Vec<usize>>,
    pub c_r: Option<f64>,
}

/// Fully resolved configuration; field order defines the canonical encoding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub case: DamageKind,
    pub master_seed: u64,
    pub scale: Scale,
    pub output_dir: String,
    pub data_path: DataPathKind,
    pub inference: InferenceMethod,
    pub horizon: usize,
    pub mesh: MeshConfig,
    pub sensor_count: usize,
    pub c_lambda: f64,
    pub c_phi: f64,
    pub use_shapes: bool,
    pub use_curvatures: bool,
    pub n_modes: usize,
    pub n_theta: usize,
    pub n_chain: usize,
    pub n_reliability_draws: usize,
    pub n_prior_mcs: usize,
    pub fs: f64,
    pub duration: f64,
    pub damping: f64,
    pub n_modes_sim: usize,
    pub amplitude: f64,
    pub noise_ratio: f64,
    pub c_sim: f64,
    pub ssi_order: usize,
    pub ssi_block_rows: usize,
    pub c_f: f64,
    pub cost_ratios: Vec<f64>,
    pub discount_rate: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub w_count: usize,
    pub grid_max: f64,
    pub grid_points: usize,
    pub grid_tail_max: Option<f64>,
    pub grid_tail_points: usize,
    pub poly_degree: usize,
    pub truth: Vec<f64>,
    pub sensor_study_counts: Vec<usize>,
    pub sensor_study_c_r: f64,
}

impl StudyConfig {
    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            fs: self.fs,
            duration: self.duration,
            damping: self.damping,
            n_modes_sim: self.n_modes_sim,
            amplitude: self.amplitude,
        }
    }

    pub fn ssi(&self) -> SsiConfig {
        SsiConfig {
            order: self.ssi_order,
            block_rows: self.ssi_block_rows,
            min_modes: self.n_modes,
            max_damping: 0.2,
        }
    }

    /// Canonical SHA-256 of the normalized configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_string(&hasher.finalize())
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses, defaults, cross-validates and hashes a configuration document.
/// CLI overrides are applied before normalization so they take part in the
/// hash.
pub fn validate_config(
    text: &str,
    seed_override: Option<u64>,
    scale_override: Option<Scale>,
) -> Result<StudyConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    normalize(raw, seed_override, scale_override)
}

pub fn normalize(
    raw: RawConfig,
    seed_override: Option<u64>,
    scale_override: Option<Scale>,
) -> Result<StudyConfig, CliError> {
    let case = raw.case.unwrap_or(DamageKind::Scour);
    let scale = scale_override.or(raw.scale).unwrap_or(Scale::Desk);
    let paper_scale = scale == Scale::Paper;

    let (default_sensors, default_curvatures, default_inference, default_truth, paper_n_theta) =
        match case {
            DamageKind::Scour => (
                12usize,
                false,
                InferenceMethod::Mcmc,
                vec![9.85e-4, 2.28],
                1000usize,
            ),
            DamageKind::Corrosion => (
                24,
                true,
                InferenceMethod::Laplace,
                vec![0.65, 0.55, 0.42, 0.48],
                2000,
            ),
        };

    let mesh = raw.mesh.unwrap_or_default();
    mesh.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let inference = raw.inference.unwrap_or(default_inference);
    let n_reliability_default = match (inference, paper_scale) {
        (InferenceMethod::Laplace, true) => 10_000,
        (InferenceMethod::Laplace, false) => 2_000,
        (InferenceMethod::Mcmc, _) => 2_000,
    };

    let config = StudyConfig {
        case,
        master_seed: seed_override.or(raw.master_seed).unwrap_or(20_260_810),
        scale,
        output_dir: raw.output_dir.unwrap_or_else(|| "out".to_string()),
        data_path: raw.data_path.unwrap_or(DataPathKind::Fast),
        inference,
        horizon: raw.horizon.unwrap_or(50),
        mesh,
        sensor_count: raw.sensors.count.unwrap_or(default_sensors),
        c_lambda: raw.likelihood.c_lambda.unwrap_or(0.02),
        c_phi: raw.likelihood.c_phi.unwrap_or(0.02),
        use_shapes: raw.likelihood.use_shapes.unwrap_or(false),
        use_curvatures: raw.likelihood.use_curvatures.unwrap_or(default_curvatures),
        n_modes: raw.likelihood.n_modes.unwrap_or(6),
        n_theta: raw
            .samples
            .n_theta
            .unwrap_or(if paper_scale { paper_n_theta } else { 200 }),
        n_chain: raw.samples.n_chain.unwrap_or(5000),
        n_reliability_draws: raw
            .samples
            .n_reliability_draws
            .unwrap_or(n_reliability_default),
        n_prior_mcs: raw.samples.n_prior_mcs.unwrap_or(10_000),
        fs: raw.vibration.fs.unwrap_or(256.0),
        duration: raw.vibration.duration.unwrap_or(600.0),
        damping: raw.vibration.damping.unwrap_or(0.02),
        n_modes_sim: raw.vibration.n_modes_sim.unwrap_or(12),
        amplitude: raw.vibration.amplitude.unwrap_or(1.0),
        noise_ratio: raw.vibration.noise_ratio.unwrap_or(0.02),
        c_sim: raw.vibration.c_sim.unwrap_or(0.02),
        ssi_order: raw.vibration.ssi_order.unwrap_or(24),
        ssi_block_rows: raw.vibration.ssi_block_rows.unwrap_or(40),
        c_f: raw.costs.c_f.unwrap_or(1e7),
        cost_ratios: raw.costs.ratios.unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3]),
        discount_rate: raw.costs.discount_rate.unwrap_or(0.02),
        w_min: raw.wgrid.min.unwrap_or(1e-6),
        w_max: raw.wgrid.max.unwrap_or(1e-1),
        w_count: raw.wgrid.count.unwrap_or(200),
        grid_max: match case {
            DamageKind::Scour => raw.surrogate.scour_max.unwrap_or(30.0),
            DamageKind::Corrosion => raw.surrogate.corrosion_max.unwrap_or(12.0),
        },
        grid_points: match case {
            DamageKind::Scour => raw.surrogate.scour_points.unwrap_or(301),
            DamageKind::Corrosion => raw.surrogate.corrosion_points.unwrap_or(61),
        },
        grid_tail_max: match case {
            DamageKind::Scour => Some(raw.surrogate.scour_tail_max.unwrap_or(300.0)),
            DamageKind::Corrosion => None,
        },
        grid_tail_points: match case {
            DamageKind::Scour => raw.surrogate.scour_tail_points.unwrap_or(108),
            DamageKind::Corrosion => 0,
        },
        poly_degree: raw.surrogate.poly_degree.unwrap_or(4),
        truth: raw.truth.theta.unwrap_or(default_truth),
        sensor_study_counts: raw.sensor_study.counts.unwrap_or_else(|| vec![24, 12]),
        sensor_study_c_r: raw.sensor_study.c_r.unwrap_or(3.5e4),
    };
    cross_validate(&config)?;
    Ok(config)
}

fn cross_validate(c: &StudyConfig) -> Result<(), CliError> {
    let fail = |msg: String| Err(CliError::Config(msg));
    if c.truth.len() != 2 * c.case.dimension() {
        return fail(format!(
            "truth.theta: expected {} entries for the {:?} case, got {}",
            2 * c.case.dimension(),
            c.case,
            c.truth.len()
        ));
    }
    if c.horizon == 0 || c.horizon > 200 {
        return fail(format!("horizon: {} years is outside (0, 200]", c.horizon));
    }
    if c.n_theta < 2 {
        return fail(format!("samples.n_theta: need at least 2, got {}", c.n_theta));
    }
    if c.n_chain < 1000 {
        return fail(format!(
            "samples.n_chain: inference needs at least 1000 samples, got {}",
            c.n_chain
        ));
    }
    if !(c.c_lambda > 0.0 && c.c_phi > 0.0) {
        return fail("likelihood: error coefficients must be positive".to_string());
    }
    if c.use_shapes && c.use_curvatures {
        return fail("likelihood: use_shapes and use_curvatures are mutually exclusive".to_string());
    }
    if c.n_modes == 0 || c.n_modes > c.n_modes_sim {
        return fail(format!(
            "likelihood.n_modes ({}) must lie in [1, vibration.n_modes_sim = {}]",
            c.n_modes, c.n_modes_sim
        ));
    }
    if c.ssi_order % 2 != 0 || c.ssi_order < 2 * c.n_modes {
        return fail(format!(
            "vibration.ssi_order ({}) must be even and at least twice n_modes ({})",
            c.ssi_order, c.n_modes
        ));
    }
    if c.ssi_block_rows * c.sensor_count <= c.ssi_order {
        return fail(format!(
            "vibration.ssi_block_rows: {} rows × {} sensors must exceed the order {}",
            c.ssi_block_rows, c.sensor_count, c.ssi_order
        ));
    }
    if !(c.w_min > 0.0 && c.w_max > c.w_min) || c.w_count < 2 {
        return fail(format!(
            "wgrid: need 0 < min < max and count >= 2, got [{}, {}] × {}",
            c.w_min, c.w_max, c.w_count
        ));
    }
    if c.cost_ratios.is_empty() || c.cost_ratios.iter().any(|r| !(*r > 0.0)) {
        return fail("costs.ratios: need positive repair/failure ratios".to_string());
    }
    if !(c.c_f > 0.0) {
        return fail(format!("costs.c_f: must be positive, got {}", c.c_f));
    }
    if !(0.0..1.0).contains(&c.discount_rate) {
        return fail(format!(
            "costs.discount_rate: must lie in [0, 1), got {}",
            c.discount_rate
        ));
    }
    if c.grid_points < 2 || !(c.grid_max > 0.0) {
        return fail(format!(
            "surrogate grid: need max > 0 and at least 2 points, got {} × {}",
            c.grid_max, c.grid_points
        ));
    }
    if c.sensor_study_counts.is_empty() || c.sensor_study_counts.iter().any(|n| *n < 4) {
        return fail("sensor_study.counts: need sensor counts of at least 4".to_string());
    }
    // Sensor layout feasibility on this mesh.
    SensorLayout::equally_spaced(&c.mesh, c.sensor_count)
        .map_err(|e| CliError::Config(e.to_string()))?;
    // Nyquist margin against a coarse-mesh estimate of the highest identified
    // frequency (the full mesh would be exact but is not needed for a rule).
    let probe_mesh = MeshConfig {
        nx: 60.min(c.mesh.nx),
        ny: 2.min(c.mesh.ny),
        ..c.mesh.clone()
    };
    let probe = build_model(&probe_mesh)
        .and_then(|m| m.modal_analysis(c.n_modes))
        .map_err(|e| CliError::Config(format!("mesh probe failed: {e}")))?;
    let f_id = probe.frequencies[c.n_modes - 1];
    if c.fs <= 2.5 * f_id {
        return fail(format!(
            "vibration.fs = {} Hz violates the Nyquist margin: need fs > 2.5 × f{} ≈ {:.1} Hz",
            c.fs,
            c.n_modes,
            2.5 * f_id
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaulted_scour_study() {
        let c = validate_config("", None, None).unwrap();
        assert_eq!(c.case, DamageKind::Scour);
        assert_eq!(c.sensor_count, 12);
        assert!(!c.use_curvatures);
        assert_eq!(c.inference, InferenceMethod::Mcmc);
        assert_eq!(c.n_theta, 200);
        assert_eq!(c.grid_points, 301);
        assert_eq!(c.truth, vec![9.85e-4, 2.28]);
    }

    #[test]
    fn corrosion_defaults_switch() {
        let c = validate_config("case = \"corrosion\"", None, None).unwrap();
        assert_eq!(c.sensor_count, 24);
        assert!(c.use_curvatures);
        assert_eq!(c.inference, InferenceMethod::Laplace);
        assert_eq!(c.grid_points, 61);
        assert_eq!(c.truth.len(), 4);
    }

    #[test]
    fn unknown_key_is_rejected_with_suggestion() {
        let err = validate_config("nonsense_key = 3", None, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nonsense_key"), "{msg}");
        assert!(msg.contains("expected"), "{msg}");
    }

    #[test]
    fn nyquist_rule_names_fs_and_mode() {
        let err = validate_config("[vibration]\nfs = 40.0", None, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("40"), "{msg}");
        assert!(msg.contains("f6"), "{msg}");
    }

    #[test]
    fn hash_is_stable_under_field_reordering() {
        let a = validate_config("case = \"scour\"\nmaster_seed = 7", None, None).unwrap();
        let b = validate_config("master_seed = 7\ncase = \"scour\"", None, None).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = validate_config("master_seed = 8\ncase = \"scour\"", None, None).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn overrides_enter_the_hash() {
        let a = validate_config("", None, None).unwrap();
        let b = validate_config("", Some(99), None).unwrap();
        assert_ne!(a.hash(), b.hash());
        let c = validate_config("", None, Some(Scale::Paper)).unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(c.n_theta, 1000);
    }

    #[test]
    fn paper_scale_corrosion_sample_counts() {
        let c = validate_config("case = \"corrosion\"", None, Some(Scale::Paper)).unwrap();
        assert_eq!(c.n_theta, 2000);
        assert_eq!(c.n_reliability_draws, 10_000);
    }
}
