//! Synthetic monitoring data: ambient response, noise, system identification,
//! mode matching and curvature extraction.
//!
//! The full data path mirrors a real monitoring chain: white-noise excitation
//! of the (damaged) bridge, vertical accelerations at the sensors, additive
//! measurement noise, covariance-driven stochastic subspace identification,
//! and MAC-based pairing against the model's reference modes. A fast path
//! ([`fast_modal_observation`]) perturbs exact model modal data with the same
//! error model the likelihood assumes; it keeps nested Monte Carlo campaigns
//! tractable while the SSI path is validated separately.

mod simulate;
mod ssi;

pub use simulate::{add_noise, simulate_modal_response, simulate_bridge_response, ModalBasis, SimulationConfig};
pub use ssi::{ssi_identify, RawMode, SsiConfig};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::fe::{BridgeModel, MeshConfig, ModalSolution};
use crate::{Error, Result};

/// Vertical-accelerometer layout on the top edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    /// Sensor x positions (m), ascending, snapped to top-edge nodes.
    pub positions: Vec<f64>,
    /// Index of each sensor into the model's ordered top-edge node list.
    pub top_indices: Vec<usize>,
    /// Uniform spacing (m) when the layout is uniform.
    pub spacing: Option<f64>,
}

impl SensorLayout {
    /// `n` equally spaced sensors snapped to the node grid. The presets of the
    /// study are `n = 12` and `n = 24`.
    pub fn equally_spaced(cfg: &MeshConfig, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 sensors, got {n}")));
        }
        let length = cfg.total_length();
        let dx = length / cfg.nx as f64;
        let ideal = length / (n + 1) as f64;
        let spacing_steps = (ideal / dx).round().max(1.0) as usize;
        let spacing = spacing_steps as f64 * dx;
        let start_steps = (((length - (n - 1) as f64 * spacing) / 2.0) / dx).round() as i64;
        if start_steps < 1 {
            return Err(Error::Config(format!(
                "{n} sensors do not fit the {length} m deck at node spacing {dx} m"
            )));
        }
        let start_steps = start_steps as usize;
        let mut top_indices = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        for j in 0..n {
            let step = start_steps + j * spacing_steps;
            if step > cfg.nx {
                return Err(Error::Config(format!(
                    "sensor {j} falls off the deck (node index {step} > {})",
                    cfg.nx
                )));
            }
            top_indices.push(step);
            positions.push(step as f64 * dx);
        }
        Ok(Self {
            positions,
            top_indices,
            spacing: Some(spacing),
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.positions.len()
    }

    /// Global DOF indices (vertical) of the sensors.
    pub fn sensor_dofs(&self, model: &BridgeModel) -> Vec<usize> {
        self.top_indices
            .iter()
            .map(|&i| BridgeModel::vertical_dof(model.top_nodes()[i]))
            .collect()
    }

    /// Mode shapes restricted to the sensors, `[mode][sensor]`.
    pub fn restrict_shapes(&self, model: &BridgeModel, modal: &ModalSolution) -> Vec<Vec<f64>> {
        let dofs = self.sensor_dofs(model);
        (0..modal.shapes.ncols())
            .map(|m| dofs.iter().map(|&d| modal.shapes[(d, m)]).collect())
            .collect()
    }
}

/// One OMA-identified modal data set for a single time instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalDataSet {
    /// Structural age the data was recorded at (years).
    pub t_years: f64,
    /// Identified eigenvalues λ̃ = (2π f̃)², ascending.
    pub lambdas: Vec<f64>,
    /// Identified mode shapes at the sensors, `[mode][sensor]`.
    pub shapes: Option<Vec<Vec<f64>>>,
    /// Mode shape curvatures at the sensors, `[mode][sensor]`.
    pub curvatures: Option<Vec<Vec<f64>>>,
}

impl ModalDataSet {
    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    /// Serializes a per-year history as JSON lines.
    pub fn write_history(sets: &[ModalDataSet], mut w: impl std::io::Write) -> Result<()> {
        for s in sets {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_history(r: impl std::io::BufRead) -> Result<Vec<ModalDataSet>> {
        let mut out = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line)?);
        }
        Ok(out)
    }
}

/// Modal assurance criterion of two real shape vectors.
pub fn mac(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot * dot / (na * nb)
}

/// Minimum acceptable MAC for a raw/reference pairing.
pub const MAC_ACCEPT: f64 = 0.8;

/// Pairs raw identified modes with reference modes by greedy descending MAC.
///
/// Every reference mode must be matched by a distinct raw mode with
/// `MAC >= 0.8`; the result is ordered like the reference set.
pub fn match_modes(
    raw: &[RawMode],
    reference_shapes: &[Vec<f64>],
    t_years: f64,
) -> Result<ModalDataSet> {
    let n_ref = reference_shapes.len();
    if raw.len() < n_ref {
        return Err(Error::Identification(format!(
            "only {} raw modes for {} reference modes",
            raw.len(),
            n_ref
        )));
    }
    let mut pairs = Vec::with_capacity(raw.len() * n_ref);
    for (i, r) in raw.iter().enumerate() {
        for (m, refshape) in reference_shapes.iter().enumerate() {
            pairs.push((mac(&r.shape, refshape), i, m));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut raw_used = vec![false; raw.len()];
    let mut matched: Vec<Option<(usize, f64)>> = vec![None; n_ref];
    let mut remaining = n_ref;
    for (score, i, m) in pairs {
        if raw_used[i] || matched[m].is_some() {
            continue;
        }
        raw_used[i] = true;
        matched[m] = Some((i, score));
        remaining -= 1;
        if remaining == 0 {
            break;
        }
    }
    let mut lambdas = Vec::with_capacity(n_ref);
    let mut shapes = Vec::with_capacity(n_ref);
    for (m, slot) in matched.iter().enumerate() {
        let (i, score) = slot.ok_or_else(|| {
            Error::Identification(format!("reference mode {m} left unmatched"))
        })?;
        if score < MAC_ACCEPT {
            return Err(Error::Identification(format!(
                "mode {m} matched with MAC {score:.3} < {MAC_ACCEPT}"
            )));
        }
        lambdas.push(raw[i].lambda);
        shapes.push(raw[i].shape.clone());
    }
    for w in lambdas.windows(2) {
        if w[1] < w[0] {
            return Err(Error::Identification(
                "matched eigenvalues are out of order; identification is unreliable".to_string(),
            ));
        }
    }
    Ok(ModalDataSet {
        t_years,
        lambdas,
        shapes: Some(shapes),
        curvatures: None,
    })
}

/// Second derivative of each mode shape along the sensor line by finite
/// differences: central interior, second-order one-sided at the ends.
pub fn curvature_of(shapes: &[Vec<f64>], spacing: f64) -> Result<Vec<Vec<f64>>> {
    if shapes.is_empty() {
        return Err(Error::Config("no shapes to differentiate".to_string()));
    }
    let n = shapes[0].len();
    if n < 4 {
        return Err(Error::Config(format!(
            "curvature extraction needs at least 4 sensors, got {n}"
        )));
    }
    let h2 = spacing * spacing;
    let mut out = Vec::with_capacity(shapes.len());
    for phi in shapes {
        let mut k = vec![0.0; n];
        k[0] = (2.0 * phi[0] - 5.0 * phi[1] + 4.0 * phi[2] - phi[3]) / h2;
        for i in 1..n - 1 {
            k[i] = (phi[i - 1] - 2.0 * phi[i] + phi[i + 1]) / h2;
        }
        k[n - 1] = (2.0 * phi[n - 1] - 5.0 * phi[n - 2] + 4.0 * phi[n - 3] - phi[n - 4]) / h2;
        out.push(k);
    }
    Ok(out)
}

/// Appends curvatures to a data set (requires shapes and a uniform layout).
pub fn curvature(data: &ModalDataSet, layout: &SensorLayout) -> Result<ModalDataSet> {
    let spacing = layout.spacing.ok_or_else(|| {
        Error::Config("curvature extraction requires a uniformly spaced layout".to_string())
    })?;
    let shapes = data
        .shapes
        .as_ref()
        .ok_or_else(|| Error::Config("data set has no mode shapes".to_string()))?;
    let curvatures = curvature_of(shapes, spacing)?;
    Ok(ModalDataSet {
        curvatures: Some(curvatures),
        ..data.clone()
    })
}

/// Fast observation path: perturbs exact model modal data with zero-mean
/// Gaussian errors of coefficient of variation `c_sim`, emulating the scatter
/// of the full SSI pipeline.
///
/// `λ̃_m = λ_m (1 + ε)` with `ε ~ N(0, c²)`; each shape component gets
/// independent noise with standard deviation `c · ‖Φ_m‖`.
pub fn fast_modal_observation<R: Rng>(
    lambdas: &[f64],
    shapes: Option<&[Vec<f64>]>,
    c_sim: f64,
    t_years: f64,
    rng: &mut R,
) -> ModalDataSet {
    assert!(c_sim >= 0.0, "c_sim must be non-negative");
    let lam = lambdas
        .iter()
        .map(|&l| {
            let z: f64 = StandardNormal.sample(rng);
            l * (1.0 + c_sim * z)
        })
        .collect();
    let shapes = shapes.map(|modes| {
        modes
            .iter()
            .map(|phi| {
                let norm = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
                phi.iter()
                    .map(|&x| {
                        let z: f64 = StandardNormal.sample(rng);
                        x + c_sim * norm * z
                    })
                    .collect()
            })
            .collect()
    });
    ModalDataSet {
        t_years,
        lambdas: lam,
        shapes,
        curvatures: None,
    }
}
