//! Time-variant structural reliability.
//!
//! Time is discretized into annual intervals. Failure in year `j` happens
//! when the annual maximum load (Gumbel) exceeds the capacity `R(D(θ, t_j))`,
//! so the conditional interval probability is `1 − F_smax(R)`. Interval
//! probabilities accumulate multiplicatively into `Pr[F(t_i)|θ]`, Monte Carlo
//! averages over θ samples (prior or posterior) give the unconditional
//! curves, and the hazard is the failure rate conditional on survival.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::deterioration::evaluate;
use crate::surrogate::SurrogateBundle;
use crate::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Annual-maximum load model (Gumbel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub location: f64,
    pub scale: f64,
}

impl DemandModel {
    /// Solves for the Gumbel parameters such that the failure probability at
    /// the undamaged capacity `R = 1` equals `target_pf0` and the coefficient
    /// of variation equals `cv`. Closed form.
    pub fn calibrate(target_pf0: f64, cv: f64) -> Result<Self> {
        if !(target_pf0 > 0.0 && target_pf0 < 1.0) {
            return Err(Error::Domain(format!(
                "target failure probability must lie in (0,1), got {target_pf0}"
            )));
        }
        if !(cv > 0.0) {
            return Err(Error::Domain(format!("cv must be positive, got {cv}")));
        }
        // 1 − F(1) = p0  ⇒  (1 − a)/b = −ln(−ln(1 − p0)) =: q
        // CV = (πb/√6) / (a + γb)  ⇒  a = b(π/(√6 cv) − γ)
        let q = -(-(-target_pf0).ln_1p()).ln();
        let k = std::f64::consts::PI / 6.0f64.sqrt() / cv - EULER_GAMMA;
        let scale = 1.0 / (k + q);
        let location = scale * k;
        Ok(Self { location, scale })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (-(-(x - self.location) / self.scale).exp()).exp()
    }

    /// `1 − F(x)` evaluated without cancellation in the deep tail.
    pub fn exceedance(&self, x: f64) -> f64 {
        let t = (-(x - self.location) / self.scale).exp();
        -(-t).exp_m1()
    }

    pub fn mean(&self) -> f64 {
        self.location + EULER_GAMMA * self.scale
    }

    pub fn std_dev(&self) -> f64 {
        std::f64::consts::PI * self.scale / 6.0f64.sqrt()
    }

    /// Inverse-CDF draw (used only by Monte Carlo moment checks).
    pub fn quantile(&self, u: f64) -> f64 {
        self.location - self.scale * (-(u.ln())).ln()
    }
}

/// Deterministic capacity curve `damage → R`, backed by the surrogate bundle
/// (1D interpolated table for scour, per-section response surfaces for
/// corrosion).
#[derive(Debug, Clone)]
pub struct CapacityCurve {
    bundle: Arc<SurrogateBundle>,
}

impl CapacityCurve {
    pub fn new(bundle: Arc<SurrogateBundle>) -> Result<Self> {
        if bundle.table.capacity.is_empty() && bundle.capacity_surfaces.is_empty() {
            return Err(Error::Config(
                "surrogate bundle was built without capacity outputs".to_string(),
            ));
        }
        Ok(Self { bundle })
    }

    pub fn eval(&self, damage: &[f64]) -> f64 {
        self.bundle.capacity(damage)
    }
}

/// Conditional interval probability `Pr(F_j* | θ, t_j) = 1 − F_smax(R(D))`.
pub fn interval_failure_prob(
    theta: &[f64],
    t_years: f64,
    capacity: &CapacityCurve,
    demand: &DemandModel,
) -> Result<f64> {
    if !(t_years >= 1.0) {
        return Err(Error::Domain(format!(
            "interval failure probability needs t >= 1, got {t_years}"
        )));
    }
    let damage = evaluate(theta, t_years)?;
    Ok(demand.exceedance(capacity.eval(&damage)))
}

/// Accumulated failure probability `Pr[F(t_i) | θ]` for every year `1..=horizon`.
pub fn conditional_accumulated(
    theta: &[f64],
    horizon: usize,
    capacity: &CapacityCurve,
    demand: &DemandModel,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(horizon);
    let mut survival = 1.0f64;
    for t in 1..=horizon {
        let damage = evaluate(theta, t as f64).expect("t >= 1");
        let p = demand.exceedance(capacity.eval(&damage));
        survival *= 1.0 - p;
        out.push(1.0 - survival);
    }
    out
}

/// Hazard from an accumulated-probability curve:
/// `h(t_i) = (Pr[F(t_i)] − Pr[F(t_{i−1})]) / (1 − Pr[F(t_{i−1})])`.
pub fn hazard_from_pf(pf: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(pf.len());
    let mut prev = 0.0;
    for &p in pf {
        out.push((p - prev) / (1.0 - prev));
        prev = p;
    }
    out
}

/// Inverse of [`hazard_from_pf`] (used by round-trip identities).
pub fn pf_from_hazard(hazard: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(hazard.len());
    let mut prev = 0.0;
    for &h in hazard {
        let p = prev + h * (1.0 - prev);
        out.push(p);
        prev = p;
    }
    out
}

/// Where a reliability curve came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Prior,
    Posterior,
}

/// Accumulated failure probability and hazard per year, with optional
/// pointwise 5%/95% bands over the per-sample conditional curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub years: Vec<usize>,
    pub pf: Vec<f64>,
    pub hazard: Vec<f64>,
    pub band_lo: Option<Vec<f64>>,
    pub band_hi: Option<Vec<f64>>,
    pub provenance: Provenance,
    pub n_samples: usize,
    /// Years of monitoring data the samples condition on (posterior curves).
    pub data_horizon: Option<usize>,
}

impl ReliabilityCurve {
    fn from_samples(
        samples: &[Vec<f64>],
        capacity: &CapacityCurve,
        demand: &DemandModel,
        horizon: usize,
        provenance: Provenance,
        data_horizon: Option<usize>,
        with_bands: bool,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Analysis("no parameter samples supplied".to_string()));
        }
        let n = samples.len();
        let mut mean = vec![0.0; horizon];
        let mut per_year: Vec<Vec<f64>> = if with_bands {
            vec![Vec::with_capacity(n); horizon]
        } else {
            Vec::new()
        };
        for theta in samples {
            let curve = conditional_accumulated(theta, horizon, capacity, demand);
            for (i, p) in curve.iter().enumerate() {
                mean[i] += p / n as f64;
                if with_bands {
                    per_year[i].push(*p);
                }
            }
        }
        let (band_lo, band_hi) = if with_bands {
            let mut lo = Vec::with_capacity(horizon);
            let mut hi = Vec::with_capacity(horizon);
            for vals in per_year.iter_mut() {
                vals.sort_by(f64::total_cmp);
                lo.push(percentile_sorted(vals, 0.05));
                hi.push(percentile_sorted(vals, 0.95));
            }
            (Some(lo), Some(hi))
        } else {
            (None, None)
        };
        let hazard = hazard_from_pf(&mean);
        Ok(Self {
            years: (1..=horizon).collect(),
            pf: mean,
            hazard,
            band_lo,
            band_hi,
            provenance,
            n_samples: n,
            data_horizon,
        })
    }
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Prior-case curve: Monte Carlo mean over prior samples.
pub fn prior_reliability(
    samples: &[Vec<f64>],
    capacity: &CapacityCurve,
    demand: &DemandModel,
    horizon: usize,
) -> Result<ReliabilityCurve> {
    ReliabilityCurve::from_samples(
        samples,
        capacity,
        demand,
        horizon,
        Provenance::Prior,
        None,
        true,
    )
}

/// Posterior-case curve: same estimator over posterior samples conditioned on
/// data through `data_horizon` (`Pr[F(t_i) | Z_{1:data_horizon}]`).
pub fn posterior_reliability(
    samples: &[Vec<f64>],
    capacity: &CapacityCurve,
    demand: &DemandModel,
    horizon: usize,
    data_horizon: usize,
) -> Result<ReliabilityCurve> {
    ReliabilityCurve::from_samples(
        samples,
        capacity,
        demand,
        horizon,
        Provenance::Posterior,
        Some(data_horizon),
        true,
    )
}
