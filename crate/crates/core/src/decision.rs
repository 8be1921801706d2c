//! Heuristic-threshold life-cycle cost optimization, VoI and VPPI.
//!
//! The maintenance strategy is a single hazard threshold `w`: repair as soon
//! as the (prior or monitoring-updated) hazard reaches `w`, at `t_repair =
//! t_{i−1}`. Costs are a fixed discounted repair cost plus the discounted
//! risk of failure accumulated up to the repair (or the full horizon when no
//! repair happens); after a repair the accounting stops. Prior and
//! preposterior analyses share the same θ samples, so their risk terms are
//! identical up to the repair time and the value of information is a clean
//! difference of optimal expected totals.

use serde::{Deserialize, Serialize};

use crate::reliability::{conditional_accumulated, hazard_from_pf, CapacityCurve, DemandModel};
use crate::{Error, Result};

/// Cost and discounting parameters of the decision problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Cost of a failure event.
    pub c_f: f64,
    /// Fixed cost of the repair action.
    pub c_r: f64,
    /// Annually compounded discount rate.
    pub discount_rate: f64,
    /// Lifetime horizon in years.
    pub horizon: usize,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_f > 0.0) || !(self.c_r > 0.0) {
            return Err(Error::Config("costs must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.discount_rate) {
            return Err(Error::Config(format!(
                "discount rate must lie in [0, 1), got {}",
                self.discount_rate
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least one year".to_string()));
        }
        Ok(())
    }
}

/// Discount factor `γ(t) = (1 + r)^{−t}`.
pub fn discount(t_years: f64, rate: f64) -> f64 {
    (1.0 + rate).powf(-t_years)
}

/// Candidate hazard thresholds, ascending; `f64::INFINITY` is the "never
/// repair" sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WGrid {
    pub values: Vec<f64>,
}

impl WGrid {
    /// Logarithmic grid over `[min, max]` plus the no-repair sentinel.
    pub fn logarithmic(min: f64, max: f64, count: usize) -> Result<Self> {
        if !(min > 0.0 && max > min) || count < 2 {
            return Err(Error::Config(format!(
                "invalid w grid: min {min}, max {max}, count {count}"
            )));
        }
        let mut values: Vec<f64> = (0..count)
            .map(|i| {
                let f = i as f64 / (count - 1) as f64;
                min * (max / min).powf(f)
            })
            .collect();
        values.push(f64::INFINITY);
        Ok(Self { values })
    }
}

/// First-crossing repair rule: when `h(t_i) >= w` first holds, the repair
/// happens at `t_{i−1}` (0 means immediate repair); `None` when the hazard
/// never reaches the threshold.
pub fn repair_time(hazard: &[f64], w: f64) -> Option<usize> {
    hazard.iter().position(|h| *h >= w)
}

/// How an expected life-cycle cost was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LccProvenance {
    Prior,
    Preposterior,
    PerfectInformation,
}

/// Expected life-cycle cost of one threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LccOutcome {
    pub w: f64,
    /// Repair year of the prior decision (`None` for "no repair", and for the
    /// preposterior case where the repair time varies per sample).
    pub t_repair: Option<usize>,
    pub expected_repair: f64,
    pub expected_risk: f64,
    pub expected_total: f64,
    pub provenance: LccProvenance,
    pub n_samples: usize,
    /// Batch-means coefficient of variation of the total estimator.
    pub cv: f64,
    /// Per-sample totals (kept for VoI/VPPI differencing).
    #[serde(skip)]
    pub per_sample_total: Vec<f64>,
    /// Hash of the θ sample set the outcome was computed on.
    pub sample_set_id: u64,
}

impl LccOutcome {
    fn from_parts(
        w: f64,
        t_repair: Option<usize>,
        repair: Vec<f64>,
        risk: Vec<f64>,
        provenance: LccProvenance,
        sample_set_id: u64,
    ) -> Self {
        let n = risk.len();
        let expected_repair = repair.iter().sum::<f64>() / n as f64;
        let expected_risk = risk.iter().sum::<f64>() / n as f64;
        let per_sample_total: Vec<f64> =
            repair.iter().zip(&risk).map(|(a, b)| a + b).collect();
        let expected_total = expected_repair + expected_risk;
        let cv = batch_means_cv(&per_sample_total);
        Self {
            w,
            t_repair,
            expected_repair,
            expected_risk,
            expected_total,
            provenance,
            n_samples: n,
            cv,
            per_sample_total,
            sample_set_id,
        }
    }
}

/// Relative standard error of the mean via 10 consecutive batches.
pub fn batch_means_cv(values: &[f64]) -> f64 {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if mean == 0.0 {
        return 0.0;
    }
    let b = 10.min(n);
    let mut batch_means = Vec::with_capacity(b);
    let base = n / b;
    let extra = n % b;
    let mut start = 0;
    for i in 0..b {
        let len = base + usize::from(i < extra);
        let batch = &values[start..start + len];
        batch_means.push(batch.iter().sum::<f64>() / len as f64);
        start += len;
    }
    let bm = batch_means.iter().sum::<f64>() / b as f64;
    let var = batch_means
        .iter()
        .map(|m| (m - bm).powi(2))
        .sum::<f64>()
        / (b as f64 - 1.0);
    (var / b as f64).sqrt() / mean.abs()
}

/// Shared θ samples with their conditional failure-probability curves; the
/// one sample set every analysis of a study must use.
#[derive(Debug, Clone)]
pub struct SampleEnsemble {
    pub thetas: Vec<Vec<f64>>,
    /// `pf[k][i] = Pr[F(t_{i+1}) | θ_k]`.
    pub pf: Vec<Vec<f64>>,
    pub horizon: usize,
    pub id: u64,
}

impl SampleEnsemble {
    pub fn new(
        thetas: Vec<Vec<f64>>,
        capacity: &CapacityCurve,
        demand: &DemandModel,
        horizon: usize,
    ) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::Analysis("ensemble needs at least one sample".to_string()));
        }
        let pf: Vec<Vec<f64>> = thetas
            .iter()
            .map(|theta| conditional_accumulated(theta, horizon, capacity, demand))
            .collect();
        let id = hash_thetas(&thetas);
        Ok(Self {
            thetas,
            pf,
            horizon,
            id,
        })
    }

    /// Monte Carlo mean accumulated probability (the prior curve when the
    /// ensemble holds prior samples).
    pub fn mean_pf(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.horizon];
        for curve in &self.pf {
            for (m, p) in mean.iter_mut().zip(curve) {
                *m += p / self.pf.len() as f64;
            }
        }
        mean
    }

    pub fn mean_hazard(&self) -> Vec<f64> {
        hazard_from_pf(&self.mean_pf())
    }
}

fn hash_thetas(thetas: &[Vec<f64>]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for row in thetas {
        for v in row {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Discounted failure risk of one sample up to (and including) `stop`.
fn risk_to(pf: &[f64], stop: usize, cost: &CostModel) -> f64 {
    let mut risk = 0.0;
    let mut prev = 0.0;
    for (i, &p) in pf.iter().take(stop).enumerate() {
        let t = (i + 1) as f64;
        risk += cost.c_f * discount(t, cost.discount_rate) * (p - prev);
        prev = p;
    }
    risk
}

/// Expected life-cycle cost in the prior case: one repair decision from the
/// pooled prior hazard applies to all samples.
pub fn expected_lcc_prior(
    ensemble: &SampleEnsemble,
    prior_hazard: &[f64],
    cost: &CostModel,
    w: f64,
) -> LccOutcome {
    let t_rep = repair_time(prior_hazard, w);
    let stop = t_rep.unwrap_or(cost.horizon);
    let repair_cost = match t_rep {
        Some(t) => cost.c_r * discount(t as f64, cost.discount_rate),
        None => 0.0,
    };
    let n = ensemble.pf.len();
    let repair = vec![repair_cost; n];
    let risk: Vec<f64> = ensemble
        .pf
        .iter()
        .map(|pf| risk_to(pf, stop, cost))
        .collect();
    LccOutcome::from_parts(w, t_rep, repair, risk, LccProvenance::Prior, ensemble.id)
}

/// Posterior hazard sequences of a preposterior campaign: one monitoring
/// history per θ sample, `hazards[k][i] = h(t_{i+1} | z^k_{1:i})`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreposteriorEnsemble {
    pub hazards: Vec<Vec<f64>>,
    pub sample_set_id: u64,
}

/// Expected life-cycle cost in the preposterior case: each sample repairs
/// according to its own monitoring-updated hazard sequence, while the risk
/// terms reuse the same conditional curves as the prior analysis.
pub fn expected_lcc_preposterior(
    ensemble: &SampleEnsemble,
    preposterior: &PreposteriorEnsemble,
    cost: &CostModel,
    w: f64,
) -> Result<LccOutcome> {
    if preposterior.sample_set_id != ensemble.id {
        return Err(Error::Analysis(
            "preposterior hazards were computed on a different θ sample set".to_string(),
        ));
    }
    if preposterior.hazards.len() != ensemble.pf.len() {
        return Err(Error::Analysis(format!(
            "{} hazard sequences for {} samples",
            preposterior.hazards.len(),
            ensemble.pf.len()
        )));
    }
    let mut repair = Vec::with_capacity(ensemble.pf.len());
    let mut risk = Vec::with_capacity(ensemble.pf.len());
    for (pf, hazard) in ensemble.pf.iter().zip(&preposterior.hazards) {
        let t_rep = repair_time(hazard, w);
        let stop = t_rep.unwrap_or(cost.horizon);
        repair.push(match t_rep {
            Some(t) => cost.c_r * discount(t as f64, cost.discount_rate),
            None => 0.0,
        });
        risk.push(risk_to(pf, stop, cost));
    }
    Ok(LccOutcome::from_parts(
        w,
        None,
        repair,
        risk,
        LccProvenance::Preposterior,
        ensemble.id,
    ))
}

/// Exhaustive threshold search; ties break toward the larger `w` (fewer
/// repairs).
pub fn optimize_w(
    grid: &WGrid,
    mut evaluate: impl FnMut(f64) -> Result<LccOutcome>,
) -> Result<(f64, LccOutcome)> {
    if grid.values.is_empty() {
        return Err(Error::Config("empty w grid".to_string()));
    }
    let mut best: Option<(f64, LccOutcome)> = None;
    for &w in &grid.values {
        let outcome = evaluate(w)?;
        let replace = match &best {
            None => true,
            Some((_, b)) => outcome.expected_total <= b.expected_total,
        };
        if replace {
            best = Some((w, outcome));
        }
    }
    Ok(best.expect("grid non-empty"))
}

/// Value-of-information estimate with its Monte Carlo coefficient of
/// variation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub cv: f64,
}

/// `VoI = E[C_tot | w₀*] − E[C_tot | w_mon*]`, both sides on the same sample
/// set; the CV comes from batch means of the per-sample differences.
pub fn voi(prior_opt: &LccOutcome, preposterior_opt: &LccOutcome) -> Result<ValueEstimate> {
    if prior_opt.sample_set_id != preposterior_opt.sample_set_id {
        return Err(Error::Analysis(
            "VoI requires prior and preposterior outcomes on the same θ sample set".to_string(),
        ));
    }
    if prior_opt.per_sample_total.len() != preposterior_opt.per_sample_total.len() {
        return Err(Error::Analysis("sample counts differ between analyses".to_string()));
    }
    let diffs: Vec<f64> = prior_opt
        .per_sample_total
        .iter()
        .zip(&preposterior_opt.per_sample_total)
        .map(|(a, b)| a - b)
        .collect();
    let value = diffs.iter().sum::<f64>() / diffs.len() as f64;
    Ok(ValueEstimate {
        value,
        cv: batch_means_cv(&diffs),
    })
}

/// Value of partial perfect information: the prior optimum minus the expected
/// cost under per-sample optimal thresholds chosen from each sample's own
/// deterministic hazard (the load stays uncertain).
pub fn vppi(
    ensemble: &SampleEnsemble,
    cost: &CostModel,
    grid: &WGrid,
    prior_opt: &LccOutcome,
) -> Result<ValueEstimate> {
    if prior_opt.sample_set_id != ensemble.id {
        return Err(Error::Analysis(
            "VPPI requires the prior optimum on the same θ sample set".to_string(),
        ));
    }
    let mut per_sample_min = Vec::with_capacity(ensemble.pf.len());
    for pf in &ensemble.pf {
        let hazard = hazard_from_pf(pf);
        let mut best = f64::INFINITY;
        for &w in &grid.values {
            let t_rep = repair_time(&hazard, w);
            let stop = t_rep.unwrap_or(cost.horizon);
            let repair = match t_rep {
                Some(t) => cost.c_r * discount(t as f64, cost.discount_rate),
                None => 0.0,
            };
            let total = repair + risk_to(pf, stop, cost);
            if total < best {
                best = total;
            }
        }
        per_sample_min.push(best);
    }
    let diffs: Vec<f64> = prior_opt
        .per_sample_total
        .iter()
        .zip(&per_sample_min)
        .map(|(a, b)| a - b)
        .collect();
    let value = diffs.iter().sum::<f64>() / diffs.len() as f64;
    Ok(ValueEstimate {
        value,
        cv: batch_means_cv(&diffs),
    })
}
