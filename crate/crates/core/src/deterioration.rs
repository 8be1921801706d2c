//! Stochastic deterioration model `D(t) = A·t^B` and its prior specification.
//!
//! Scour uses a two-parameter vector `(A, B)`; corrosion uses four parameters
//! `(A1, B1, A2, B2)`, one `(A, B)` pair per hotspot. Rate parameters `A` are
//! lognormal, exponents `B` are normal, all marginals independent. Table
//! values are interpreted as mean and coefficient of variation of the
//! distributed variable itself, which reproduces the calibrated tail
//! probability of the scour prior exactly.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::fe::DamageKind;
use crate::seeds::stream_rng;
use crate::{Error, Result};

/// Marginal distribution family of one deterioration parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lognormal,
    Normal,
}

/// One prior marginal given as (family, mean, cv).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub family: Family,
    pub mean: f64,
    pub cv: f64,
}

impl Marginal {
    pub fn lognormal(mean: f64, cv: f64) -> Self {
        Self {
            family: Family::Lognormal,
            mean,
            cv,
        }
    }

    pub fn normal(mean: f64, cv: f64) -> Self {
        Self {
            family: Family::Normal,
            mean,
            cv,
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.cv * self.mean
    }
}

/// Independent prior over the deterioration parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub marginals: Vec<Marginal>,
}

impl PriorSpec {
    /// Scour prior: `A ~ LN(7.955e-4, cv 0.5)`, `B ~ N(2.0, cv 0.15)`.
    pub fn scour() -> Self {
        Self {
            marginals: vec![
                Marginal::lognormal(7.955e-4, 0.5),
                Marginal::normal(2.0, 0.15),
            ],
        }
    }

    /// Corrosion prior: `A_j ~ LN(0.506, cv 0.4)`, `B_j ~ N(0.5, cv 0.15)`.
    pub fn corrosion() -> Self {
        let pair = [
            Marginal::lognormal(0.506, 0.4),
            Marginal::normal(0.5, 0.15),
        ];
        Self {
            marginals: [pair, pair].concat(),
        }
    }

    pub fn for_case(kind: DamageKind) -> Self {
        match kind {
            DamageKind::Scour => Self::scour(),
            DamageKind::Corrosion => Self::corrosion(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.marginals.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.marginals.is_empty() {
            return Err(Error::Config("prior has no marginals".to_string()));
        }
        for (i, m) in self.marginals.iter().enumerate() {
            if m.family == Family::Lognormal && !(m.mean > 0.0) {
                return Err(Error::Config(format!(
                    "lognormal marginal {i} needs mean > 0, got {}",
                    m.mean
                )));
            }
            if !(m.cv > 0.0) {
                return Err(Error::Config(format!(
                    "marginal {i} needs cv > 0, got {}",
                    m.cv
                )));
            }
        }
        Ok(())
    }

    /// One i.i.d. draw in the natural parameter space.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.marginals
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                match m.family {
                    Family::Lognormal => {
                        let (mu, sigma) = lognormal_from_mean_cv(m.mean, m.cv)
                            .expect("validated lognormal marginal");
                        (mu + sigma * z).exp()
                    }
                    Family::Normal => m.mean + m.std_dev() * z,
                }
            })
            .collect()
    }

    /// Log prior density in the natural space.
    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.dimension());
        let mut lp = 0.0;
        for (m, &x) in self.marginals.iter().zip(theta) {
            match m.family {
                Family::Lognormal => {
                    if x <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    let (mu, sigma) = lognormal_from_mean_cv(m.mean, m.cv).unwrap();
                    let z = (x.ln() - mu) / sigma;
                    lp += -0.5 * z * z - (x * sigma).ln() - 0.5 * LN_2PI;
                }
                Family::Normal => {
                    let s = m.std_dev();
                    let z = (x - m.mean) / s;
                    lp += -0.5 * z * z - s.ln() - 0.5 * LN_2PI;
                }
            }
        }
        lp
    }
}

const LN_2PI: f64 = 1.8378770664093453;

/// Moment-matching transformation: underlying Gaussian parameters of a
/// lognormal with the given mean and coefficient of variation.
pub fn lognormal_from_mean_cv(mean: f64, cv: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0) || !(cv >= 0.0) {
        return Err(Error::Domain(format!(
            "lognormal moment matching needs mean > 0 and cv >= 0, got ({mean}, {cv})"
        )));
    }
    let sigma2 = (1.0 + cv * cv).ln();
    let sigma = sigma2.sqrt();
    let mu = mean.ln() - 0.5 * sigma2;
    Ok((mu, sigma))
}

/// Deterioration level `D_j(t) = A_j · t^{B_j}` per hotspot.
///
/// `theta` is `[A, B]` (scour) or `[A1, B1, A2, B2]` (corrosion); the result
/// has one entry per hotspot.
pub fn evaluate(theta: &[f64], t_years: f64) -> Result<Vec<f64>> {
    if !(t_years >= 0.0) {
        return Err(Error::Domain(format!(
            "deterioration time must be >= 0, got {t_years}"
        )));
    }
    assert!(
        theta.len() % 2 == 0 && !theta.is_empty(),
        "theta must hold (A, B) pairs"
    );
    Ok(theta
        .chunks_exact(2)
        .map(|ab| ab[0] * t_years.powf(ab[1]))
        .collect())
}

/// Damage levels for all years `1..=horizon`, hotspot-major inner vectors.
pub fn damage_history(theta: &[f64], horizon: usize) -> Vec<Vec<f64>> {
    (1..=horizon)
        .map(|t| evaluate(theta, t as f64).expect("t >= 1"))
        .collect()
}

/// `n` i.i.d. prior draws, reproducible under (seed, stream index).
pub fn sample_prior(spec: &PriorSpec, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            spec.sample(&mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn evaluate_direct_substitution() {
        let d = evaluate(&[7.955e-4, 2.0], 50.0).unwrap();
        assert_relative_eq!(d[0], 1.98875, epsilon = 1e-12);
        let d = evaluate(&[7.955e-4, 2.0], 0.0).unwrap();
        assert_eq!(d[0], 0.0);
        // Derived oracle: 0.65 · 50^0.55 evaluated independently.
        let expected = 0.65 * (0.55 * 50.0f64.ln()).exp();
        let d = evaluate(&[0.65, 0.55], 50.0).unwrap();
        assert_relative_eq!(d[0], expected, epsilon = 1e-12);
        assert_relative_eq!(d[0], 5.589158, epsilon = 1e-5);
        assert!(evaluate(&[1.0, 1.0], -1.0).is_err());
    }

    #[test]
    fn evaluate_two_hotspots() {
        let d = evaluate(&[0.65, 0.55, 0.42, 0.48], 10.0).unwrap();
        assert_eq!(d.len(), 2);
        assert_relative_eq!(d[0], 0.65 * 10f64.powf(0.55));
        assert_relative_eq!(d[1], 0.42 * 10f64.powf(0.48));
    }

    #[test]
    fn moment_matching_formulas() {
        let (mu, sigma) = lognormal_from_mean_cv(7.955e-4, 0.5).unwrap();
        assert_relative_eq!(mu, (7.955e-4f64).ln() - 0.5 * 1.25f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(mu, -7.24811, epsilon = 1e-4);
        assert_relative_eq!(sigma, 0.4724, epsilon = 1e-4);
        let (mu, sigma) = lognormal_from_mean_cv(0.506, 0.4).unwrap();
        assert_relative_eq!(mu, -0.7554, epsilon = 1e-4);
        assert_relative_eq!(sigma, 0.3853, epsilon = 1e-4);
        let (mu, sigma) = lognormal_from_mean_cv(1.0, 1e-9).unwrap();
        assert!(mu.abs() < 1e-15 && sigma < 1e-8);
        assert!(lognormal_from_mean_cv(-1.0, 0.5).is_err());
    }

    #[test]
    fn scour_prior_tail_matches_calibration() {
        // The scour prior is calibrated so Pr(D(50) > 9) ≈ 10%.
        let spec = PriorSpec::scour();
        let samples = sample_prior(&spec, 100_000, 17);
        let count = samples
            .iter()
            .filter(|th| evaluate(th, 50.0).unwrap()[0] > 9.0)
            .count();
        let p = count as f64 / samples.len() as f64;
        assert!((p - 0.10).abs() < 0.01, "Pr(D(50) > 9) = {p}");
        let mean_a: f64 = samples.iter().map(|th| th[0]).sum::<f64>() / samples.len() as f64;
        assert!((mean_a - 7.955e-4).abs() / 7.955e-4 < 0.01);
    }

    #[test]
    fn corrosion_prior_tail_closed_form() {
        // ln D(50) is Gaussian; the closed form puts the tail near 2%.
        let spec = PriorSpec::corrosion();
        let samples = sample_prior(&spec, 100_000, 18);
        let count = samples
            .iter()
            .filter(|th| evaluate(th, 50.0).unwrap()[0] > 9.0)
            .count();
        let p = count as f64 / samples.len() as f64;
        assert!((0.01..=0.03).contains(&p), "Pr(D(50) > 9) = {p}");
    }

    #[test]
    fn log_damage_moments_match_gaussian_convolution() {
        // ln D(t) = ln A + B ln t with independent Gaussian terms.
        let spec = PriorSpec::scour();
        let n = 200_000;
        let samples = sample_prior(&spec, n, 23);
        let lnd: Vec<f64> = samples
            .iter()
            .map(|th| evaluate(th, 50.0).unwrap()[0].ln())
            .collect();
        let mean: f64 = lnd.iter().sum::<f64>() / n as f64;
        let var: f64 = lnd.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (mu_a, sg_a) = lognormal_from_mean_cv(7.955e-4, 0.5).unwrap();
        let ln50 = 50f64.ln();
        let mean_exact = mu_a + 2.0 * ln50;
        let var_exact = sg_a * sg_a + (0.3 * ln50).powi(2);
        let se_mean = (var_exact / n as f64).sqrt();
        assert!((mean - mean_exact).abs() < 3.0 * se_mean);
        let se_var = var_exact * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((var - var_exact).abs() < 3.0 * se_var);
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = PriorSpec::corrosion();
        let a = sample_prior(&spec, 32, 99);
        let b = sample_prior(&spec, 32, 99);
        assert_eq!(a, b);
        let c = sample_prior(&spec, 32, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn damage_strictly_increasing_in_time() {
        let theta = [0.3, 0.7];
        let mut prev = 0.0;
        for t in 1..=50 {
            let d = evaluate(&theta, t as f64).unwrap()[0];
            assert!(d > prev);
            prev = d;
        }
    }
}
