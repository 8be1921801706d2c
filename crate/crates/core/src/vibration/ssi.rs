//! Covariance-driven stochastic subspace identification.
//!
//! Output correlations are stacked into a block-Hankel matrix, the SVD is
//! truncated at the requested state order, and the state/output matrices are
//! recovered from the shift structure of the observability factor. Discrete
//! poles are mapped to continuous ones via `s = fs · ln μ`; modes failing the
//! physicality screen (positive damping below the cap, in-band frequency,
//! conjugate-pair representative) are discarded.
//!
//! No stabilization diagram is built: the pipeline must stay deterministic
//! inside Monte Carlo loops, so a fixed order plus the physicality screen is
//! used instead.

use nalgebra::{Complex, DMatrix, DVector};

use crate::{Error, Result};

use super::simulate::AccelerationRecord;

/// SSI settings. `order` is the state dimension after truncation and must be
/// at least twice the number of modes to identify.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SsiConfig {
    pub order: usize,
    pub block_rows: usize,
    /// Minimum number of physical modes expected from one record.
    pub min_modes: usize,
    /// Damping-ratio cap of the physicality screen.
    pub max_damping: f64,
}

impl Default for SsiConfig {
    fn default() -> Self {
        Self {
            order: 24,
            block_rows: 40,
            min_modes: 6,
            max_damping: 0.2,
        }
    }
}

/// One identified mode before pairing with model modes.
#[derive(Debug, Clone)]
pub struct RawMode {
    /// Undamped natural frequency (Hz).
    pub frequency: f64,
    /// Eigenvalue λ = ω² (rad/s)².
    pub lambda: f64,
    /// Damping ratio.
    pub damping: f64,
    /// Real-ified mode shape at the sensors (unit norm).
    pub shape: Vec<f64>,
}

/// Identifies the physical modes of an output-only record.
pub fn ssi_identify(record: &AccelerationRecord, cfg: &SsiConfig) -> Result<Vec<RawMode>> {
    let n_s = record.channels.len();
    let n = record.n_samples();
    if cfg.order % 2 != 0 {
        return Err(Error::Config(format!("SSI order must be even, got {}", cfg.order)));
    }
    if cfg.order < 2 * cfg.min_modes {
        return Err(Error::Config(format!(
            "SSI order {} below twice the expected mode count {}",
            cfg.order, cfg.min_modes
        )));
    }
    if cfg.block_rows * n_s <= cfg.order {
        return Err(Error::Config(format!(
            "block_rows × channels = {} must exceed the order {}",
            cfg.block_rows * n_s,
            cfg.order
        )));
    }
    let lags = 2 * cfg.block_rows;
    if n <= lags + 1 {
        return Err(Error::Config("record too short for the requested lags".to_string()));
    }

    // De-mean, then estimate output correlations R_i = E[y_{k+i} y_kᵀ].
    let mut y: Vec<Vec<f64>> = record.channels.clone();
    for ch in y.iter_mut() {
        let mean = ch.iter().sum::<f64>() / ch.len() as f64;
        for v in ch.iter_mut() {
            *v -= mean;
        }
    }
    let mut corr = vec![DMatrix::zeros(n_s, n_s); lags + 1];
    for (i, r) in corr.iter_mut().enumerate().skip(1) {
        let len = n - i;
        let scale = 1.0 / len as f64;
        for a in 0..n_s {
            let ya = &y[a][i..];
            for b in 0..n_s {
                let yb = &y[b][..len];
                let mut s = 0.0;
                for k in 0..len {
                    s += ya[k] * yb[k];
                }
                r[(a, b)] = s * scale;
            }
        }
    }

    // Block-Hankel of the correlations, H[p][q] = R_{p+q+1}.
    let br = cfg.block_rows;
    let mut hankel = DMatrix::zeros(br * n_s, br * n_s);
    for p in 0..br {
        for q in 0..br {
            let r = &corr[p + q + 1];
            for a in 0..n_s {
                for b in 0..n_s {
                    hankel[(p * n_s + a, q * n_s + b)] = r[(a, b)];
                }
            }
        }
    }

    let svd = hankel.svd(true, false);
    let u = svd.u.as_ref().expect("u requested");
    let singular = &svd.singular_values;
    let order = cfg.order.min(singular.len());
    // Observability factor O = U₁ √S₁.
    let mut obs = DMatrix::zeros(br * n_s, order);
    for c in 0..order {
        let s_sqrt = singular[c].max(0.0).sqrt();
        for r in 0..br * n_s {
            obs[(r, c)] = u[(r, c)] * s_sqrt;
        }
    }

    // A from the shift structure, C from the first block row.
    let rows = (br - 1) * n_s;
    let o_up = obs.rows(0, rows).into_owned();
    let o_down = obs.rows(n_s, rows).into_owned();
    let a = o_up
        .svd(true, true)
        .solve(&o_down, 1e-12)
        .map_err(|e| Error::Identification(format!("observability shift solve failed: {e}")))?;
    let c_mat = obs.rows(0, n_s).into_owned();

    let poles = complex_eigen(&a)?;
    let fs = record.sample_rate;
    let f_band = 0.47 * fs;
    let mut modes = Vec::new();
    for (mu, v) in poles {
        if mu.im <= 0.0 {
            continue; // keep one representative per conjugate pair
        }
        // Continuous pole s = fs · ln μ.
        let s_re = fs * mu.norm().ln();
        let s_im = fs * mu.arg();
        let omega = (s_re * s_re + s_im * s_im).sqrt();
        if omega <= 0.0 {
            continue;
        }
        let damping = -s_re / omega;
        let frequency = omega / (2.0 * std::f64::consts::PI);
        if !(damping > 0.0 && damping < cfg.max_damping) || frequency >= f_band {
            continue;
        }
        // Shape ψ = C v, rotated to minimize imaginary energy, then real part.
        let psi_c = DVector::from_iterator(
            order,
            (0..order).map(|i| v[i]),
        );
        let psi = &c_mat.map(|x| Complex::new(x, 0.0)) * psi_c;
        let shape = realify(psi.as_slice());
        modes.push(RawMode {
            frequency,
            lambda: omega * omega,
            damping,
            shape,
        });
    }
    modes.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    if modes.len() < cfg.min_modes {
        return Err(Error::Identification(format!(
            "only {} stable physical modes identified, expected {}; retry with a new excitation seed",
            modes.len(),
            cfg.min_modes
        )));
    }
    Ok(modes)
}

/// Eigenvalues and eigenvectors of a small real matrix via Schur eigenvalues
/// plus shifted inverse iteration.
fn complex_eigen(a: &DMatrix<f64>) -> Result<Vec<(Complex<f64>, DVector<Complex<f64>>)>> {
    let n = a.nrows();
    let values = a.clone().complex_eigenvalues();
    let a_c = a.map(|x| Complex::new(x, 0.0));
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let mu = values[idx];
        if mu.im <= 0.0 {
            continue; // conjugates are reconstructed from the upper half-plane
        }
        let scale = mu.norm().max(1e-30);
        let mut v: Option<DVector<Complex<f64>>> = None;
        for attempt in 0..4 {
            let shift = mu + Complex::new(0.0, scale * 1e-8 * 10f64.powi(attempt));
            let mut m = a_c.clone();
            for i in 0..n {
                m[(i, i)] -= shift;
            }
            let lu = m.lu();
            let mut x = DVector::from_element(n, Complex::new(1.0, 0.0));
            let mut ok = true;
            for _ in 0..3 {
                match lu.solve(&x) {
                    Some(sol) => {
                        let norm = sol.norm();
                        if !norm.is_finite() || norm == 0.0 {
                            ok = false;
                            break;
                        }
                        x = sol / Complex::new(norm, 0.0);
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let residual = (&a_c * &x - x.clone() * mu).norm();
            if residual < 1e-6 * scale.max(1.0) {
                v = Some(x);
                break;
            }
            v = Some(x); // keep the best effort; next attempt may refine
        }
        let v = v.ok_or_else(|| {
            Error::Identification(format!("inverse iteration failed for pole {mu}"))
        })?;
        out.push((mu, v));
    }
    Ok(out)
}

/// Rotates a complex shape by the phase that minimizes imaginary energy and
/// returns the unit-norm real part.
fn realify(psi: &[Complex<f64>]) -> Vec<f64> {
    let sum_sq: Complex<f64> = psi.iter().map(|z| z * z).sum();
    let angle = 0.5 * sum_sq.arg();
    let rot = Complex::from_polar(1.0, -angle);
    let mut shape: Vec<f64> = psi.iter().map(|z| (z * rot).re).collect();
    let norm = shape.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in shape.iter_mut() {
            *x /= norm;
        }
    }
    shape
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_generalized_eig;
    use crate::vibration::simulate::{simulate_modal_response, ModalBasis};
    use crate::vibration::{mac, match_modes};
    use nalgebra::DMatrix;

    #[test]
    fn two_dof_frequencies_recovered_noise_free() {
        // Analytic oracle: fixed-free chain m=1, k=400 → λ = 400·(3 ∓ √5)/2.
        let k = DMatrix::from_row_slice(2, 2, &[800.0, -400.0, -400.0, 400.0]);
        let m = DMatrix::identity(2, 2);
        let (vals, vecs) = dense_generalized_eig(&k, &m).unwrap();
        let exact = [200.0 * (3.0 - 5.0f64.sqrt()), 200.0 * (3.0 + 5.0f64.sqrt())];
        for (v, e) in vals.iter().zip(exact) {
            assert!((v - e).abs() < 1e-9);
        }
        let basis = ModalBasis::from_parts(
            vals.iter().map(|l| l.sqrt()).collect(),
            vec![0.02; 2],
            vecs.clone(),
            vecs.clone(),
        )
        .unwrap();
        let record = simulate_modal_response(&basis, 16.0, 8000.0, 1.0, 11).unwrap();
        let cfg = SsiConfig {
            order: 4,
            block_rows: 20,
            min_modes: 2,
            max_damping: 0.2,
        };
        let modes = ssi_identify(&record, &cfg).unwrap();
        assert!(modes.len() >= 2);
        for (mode, lam_exact) in modes.iter().take(2).zip(exact) {
            let f_exact = lam_exact.sqrt() / (2.0 * std::f64::consts::PI);
            assert!(
                (mode.frequency - f_exact).abs() / f_exact < 0.001,
                "identified {} Hz vs analytic {} Hz",
                mode.frequency,
                f_exact
            );
        }
        // Shapes line up with the analytic eigenvectors.
        let reference: Vec<Vec<f64>> = (0..2).map(|m| vec![vecs[(0, m)], vecs[(1, m)]]).collect();
        let ds = match_modes(&modes, &reference, 0.0).unwrap();
        for (m, shape) in ds.shapes.as_ref().unwrap().iter().enumerate() {
            assert!(mac(shape, &reference[m]) > 0.999);
        }
    }

    #[test]
    fn config_validation_errors() {
        let record = AccelerationRecord {
            sample_rate: 10.0,
            duration: 1.0,
            channels: vec![vec![0.0; 10]; 2],
            noisy: false,
            seed: 0,
        };
        let bad_order = SsiConfig {
            order: 5,
            ..SsiConfig::default()
        };
        assert!(matches!(ssi_identify(&record, &bad_order), Err(Error::Config(_))));
        let too_small = SsiConfig {
            order: 4,
            block_rows: 1,
            min_modes: 2,
            max_damping: 0.2,
        };
        assert!(matches!(ssi_identify(&record, &too_small), Err(Error::Config(_))));
    }
}
