//! MAP estimation and the Laplace (Gaussian) posterior approximation.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::{Error, Result};

use super::optimize::{nelder_mead, OptResult};

/// MAP search by multi-start Nelder–Mead on a negative log-density.
///
/// Returns the best run over the given starts; errors when no start converges
/// within the budget.
pub fn minimize_multistart(
    f: impl Fn(&[f64]) -> f64,
    starts: &[Vec<f64>],
    steps: &[f64],
    f_tol: f64,
    max_evals: usize,
) -> Result<OptResult> {
    let mut best: Option<OptResult> = None;
    for start in starts {
        let run = nelder_mead(&f, start, steps, f_tol, max_evals);
        let better = best.as_ref().map_or(true, |b| run.f < b.f);
        if better {
            best = Some(run);
        }
    }
    let best = best.ok_or_else(|| Error::Inference("no MAP starts supplied".to_string()))?;
    if !best.converged {
        return Err(Error::Inference(format!(
            "MAP optimizer exhausted {} evaluations without converging (best f = {:.6e} at {:?})",
            best.evals, best.f, best.x
        )));
    }
    Ok(best)
}

/// Central finite-difference Hessian with relative step `1e-4`.
pub fn fd_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let h: Vec<f64> = x.iter().map(|xi| 1e-4 * xi.abs().max(1.0)).collect();
    let f0 = f(x);
    let mut hess = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    for i in 0..d {
        xp.copy_from_slice(x);
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            xp.copy_from_slice(x);
            xp[i] = x[i] + h[i];
            xp[j] = x[j] + h[j];
            let fpp = f(&xp);
            xp[j] = x[j] - h[j];
            let fpm = f(&xp);
            xp[i] = x[i] - h[i];
            let fmm = f(&xp);
            xp[j] = x[j] + h[j];
            let fmp = f(&xp);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Gaussian approximation at a mode: covariance is the inverse Hessian of the
/// negative log-density. Fails when the Hessian is not positive definite.
pub fn gaussian_at_mode(
    f: impl Fn(&[f64]) -> f64,
    mode: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let hess = fd_hessian(&f, mode);
    let chol = Cholesky::new(hess.clone()).ok_or_else(|| {
        Error::Inference(
            "log-posterior Hessian not positive definite at the MAP; fall back to MCMC"
                .to_string(),
        )
    })?;
    let cov = chol.inverse();
    Ok((DVector::from_column_slice(mode), cov))
}
