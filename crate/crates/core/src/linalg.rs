//! Banded symmetric linear algebra and a subspace eigensolver.
//!
//! The bridge meshes are long and thin; with column-major node numbering the
//! stiffness/mass matrices have a half-bandwidth of `2·ny + 5`, so a banded
//! Cholesky factorization is orders of magnitude cheaper than any dense
//! approach. The generalized eigensolver is classic subspace iteration with
//! Rayleigh–Ritz projection, which only needs banded solves and is warm-
//! startable across nearby damage states (used heavily by the surrogate grid
//! builder).

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Symmetric banded matrix, lower triangle stored row-wise.
///
/// `data[i * (hbw + 1) + hbw - (i - j)]` holds `A[i][j]` for
/// `i - hbw <= j <= i`; entries left of the band are padding.
#[derive(Debug, Clone)]
pub struct SymBand {
    n: usize,
    hbw: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, hbw: usize) -> Self {
        Self {
            n,
            hbw,
            data: vec![0.0; n * (hbw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hbw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.hbw);
        i * (self.hbw + 1) + self.hbw - (i - j)
    }

    /// Entry `A[i][j]`; either triangle may be addressed.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.hbw {
            return 0.0;
        }
        self.data[self.idx(r, c)]
    }

    /// Adds `v` to `A[i][j]` (and by symmetry to `A[j][i]`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        assert!(
            r - c <= self.hbw,
            "entry ({i},{j}) outside half-bandwidth {}",
            self.hbw
        );
        let k = self.idx(r, c);
        self.data[k] += v;
    }

    /// `y = A x` exploiting symmetry.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.fill(0.0);
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.hbw);
            let row = &self.data[i * (self.hbw + 1)..(i + 1) * (self.hbw + 1)];
            let mut acc = row[self.hbw] * x[i];
            for j in jmin..i {
                let a = row[self.hbw - (i - j)];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc;
        }
    }

    /// Applies `A` to each column of `x`.
    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, x.ncols());
        let mut col = vec![0.0; self.n];
        let mut res = vec![0.0; self.n];
        for c in 0..x.ncols() {
            for i in 0..self.n {
                col[i] = x[(i, c)];
            }
            self.mul_vec(&col, &mut res);
            for i in 0..self.n {
                out[(i, c)] = res[i];
            }
        }
        out
    }

    /// Largest absolute entry, useful for relative symmetry/residual checks.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// In-place Cholesky factorization `A = L Lᵀ`.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let mut l = self.data.clone();
        let hbw = self.hbw;
        let w = hbw + 1;
        for i in 0..self.n {
            let jmin = i.saturating_sub(hbw);
            for j in jmin..=i {
                let mut s = l[i * w + hbw - (i - j)];
                for k in jmin..j {
                    s -= l[i * w + hbw - (i - k)] * l[j * w + hbw - (j - k)];
                }
                if j < i {
                    l[i * w + hbw - (i - j)] = s / l[j * w + hbw];
                } else {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::Numerical(format!(
                            "banded Cholesky failed at pivot {i}: diagonal {s:.3e} not positive"
                        )));
                    }
                    l[i * w + hbw] = s.sqrt();
                }
            }
        }
        Ok(BandCholesky {
            n: self.n,
            hbw,
            l,
        })
    }
}

/// Banded Cholesky factor; solves `A x = b` by forward/back substitution.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    hbw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let w = self.hbw + 1;
        // L y = b
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.hbw);
            let mut s = b[i];
            for j in jmin..i {
                s -= self.l[i * w + self.hbw - (i - j)] * b[j];
            }
            b[i] = s / self.l[i * w + self.hbw];
        }
        // Lᵀ x = y
        for i in (0..self.n).rev() {
            let jmax = (i + self.hbw).min(self.n - 1);
            let mut s = b[i];
            for j in i + 1..=jmax {
                s -= self.l[j * w + self.hbw - (j - i)] * b[j];
            }
            b[i] = s / self.l[i * w + self.hbw];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves for each column of `b`.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        let mut col = vec![0.0; self.n];
        for c in 0..b.ncols() {
            for i in 0..self.n {
                col[i] = b[(i, c)];
            }
            self.solve_in_place(&mut col);
            for i in 0..self.n {
                out[(i, c)] = col[i];
            }
        }
        out
    }
}

/// Lowest eigenpairs of the generalized problem `K φ = λ M φ`.
#[derive(Debug, Clone)]
pub struct GeneralizedEig {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Matching eigenvectors as columns, M-normalized (`φᵀ M φ = 1`).
    pub vectors: DMatrix<f64>,
    /// Subspace iterations used (diagnostic).
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct EigOptions {
    /// Relative eigenvalue change below which the iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra trial vectors beyond the requested count (guards convergence rate).
    pub extra_vectors: usize,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 400,
            extra_vectors: 8,
        }
    }
}

/// Subspace iteration with Rayleigh–Ritz projection.
///
/// `warm` may carry converged vectors from a nearby configuration; missing
/// columns are filled with seeded Gaussian vectors so the result stays
/// deterministic.
pub fn lowest_generalized_eigs(
    k: &SymBand,
    m: &SymBand,
    n_modes: usize,
    opts: &EigOptions,
    warm: Option<&DMatrix<f64>>,
) -> Result<GeneralizedEig> {
    let n = k.n();
    assert_eq!(m.n(), n);
    if n_modes == 0 || n_modes > n {
        return Err(Error::Domain(format!(
            "requested {n_modes} modes from a {n}-DOF system"
        )));
    }
    let q = (n_modes.max(2 * n_modes.min(n_modes)) + opts.extra_vectors)
        .max(2 * n_modes)
        .min(n);

    let chol = k.cholesky()?;

    let mut x = DMatrix::zeros(n, q);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_ba5e);
    let filled = warm.map_or(0, |w| w.ncols().min(q));
    if let Some(w) = warm {
        for c in 0..filled {
            for i in 0..n {
                x[(i, c)] = w[(i, c)];
            }
        }
    }
    for c in filled..q {
        for i in 0..n {
            x[(i, c)] = StandardNormal.sample(&mut rng);
        }
    }

    let mut prev: Vec<f64> = vec![f64::INFINITY; n_modes];
    let mut values = vec![0.0; n_modes];
    for iter in 1..=opts.max_iter {
        let y = m.mul_mat(&x); // M X
        let xbar = chol.solve_mat(&y); // K⁻¹ M X
        let kr = symmetrize(xbar.transpose() * &y); // X̄ᵀ K X̄  (K X̄ = Y)
        let mxbar = m.mul_mat(&xbar);
        let mr = symmetrize(xbar.transpose() * &mxbar);

        let (d, z) = reduced_generalized_eig(&kr, &mr)?;
        x = &xbar * &z;

        values.copy_from_slice(&d[..n_modes]);
        let worst = values
            .iter()
            .zip(&prev)
            .map(|(a, b)| ((a - b) / a).abs())
            .fold(0.0f64, f64::max);
        if iter >= 2 && worst < opts.tol {
            let vectors = finalize_vectors(m, x.columns(0, n_modes).into_owned());
            return Ok(GeneralizedEig {
                values,
                vectors,
                iterations: iter,
            });
        }
        prev.copy_from_slice(&values);
    }
    Err(Error::Numerical(format!(
        "subspace iteration did not converge in {} iterations (last eigenvalues {:?})",
        opts.max_iter, values
    )))
}

/// Dense generalized symmetric eigensolver `K φ = λ M φ` (M positive definite),
/// eigenvalues ascending. Used for reduced problems and as a brute-force
/// oracle on small meshes.
pub fn dense_generalized_eig(
    k: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    reduced_generalized_eig(k, m)
}

fn reduced_generalized_eig(
    kr: &DMatrix<f64>,
    mr: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = Cholesky::new(mr.clone()).ok_or_else(|| {
        Error::Numerical("projected mass matrix not positive definite".to_string())
    })?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(mr.nrows(), mr.ncols()))
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".to_string()))?;
    let c = symmetrize(&l_inv * kr * l_inv.transpose());
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let z_unsorted = l_inv.transpose() * eig.eigenvectors;
    let nq = mr.nrows();
    let mut d = Vec::with_capacity(nq);
    let mut z = DMatrix::zeros(nq, nq);
    for (out_c, &src) in order.iter().enumerate() {
        d.push(eig.eigenvalues[src]);
        for i in 0..nq {
            z[(i, out_c)] = z_unsorted[(i, src)];
        }
    }
    Ok((d, z))
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    let at = a.transpose();
    (a + at) * 0.5
}

/// M-normalizes columns and fixes the sign so the largest-magnitude component
/// is positive (deterministic orientation for mode tracking).
fn finalize_vectors(m: &SymBand, mut v: DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    let mut col = vec![0.0; n];
    let mut mv = vec![0.0; n];
    for c in 0..v.ncols() {
        for i in 0..n {
            col[i] = v[(i, c)];
        }
        m.mul_vec(&col, &mut mv);
        let norm2: f64 = col.iter().zip(&mv).map(|(a, b)| a * b).sum();
        let scale = 1.0 / norm2.sqrt();
        let mut max_abs = 0.0;
        let mut max_idx = 0;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > max_abs {
                max_abs = x.abs();
                max_idx = i;
            }
        }
        let sign = if col[max_idx] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            v[(i, c)] *= scale * sign;
        }
    }
    v
}

/// Equilibrium residual `‖Ax − b‖ / ‖b‖`.
pub fn relative_residual(a: &SymBand, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    a.mul_vec(x, &mut ax);
    let num: f64 = ax
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn laplacian(n: usize) -> SymBand {
        // Tridiagonal [-1, 2, -1] with Dirichlet ends: known spectrum.
        let mut a = SymBand::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        a
    }

    fn identity_band(n: usize) -> SymBand {
        let mut m = SymBand::zeros(n, 1);
        for i in 0..n {
            m.add(i, i, 1.0);
        }
        m
    }

    #[test]
    fn banded_cholesky_solves() {
        let n = 50;
        let a = laplacian(n);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = a.cholesky().unwrap().solve(&b);
        assert!(relative_residual(&a, &x, &b) < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = SymBand::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, -2.0);
        a.add(2, 2, 1.0);
        assert!(matches!(a.cholesky(), Err(Error::Numerical(_))));
    }

    #[test]
    fn subspace_matches_laplacian_spectrum() {
        let n = 120;
        let a = laplacian(n);
        let m = identity_band(n);
        // λ_k = 2 − 2 cos(kπ/(n+1)) for the Dirichlet Laplacian.
        let eig = lowest_generalized_eigs(&a, &m, 5, &EigOptions::default(), None).unwrap();
        for (k, lam) in eig.values.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos();
            assert_relative_eq!(*lam, exact, max_relative = 1e-9);
        }
        // M-orthonormality.
        let mv = m.mul_mat(&eig.vectors);
        let gram = eig.vectors.transpose() * mv;
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn subspace_warm_start_converges_faster() {
        let n = 200;
        let a = laplacian(n);
        let m = identity_band(n);
        let cold = lowest_generalized_eigs(&a, &m, 4, &EigOptions::default(), None).unwrap();
        let warm =
            lowest_generalized_eigs(&a, &m, 4, &EigOptions::default(), Some(&cold.vectors))
                .unwrap();
        assert!(warm.iterations <= cold.iterations);
        for (a, b) in warm.values.iter().zip(&cold.values) {
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn dense_oracle_agrees_with_banded_path() {
        let n = 40;
        let a = laplacian(n);
        let m = identity_band(n);
        let mut ad = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                ad[(i, j)] = a.get(i, j);
            }
        }
        let (dense_vals, _) = dense_generalized_eig(&ad, &DMatrix::identity(n, n)).unwrap();
        let eig = lowest_generalized_eigs(&a, &m, 3, &EigOptions::default(), None).unwrap();
        for k in 0..3 {
            assert_relative_eq!(eig.values[k], dense_vals[k], max_relative = 1e-9);
        }
    }
}
