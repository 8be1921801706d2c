//! Derivative-free simplex minimizer.
//!
//! Nelder–Mead with the standard coefficients. Chosen over gradient methods
//! because nearest-neighbour surrogates make the posterior piecewise constant
//! across cell boundaries; the simplex only compares function values.

/// Outcome of a simplex run.
#[derive(Debug, Clone)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0` with per-dimension initial steps.
/// Converges when the simplex function-value spread falls below `f_tol`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    f_tol: f64,
    max_evals: usize,
) -> OptResult {
    let d = x0.len();
    assert_eq!(step.len(), d);
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step[i];
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[d].1;
        if (worst - best).abs() < f_tol {
            return OptResult {
                x: simplex[0].0.clone(),
                f: best,
                evals,
                converged: true,
            };
        }
        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; d];
        for (x, _) in simplex.iter().take(d) {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / d as f64;
            }
        }
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&simplex[d].0)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let f_reflect = eval(&reflect, &mut evals);
        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&simplex[d].0)
                .map(|(c, w)| c + gamma * alpha * (c - w))
                .collect();
            let f_expand = eval(&expand, &mut evals);
            simplex[d] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
            continue;
        }
        if f_reflect < simplex[d - 1].1 {
            simplex[d] = (reflect, f_reflect);
            continue;
        }
        let contract: Vec<f64> = if f_reflect < simplex[d].1 {
            centroid
                .iter()
                .zip(&reflect)
                .map(|(c, r)| c + rho * (r - c))
                .collect()
        } else {
            centroid
                .iter()
                .zip(&simplex[d].0)
                .map(|(c, w)| c + rho * (w - c))
                .collect()
        };
        let f_contract = eval(&contract, &mut evals);
        if f_contract < simplex[d].1.min(f_reflect) {
            simplex[d] = (contract, f_contract);
            continue;
        }
        // Shrink toward the best vertex.
        let best_x = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            for (x, b) in vertex.0.iter_mut().zip(&best_x) {
                *x = b + sigma * (*x - *b);
            }
            vertex.1 = eval(&vertex.0.clone(), &mut evals);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    OptResult {
        x: simplex[0].0.clone(),
        f: simplex[0].1,
        evals,
        converged: false,
    }
}
