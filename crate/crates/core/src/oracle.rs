//! Centralized ground truth: exact aggregation, aggregation sensitivities,
//! pseudo-gradient, reference equilibrium, and the auxiliary reference
//! quantities the diagnostics compare engine states against.
//!
//! Everything goes through symmetric positive definite linear solves against
//! the summed inner Hessian; the inverse is never formed.

use crate::error::{Error, Result};
use crate::game::BilevelGame;
use crate::linalg::{add, dist, norm, scaled, spd_solve, sub, Mat};

/// Reference quantities at one action profile.
#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Aggregation `sigma(x)`, minimizer of the inner objective.
    pub sigma: Vec<f64>,
    /// Per-player aggregation sensitivities, each `m1 x m2`.
    pub grad_sigma: Vec<Mat>,
    /// Per-player pseudo-gradient components, each `m1`.
    pub pseudo_gradient: Vec<Vec<f64>>,
    /// Per-player targets of the auxiliary descent,
    /// `h_i = -(sum_j hess_j)^{-1} grad_y J_i` at the aggregation.
    pub h: Vec<Vec<f64>>,
    /// Average inner Hessian at the aggregation.
    pub gbar: Mat,
}

impl OracleResult {
    pub fn stacked_pseudo_gradient(&self) -> Vec<f64> {
        self.pseudo_gradient.iter().flatten().copied().collect()
    }
}

/// Outcome of the reference equilibrium search.
#[derive(Debug, Clone)]
pub struct SeSolve {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Fixed-point residual at the returned actions.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the residual stalled and the step had to be cut.
    pub stalled: bool,
}

const NEWTON_MAX_ITER: usize = 200;

/// Minimize the inner objective at frozen actions by Newton iteration on the
/// summed gradient; exact on quadratics in one step.
pub fn solve_sigma(game: &dyn BilevelGame, x: &[Vec<f64>], tol: f64) -> Result<Vec<f64>> {
    let n = game.player_count();
    let m2 = game.inner_dim();
    assert_eq!(x.len(), n);
    let mut y = vec![0.0; m2];
    let mut last_residual = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let mut residual = vec![0.0; m2];
        let mut hess = Mat::zeros(m2, m2);
        for i in 0..n {
            let g = game.inner_grad_y(i, &x[i], &y);
            for (r, gi) in residual.iter_mut().zip(&g) {
                *r += gi;
            }
            hess.add_assign(&game.inner_hess_yy(i, &x[i], &y));
        }
        let res_norm = norm(&residual);
        if !res_norm.is_finite() {
            return Err(Error::NumericalFailure("inner Newton residual not finite".into()));
        }
        if res_norm <= tol {
            return Ok(y);
        }
        last_residual = res_norm;
        let step = spd_solve(&hess, &residual)?;
        for (yi, si) in y.iter_mut().zip(&step) {
            *yi -= si;
        }
    }
    Err(Error::MaxIterExceeded { iters: NEWTON_MAX_ITER, residual: last_residual })
}

/// Aggregation, sensitivities, pseudo-gradient and auxiliary references at
/// one action profile.
pub fn pseudo_gradient(game: &dyn BilevelGame, x: &[Vec<f64>], tol: f64) -> Result<OracleResult> {
    let n = game.player_count();
    let m1 = game.outer_dim();
    let m2 = game.inner_dim();
    let sigma = solve_sigma(game, x, tol)?;

    let mut summed = Mat::zeros(m2, m2);
    for i in 0..n {
        summed.add_assign(&game.inner_hess_yy(i, &x[i], &sigma));
    }

    let mut grad_sigma = Vec::with_capacity(n);
    let mut pg = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    for i in 0..n {
        let jac = game.inner_jac_xy(i, &x[i], &sigma);
        // Row r of grad_sigma solves H s = jac_r, then is negated.
        let mut gs = Mat::zeros(m1, m2);
        for r in 0..m1 {
            let row: Vec<f64> = (0..m2).map(|c| jac.at(r, c)).collect();
            let s = spd_solve(&summed, &row)?;
            for c in 0..m2 {
                *gs.at_mut(r, c) = -s[c];
            }
        }
        let gy = game.outer_grad_y(i, &x[i], &sigma);
        let mut f_i = game.outer_grad_x(i, &x[i], &sigma);
        let correction = gs.mul_vec(&gy);
        for (f, c) in f_i.iter_mut().zip(&correction) {
            *f += c;
        }
        let h_i = scaled(&spd_solve(&summed, &gy)?, -1.0);
        grad_sigma.push(gs);
        pg.push(f_i);
        h.push(h_i);
    }

    Ok(OracleResult {
        sigma,
        grad_sigma,
        pseudo_gradient: pg,
        h,
        gbar: summed.scale(1.0 / n as f64),
    })
}

/// Reference Stackelberg equilibrium as the fixed point of the projected
/// pseudo-gradient map, iterated with exact oracle gradients.
///
/// Any positive `k` is accepted; if the residual stalls or grows the step is
/// halved and the iteration restarts from the best point seen.
pub fn solve_se(
    game: &dyn BilevelGame,
    k: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SeSolve> {
    let n = game.player_count();
    if !(k > 0.0) {
        return Err(Error::InvalidParams(format!("step k must be positive, got {k}")));
    }
    let mut x: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let dim = game.action_set(i).dim();
            game.action_set(i).project(&vec![0.0; dim])
        })
        .collect::<Result<_>>()?;

    let mut step = k;
    let mut best_x = x.clone();
    let mut best_res = f64::INFINITY;
    let mut stalled = false;
    let mut last_check = f64::INFINITY;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let oracle = pseudo_gradient(game, &x, tol.min(1e-12))?;
        let mut next = Vec::with_capacity(n);
        let mut residual = 0.0f64;
        for i in 0..n {
            let mut target = x[i].clone();
            for (t, f) in target.iter_mut().zip(&oracle.pseudo_gradient[i]) {
                *t -= step * f;
            }
            let projected = game.action_set(i).project(&target)?;
            residual += dist(&projected, &x[i]).powi(2);
            next.push(projected);
        }
        let residual = residual.sqrt();
        if !residual.is_finite() {
            // Diverged outright; restart with a smaller step.
            step *= 0.5;
            x = best_x.clone();
            stalled = true;
            continue;
        }
        if residual < best_res {
            best_res = residual;
            best_x = next.clone();
        }
        if residual <= tol {
            x = next;
            break;
        }
        // Stall detection every 200 rounds: the residual of a contraction
        // should shrink noticeably over that window.
        if iterations % 200 == 0 {
            if residual > 0.97 * last_check {
                step *= 0.5;
                x = best_x.clone();
                stalled = true;
                last_check = f64::INFINITY;
                continue;
            }
            last_check = residual;
        }
        x = next;
    }

    let oracle = pseudo_gradient(game, &x, 1e-12)?;
    let mut residual = 0.0f64;
    for i in 0..n {
        let mut target = x[i].clone();
        for (t, f) in target.iter_mut().zip(&oracle.pseudo_gradient[i]) {
            *t -= step * f;
        }
        let projected = game.action_set(i).project(&target)?;
        residual += dist(&projected, &x[i]).powi(2);
    }
    let residual = residual.sqrt();
    let y = solve_sigma(game, &x, 1e-13)?;
    Ok(SeSolve { x, y, residual, iterations, converged: residual <= tol, stalled })
}

/// Minimizer of the perturbed inner problem
/// `delta * J_i(x_i, y) + sum_j g_j(x_j, y)` for one player.
pub fn solve_perturbed_inner(
    game: &dyn BilevelGame,
    i: usize,
    x: &[Vec<f64>],
    delta: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    if delta < 0.0 {
        return Err(Error::InvalidParams(format!("delta must be nonnegative, got {delta}")));
    }
    let n = game.player_count();
    let m2 = game.inner_dim();
    let mut y = vec![0.0; m2];
    let mut last_residual = f64::INFINITY;
    let fd_h = 1e-6;
    for _ in 0..NEWTON_MAX_ITER {
        let mut residual = scaled(&game.outer_grad_y(i, &x[i], &y), delta);
        let mut hess = Mat::zeros(m2, m2);
        for j in 0..n {
            let g = game.inner_grad_y(j, &x[j], &y);
            for (r, gi) in residual.iter_mut().zip(&g) {
                *r += gi;
            }
            hess.add_assign(&game.inner_hess_yy(j, &x[j], &y));
        }
        if delta > 0.0 {
            // The outer cost's Hessian in y is not an evaluator; difference
            // the gradient instead.
            let mut yp = y.clone();
            for c in 0..m2 {
                yp[c] = y[c] + fd_h;
                let gp = game.outer_grad_y(i, &x[i], &yp);
                yp[c] = y[c] - fd_h;
                let gm = game.outer_grad_y(i, &x[i], &yp);
                yp[c] = y[c];
                for r in 0..m2 {
                    *hess.at_mut(r, c) += delta * (gp[r] - gm[r]) / (2.0 * fd_h);
                }
            }
            // Symmetrize finite-difference noise away.
            for r in 0..m2 {
                for c in (r + 1)..m2 {
                    let avg = 0.5 * (hess.at(r, c) + hess.at(c, r));
                    *hess.at_mut(r, c) = avg;
                    *hess.at_mut(c, r) = avg;
                }
            }
        }
        let res_norm = norm(&residual);
        if !res_norm.is_finite() {
            return Err(Error::NumericalFailure("perturbed inner residual not finite".into()));
        }
        if res_norm <= tol {
            return Ok(y);
        }
        last_residual = res_norm;
        let step = spd_solve(&hess, &residual)?;
        for (yi, si) in y.iter_mut().zip(&step) {
            *yi -= si;
        }
    }
    Err(Error::MaxIterExceeded { iters: NEWTON_MAX_ITER, residual: last_residual })
}

/// Exact product `grad_sigma_i * grad_y J_i` at the aggregation: the target
/// of the first-order engine's two-point estimate.
pub fn estimate_target(game: &dyn BilevelGame, oracle: &OracleResult, i: usize, x: &[Vec<f64>]) -> Vec<f64> {
    let gy = game.outer_grad_y(i, &x[i], &oracle.sigma);
    oracle.grad_sigma[i].mul_vec(&gy)
}

/// Variational-inequality optimality gap of a candidate equilibrium:
/// the most negative `<F_i(x), u - x_i>` over sampled/vertex points `u`.
pub fn vi_optimality_gap(game: &dyn BilevelGame, x: &[Vec<f64>], samples: usize) -> Result<f64> {
    let oracle = pseudo_gradient(game, x, 1e-12)?;
    let mut rng = crate::rng::Rng::seed_from(0xA11_0DD5);
    let mut worst = f64::INFINITY;
    for i in 0..game.player_count() {
        let set = game.action_set(i);
        let f_i = &oracle.pseudo_gradient[i];
        let mut candidates: Vec<Vec<f64>> = Vec::new();
        if let crate::game::ActionSet::Box { lower, upper } = set {
            if lower.len() <= 8 {
                let m = lower.len();
                for mask in 0..(1usize << m) {
                    let v: Vec<f64> = (0..m)
                        .map(|c| if mask >> c & 1 == 1 { upper[c] } else { lower[c] })
                        .collect();
                    candidates.push(v);
                }
            }
        }
        for _ in 0..samples {
            candidates.push(set.sample(&mut rng));
        }
        for u in candidates {
            let gap = crate::linalg::dot(f_i, &sub(&u, &x[i]));
            worst = worst.min(gap);
        }
    }
    Ok(worst)
}

/// Check `sigma` against the game's closed form when one is provided.
pub fn check_reference_aggregation(game: &dyn BilevelGame, x: &[Vec<f64>], tol: f64) -> Result<bool> {
    match game.reference_aggregation(x) {
        None => Ok(false),
        Some(reference) => {
            let sigma = solve_sigma(game, x, 1e-13)?;
            if dist(&sigma, &reference) > tol {
                return Err(Error::NumericalFailure(format!(
                    "closed-form aggregation {:?} disagrees with solver {:?}",
                    reference, sigma
                )));
            }
            Ok(true)
        }
    }
}

/// Inner stationarity residual `|sum_i grad_y g_i(x_i, sigma)|`.
pub fn inner_stationarity(game: &dyn BilevelGame, x: &[Vec<f64>], sigma: &[f64]) -> f64 {
    let mut total = vec![0.0; game.inner_dim()];
    for i in 0..game.player_count() {
        total = add(&total, &game.inner_grad_y(i, &x[i], sigma));
    }
    norm(&total)
}
