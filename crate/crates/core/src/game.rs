//! The bilevel aggregative game abstraction: per-player cost evaluators,
//! action sets with projection, problem constants, and admissible step sizes.
//!
//! Outer costs `J_i(x_i, y)` live on `R^{m1} x R^{m2}`; inner bifunctions
//! `g_i(x_i, y)` are strongly convex in `y`. The aggregation is the minimizer
//! of `sum_i g_i(x_i, y)` over `y` and is computed by the oracle module.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::SpectralInfo;
use crate::linalg::{dist, norm, sub, sym_eigen, Mat};
use crate::rng::Rng;

/// Custom projection target for action sets that are neither boxes nor balls.
pub trait Projector: Send + Sync {
    fn dim(&self) -> usize;
    fn project(&self, v: &[f64]) -> Vec<f64>;
    /// Radius bound `sup |x|` over the set.
    fn radius_bound(&self) -> f64;
}

/// Nonempty convex compact action set of one player.
#[derive(Clone)]
pub enum ActionSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Custom(Arc<dyn Projector>),
}

impl std::fmt::Debug for ActionSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActionSet::Box { lower, upper } => {
                f.debug_struct("Box").field("lower", lower).field("upper", upper).finish()
            }
            ActionSet::Ball { center, radius } => {
                f.debug_struct("Ball").field("center", center).field("radius", radius).finish()
            }
            ActionSet::Custom(p) => f.debug_struct("Custom").field("dim", &p.dim()).finish(),
        }
    }
}

impl ActionSet {
    pub fn unit_box(dim: usize) -> Self {
        ActionSet::Box { lower: vec![0.0; dim], upper: vec![1.0; dim] }
    }

    pub fn symmetric_box(dim: usize, half_width: f64) -> Self {
        ActionSet::Box { lower: vec![-half_width; dim], upper: vec![half_width; dim] }
    }

    pub fn dim(&self) -> usize {
        match self {
            ActionSet::Box { lower, .. } => lower.len(),
            ActionSet::Ball { center, .. } => center.len(),
            ActionSet::Custom(p) => p.dim(),
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        Ok(match self {
            ActionSet::Box { lower, upper } => v
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&x, (&lo, &hi))| x.clamp(lo, hi))
                .collect(),
            ActionSet::Ball { center, radius } => {
                let d = sub(v, center);
                let len = norm(&d);
                if len <= *radius {
                    v.to_vec()
                } else {
                    let s = radius / len;
                    center.iter().zip(&d).map(|(c, di)| c + s * di).collect()
                }
            }
            ActionSet::Custom(p) => p.project(v),
        })
    }

    /// `sup |x|` over the set.
    pub fn radius_bound(&self) -> f64 {
        match self {
            ActionSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&lo, &hi)| lo.abs().max(hi.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
            ActionSet::Ball { center, radius } => norm(center) + radius,
            ActionSet::Custom(p) => p.radius_bound(),
        }
    }

    /// Deterministic sample from the set.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            ActionSet::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(&lo, &hi)| rng.uniform(lo, hi)).collect()
            }
            ActionSet::Ball { center, radius } => {
                // Rejection sampling in the bounding box.
                loop {
                    let d: Vec<f64> = (0..center.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
                    if norm(&d) <= 1.0 {
                        return center.iter().zip(&d).map(|(c, di)| c + radius * di).collect();
                    }
                }
            }
            ActionSet::Custom(p) => {
                let r = p.radius_bound();
                let raw: Vec<f64> = (0..p.dim()).map(|_| rng.uniform(-r, r)).collect();
                p.project(&raw)
            }
        }
    }
}

/// Analytic problem constants a benchmark can supply instead of sampling.
#[derive(Debug, Clone)]
pub struct RawConstants {
    /// Strong-convexity modulus of `sum_i g_i` in `y` (smallest eigenvalue of
    /// the summed Hessian).
    pub mu: f64,
    /// Common Lipschitz constant of the listed derivative maps.
    pub lipschitz: f64,
    /// Strong-monotonicity modulus of the pseudo-gradient.
    pub theta: f64,
    /// `sup |x|` over the action sets.
    pub action_radius: f64,
    /// Bound of the per-player inner Hessian Frobenius norm.
    pub hess_bound: f64,
    /// Bound of `|grad_y J_i|`.
    pub outer_grad_y_bound: f64,
    /// Bound of `|grad_y g_i|`.
    pub inner_grad_y_bound: f64,
    /// Bound of the mixed Jacobian Frobenius norm.
    pub jac_bound: f64,
    /// Bound of the outer cost's Hessian in `y`.
    pub outer_hess_bound: f64,
}

/// Full constant bundle gating the step sizes.
#[derive(Debug, Clone)]
pub struct ProblemConstants {
    pub mu: f64,
    pub lipschitz: f64,
    pub theta: f64,
    pub action_radius: f64,
    pub hess_bound: f64,
    pub outer_grad_y_bound: f64,
    pub inner_grad_y_bound: f64,
    pub jac_bound: f64,
    pub outer_hess_bound: f64,
    /// Aggregation Lipschitz constant `jac_bound / (sqrt(n) * mu)`.
    pub aggregation_lipschitz: f64,
    /// Pseudo-gradient Lipschitz constant.
    pub pseudo_gradient_lipschitz: f64,
    /// Radius inside which inner iterates are expected to stay.
    pub y_bound: f64,
}

impl ProblemConstants {
    pub fn from_raw(raw: &RawConstants, n: usize, y_bound: f64) -> Result<Self> {
        if raw.mu <= 0.0 {
            return Err(Error::NonPositiveModulus(format!("inner modulus {}", raw.mu)));
        }
        if raw.theta <= 0.0 {
            return Err(Error::NonPositiveModulus(format!("monotonicity modulus {}", raw.theta)));
        }
        let nf = n as f64;
        let mu = raw.mu;
        let ell = raw.jac_bound / (nf.sqrt() * mu);
        let k2 = raw.inner_grad_y_bound;
        let k3 = raw.jac_bound;
        let l0 = nf * raw.lipschitz
            * (k2 * (k3 + mu + k3 * ell + mu * ell) + (k3 * mu + mu * mu) * (1.0 + ell))
            / (mu * mu);
        let c = ProblemConstants {
            mu,
            lipschitz: raw.lipschitz,
            theta: raw.theta,
            action_radius: raw.action_radius,
            hess_bound: raw.hess_bound,
            outer_grad_y_bound: raw.outer_grad_y_bound,
            inner_grad_y_bound: raw.inner_grad_y_bound,
            jac_bound: raw.jac_bound,
            outer_hess_bound: raw.outer_hess_bound,
            aggregation_lipschitz: ell,
            pseudo_gradient_lipschitz: l0,
            y_bound,
        };
        for (name, v) in [
            ("lipschitz", c.lipschitz),
            ("action_radius", c.action_radius),
            ("hess_bound", c.hess_bound),
            ("inner_grad_y_bound", c.inner_grad_y_bound),
            ("jac_bound", c.jac_bound),
            ("aggregation_lipschitz", c.aggregation_lipschitz),
            ("pseudo_gradient_lipschitz", c.pseudo_gradient_lipschitz),
        ] {
            if !(v > 0.0) {
                return Err(Error::NonPositiveModulus(format!("{name} = {v}")));
            }
        }
        Ok(c)
    }

    /// Theoretical contraction factor of the inner primal-dual iteration for
    /// a frozen action profile (squared-Lyapunov ratio).
    pub fn pd_contraction_factor(&self, kappa: f64, lambda2: f64) -> f64 {
        let a = 1.0 - kappa * self.mu * (1.0 - kappa * self.lipschitz);
        let b = 1.0 - kappa * kappa * lambda2 * lambda2;
        a.max(b)
    }

    /// Theoretical contraction factor of the auxiliary descent iterate for a
    /// frozen profile. The `n mu_player` product of the analysis equals the
    /// summed modulus stored here.
    pub fn z_contraction_factor(&self, alpha: f64, n: usize) -> f64 {
        let nf = n as f64;
        (1.0 - self.mu * alpha + 2.0 * nf * nf * self.hess_bound * self.hess_bound * alpha * alpha)
            .max(0.0)
            .sqrt()
    }
}

/// Fixed and scheduled step sizes for both engines.
#[derive(Debug, Clone)]
pub struct StepSizes {
    /// Inner primal-dual step.
    pub kappa: f64,
    /// Auxiliary descent step.
    pub alpha: f64,
    /// Outer projected-gradient step.
    pub outer: f64,
    /// Schedule `eta_t = eta_b / (t + eta_a)`.
    pub eta_a: f64,
    pub eta_b: f64,
    /// Per-player pairwise primal-dual steps (first-order engine).
    pub beta: Vec<f64>,
    /// Per-player estimate parameters (first-order engine).
    pub delta: Vec<f64>,
}

impl StepSizes {
    pub fn eta(&self, t: usize) -> f64 {
        (self.eta_b / (t as f64 + self.eta_a)).min(1.0)
    }
}

/// The bilevel game: per-player evaluators for costs and derivatives.
///
/// Evaluators must be pure; the mixed Jacobian is oriented `m1 x m2` so that
/// the aggregation sensitivity is `-jac * H^{-1}` without transposes.
pub trait BilevelGame: Send + Sync {
    fn player_count(&self) -> usize;
    /// Outer action dimension `m1`.
    fn outer_dim(&self) -> usize;
    /// Inner/aggregation dimension `m2`.
    fn inner_dim(&self) -> usize;
    fn action_set(&self, i: usize) -> &ActionSet;

    /// `J_i(x_i, y)`.
    fn outer_cost(&self, i: usize, x_i: &[f64], y: &[f64]) -> f64;
    /// Gradient of `J_i` in `x_i`.
    fn outer_grad_x(&self, i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64>;
    /// Gradient of `J_i` in `y`.
    fn outer_grad_y(&self, i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64>;

    /// `g_i(x_i, y)`.
    fn inner_value(&self, i: usize, x_i: &[f64], y: &[f64]) -> f64;
    /// Gradient of `g_i` in `x_i`.
    fn inner_grad_x(&self, i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64>;
    /// Gradient of `g_i` in `y`.
    fn inner_grad_y(&self, i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64>;
    /// Jacobian of `inner_grad_y` in `x_i`, arranged `m1 x m2`.
    fn inner_jac_xy(&self, i: usize, x_i: &[f64], y: &[f64]) -> Mat;
    /// Hessian of `g_i` in `y`, `m2 x m2` symmetric.
    fn inner_hess_yy(&self, i: usize, x_i: &[f64], y: &[f64]) -> Mat;

    /// Exact constants, when the benchmark knows them.
    fn analytic_constants(&self, _y_bound: f64) -> Option<RawConstants> {
        None
    }
    /// Closed-form aggregation, when known (used as a cross-check only).
    fn reference_aggregation(&self, _x: &[Vec<f64>]) -> Option<Vec<f64>> {
        None
    }
    /// Known equilibrium actions, when recorded at construction.
    fn reference_equilibrium(&self) -> Option<Vec<Vec<f64>>> {
        None
    }
}

/// Sample a feasible action profile.
pub fn sample_profile(game: &dyn BilevelGame, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..game.player_count()).map(|i| game.action_set(i).sample(rng)).collect()
}

/// Margin applied to sampled maxima; analytic constants skip it.
const SAMPLING_MARGIN: f64 = 1.25;

/// Estimate the problem constants by probing, unless the game supplies
/// analytic values (which take precedence).
pub fn derive_constants(
    game: &dyn BilevelGame,
    sample_budget: usize,
    y_bound: f64,
) -> Result<ProblemConstants> {
    if y_bound <= 0.0 {
        return Err(Error::InvalidParams(format!("y_bound must be positive, got {y_bound}")));
    }
    if let Some(raw) = game.analytic_constants(y_bound) {
        return ProblemConstants::from_raw(&raw, game.player_count(), y_bound);
    }
    let raw = sample_constants(game, sample_budget, y_bound)?;
    ProblemConstants::from_raw(&raw, game.player_count(), y_bound)
}

fn sample_constants(game: &dyn BilevelGame, budget: usize, y_bound: f64) -> Result<RawConstants> {
    let n = game.player_count();
    let m2 = game.inner_dim();
    let budget = budget.max(8);
    let mut rng = Rng::seed_from(0x5EED_CAB5);

    let action_radius =
        (0..n).map(|i| game.action_set(i).radius_bound()).fold(0.0f64, f64::max);

    let mut k0 = 0.0f64;
    let mut k1 = 0.0f64;
    let mut k2 = 0.0f64;
    let mut k3 = 0.0f64;
    let mut hbar = 0.0f64;
    let mut mu = f64::INFINITY;
    let mut lipschitz = 0.0f64;

    let fd_h = 1e-5 * y_bound.max(1.0);
    for _ in 0..budget {
        let x = sample_profile(game, &mut rng);
        let y = rng.uniform_vec(-y_bound, y_bound, m2);
        let mut summed = Mat::zeros(m2, m2);
        for i in 0..n {
            let hess = game.inner_hess_yy(i, &x[i], &y);
            k0 = k0.max(hess.frobenius_norm());
            summed.add_assign(&hess);
            k1 = k1.max(norm(&game.outer_grad_y(i, &x[i], &y)));
            k2 = k2.max(norm(&game.inner_grad_y(i, &x[i], &y)));
            k3 = k3.max(game.inner_jac_xy(i, &x[i], &y).frobenius_norm());

            // Finite-difference Hessian of the outer cost in y.
            let mut hj = Mat::zeros(m2, m2);
            let mut yp = y.clone();
            for c in 0..m2 {
                yp[c] = y[c] + fd_h;
                let gp = game.outer_grad_y(i, &x[i], &yp);
                yp[c] = y[c] - fd_h;
                let gm = game.outer_grad_y(i, &x[i], &yp);
                yp[c] = y[c];
                for r in 0..m2 {
                    *hj.at_mut(r, c) = (gp[r] - gm[r]) / (2.0 * fd_h);
                }
            }
            hbar = hbar.max(hj.frobenius_norm());
        }
        let (vals, _) = sym_eigen(&summed)?;
        mu = mu.min(vals[0]);

        // Difference quotients of all listed maps over a random companion point.
        let x2 = sample_profile(game, &mut rng);
        let y2 = rng.uniform_vec(-y_bound, y_bound, m2);
        for i in 0..n {
            let dx = dist(&x[i], &x2[i]);
            let dy = dist(&y, &y2);
            let pairs: [(Vec<f64>, Vec<f64>, f64); 2] = [
                (x2[i].clone(), y.clone(), dx),
                (x[i].clone(), y2.clone(), dy),
            ];
            for (xa, ya, denom) in pairs {
                if denom < 1e-12 {
                    continue;
                }
                let quotients = [
                    dist(&game.outer_grad_x(i, &x[i], &y), &game.outer_grad_x(i, &xa, &ya)),
                    dist(&game.outer_grad_y(i, &x[i], &y), &game.outer_grad_y(i, &xa, &ya)),
                    dist(&game.inner_grad_y(i, &x[i], &y), &game.inner_grad_y(i, &xa, &ya)),
                    game.inner_jac_xy(i, &x[i], &y).sub(&game.inner_jac_xy(i, &xa, &ya)).frobenius_norm(),
                    game.inner_hess_yy(i, &x[i], &y).sub(&game.inner_hess_yy(i, &xa, &ya)).frobenius_norm(),
                ];
                for q in quotients {
                    lipschitz = lipschitz.max(q / denom);
                }
            }
        }
    }
    if !(mu > 0.0) {
        return Err(Error::NonPositiveModulus(format!("sampled inner modulus {mu}")));
    }

    let theta = sample_theta(game, 5, &mut rng)?;
    if !(theta > 0.0) {
        return Err(Error::NonPositiveModulus(format!("sampled monotonicity modulus {theta}")));
    }

    Ok(RawConstants {
        mu,
        lipschitz: (lipschitz * SAMPLING_MARGIN).max(1e-12),
        theta,
        action_radius,
        hess_bound: k0 * SAMPLING_MARGIN,
        outer_grad_y_bound: (k1 * SAMPLING_MARGIN).max(1e-12),
        inner_grad_y_bound: k2 * SAMPLING_MARGIN,
        jac_bound: k3 * SAMPLING_MARGIN,
        outer_hess_bound: hbar * SAMPLING_MARGIN,
    })
}

/// Smallest eigenvalue of the symmetrized pseudo-gradient Jacobian over a few
/// probe points, via central differences of the oracle map.
fn sample_theta(game: &dyn BilevelGame, probes: usize, rng: &mut Rng) -> Result<f64> {
    let n = game.player_count();
    let m1 = game.outer_dim();
    let dim = n * m1;
    let h = 1e-5;
    let mut theta = f64::INFINITY;
    for _ in 0..probes {
        let x = sample_profile(game, rng);
        let mut jac = Mat::zeros(dim, dim);
        for col in 0..dim {
            let (pi, pc) = (col / m1, col % m1);
            let mut xp = x.clone();
            xp[pi][pc] += h;
            let fp = crate::oracle::pseudo_gradient(game, &xp, 1e-12)?.stacked_pseudo_gradient();
            xp[pi][pc] = x[pi][pc] - h;
            let fm = crate::oracle::pseudo_gradient(game, &xp, 1e-12)?.stacked_pseudo_gradient();
            for row in 0..dim {
                *jac.at_mut(row, col) = (fp[row] - fm[row]) / (2.0 * h);
            }
        }
        let mut symmetrized = Mat::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..dim {
                *symmetrized.at_mut(r, c) = 0.5 * (jac.at(r, c) + jac.at(c, r));
            }
        }
        let (vals, _) = sym_eigen(&symmetrized)?;
        theta = theta.min(vals[0]);
    }
    Ok(theta)
}

/// Compute step sizes as `safety` times each theoretical upper bound, plus the
/// schedule parameters demanded by the convergence analysis.
///
/// `deltas` may be empty for the second-order engine. A single-node graph has
/// `lambda_n = 0`, which is treated as "no spectral constraint".
pub fn admissible_steps(
    c: &ProblemConstants,
    s: &SpectralInfo,
    n: usize,
    safety: f64,
    deltas: &[f64],
) -> Result<StepSizes> {
    if !(0.0 < safety && safety < 1.0) {
        return Err(Error::InvalidParams(format!("safety must be in (0,1), got {safety}")));
    }
    for (i, d) in deltas.iter().enumerate() {
        if !(*d > 0.0) {
            return Err(Error::InvalidParams(format!("delta[{i}] must be positive, got {d}")));
        }
    }
    let spectral_cap = if s.lambda_n > 0.0 { c.mu / (s.lambda_n * s.lambda_n) } else { f64::INFINITY };
    let kappa_bound = (1.0 / c.lipschitz).min(spectral_cap);
    // The analysis bounds the auxiliary step by mu_player / (2 n K0^2) with
    // the per-player modulus; in terms of the summed modulus stored here that
    // is mu / (2 n^2 K0^2).
    let nf = n as f64;
    let alpha_bound = c.mu / (2.0 * nf * nf * c.hess_bound * c.hess_bound);
    let outer_bound = c.theta / c.pseudo_gradient_lipschitz;
    if !(kappa_bound > 0.0) {
        return Err(Error::InfeasibleSteps(format!("kappa bound = {kappa_bound}")));
    }
    for (name, b) in [("alpha", alpha_bound), ("outer", outer_bound)] {
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::InfeasibleSteps(format!("{name} bound = {b}")));
        }
    }

    let kappa = safety * if kappa_bound.is_finite() { kappa_bound } else { 1.0 / c.lipschitz };
    let alpha = safety * alpha_bound;
    let outer = safety * outer_bound;

    let gap = 2.0 * outer * (c.theta - outer * c.pseudo_gradient_lipschitz);
    if !(gap > 0.0) {
        return Err(Error::InfeasibleSteps(format!("schedule gap = {gap}")));
    }
    let eta_b = (1.0 / gap).max(1.0);
    let eta_a = 2.0 * (gap * eta_b).max(eta_b);

    let beta: Vec<f64> = if deltas.is_empty() {
        Vec::new()
    } else {
        deltas
            .iter()
            .map(|&d| {
                let own = 1.0 / (c.lipschitz + c.outer_hess_bound * d);
                safety * own.min(spectral_cap)
            })
            .collect()
    };

    Ok(StepSizes { kappa, alpha, outer, eta_a, eta_b, beta, delta: deltas.to_vec() })
}

/// Finite-difference validation of a game's analytic derivatives at random
/// probe points. `tol` is relative with an absolute floor of the same size.
pub fn validate_game_derivatives(
    game: &dyn BilevelGame,
    probes: usize,
    y_bound: f64,
    tol: f64,
    seed: u64,
) -> Result<()> {
    let n = game.player_count();
    let m1 = game.outer_dim();
    let m2 = game.inner_dim();
    let mut rng = Rng::seed_from(seed);
    let h = 1e-6 * y_bound.max(1.0);

    let close = |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0);

    for probe in 0..probes {
        let x = sample_profile(game, &mut rng);
        let y = rng.uniform_vec(-y_bound, y_bound, m2);
        for i in 0..n {
            // Strong convexity in y.
            let hess = game.inner_hess_yy(i, &x[i], &y);
            if hess.max_asymmetry() > 1e-9 {
                return Err(Error::NumericalFailure(format!(
                    "inner Hessian of player {i} asymmetric at probe {probe}"
                )));
            }
            let (vals, _) = sym_eigen(&hess)?;
            if !(vals[0] > 0.0) {
                return Err(Error::NonPositiveModulus(format!(
                    "player {i} inner Hessian eigenvalue {} at probe {probe}",
                    vals[0]
                )));
            }

            // grad1_g against differences of g in x.
            let g1 = game.inner_grad_x(i, &x[i], &y);
            let mut xp = x[i].clone();
            for r in 0..m1 {
                xp[r] = x[i][r] + h;
                let fp = game.inner_value(i, &xp, &y);
                xp[r] = x[i][r] - h;
                let fm = game.inner_value(i, &xp, &y);
                xp[r] = x[i][r];
                let fd = (fp - fm) / (2.0 * h);
                if !close(g1[r], fd) {
                    return Err(Error::NumericalFailure(format!(
                        "inner_grad_x[{r}] of player {i}: analytic {} vs fd {fd}",
                        g1[r]
                    )));
                }
            }

            // jac21_g against differences of grad2_g in x.
            let jac = game.inner_jac_xy(i, &x[i], &y);
            for r in 0..m1 {
                xp[r] = x[i][r] + h;
                let gp = game.inner_grad_y(i, &xp, &y);
                xp[r] = x[i][r] - h;
                let gm = game.inner_grad_y(i, &xp, &y);
                xp[r] = x[i][r];
                for cidx in 0..m2 {
                    let fd = (gp[cidx] - gm[cidx]) / (2.0 * h);
                    if !close(jac.at(r, cidx), fd) {
                        return Err(Error::NumericalFailure(format!(
                            "inner_jac_xy[{r}][{cidx}] of player {i}: analytic {} vs fd {fd}",
                            jac.at(r, cidx)
                        )));
                    }
                }
            }

            // hess22_g against differences of grad2_g in y.
            let mut yp = y.clone();
            for cidx in 0..m2 {
                yp[cidx] = y[cidx] + h;
                let gp = game.inner_grad_y(i, &x[i], &yp);
                yp[cidx] = y[cidx] - h;
                let gm = game.inner_grad_y(i, &x[i], &yp);
                yp[cidx] = y[cidx];
                for r in 0..m2 {
                    let fd = (gp[r] - gm[r]) / (2.0 * h);
                    if !close(hess.at(r, cidx), fd) {
                        return Err(Error::NumericalFailure(format!(
                            "inner_hess_yy[{r}][{cidx}] of player {i}: analytic {} vs fd {fd}",
                            hess.at(r, cidx)
                        )));
                    }
                }
            }

            // Outer gradients against differences of J.
            let j1 = game.outer_grad_x(i, &x[i], &y);
            for r in 0..m1 {
                xp[r] = x[i][r] + h;
                let fp = game.outer_cost(i, &xp, &y);
                xp[r] = x[i][r] - h;
                let fm = game.outer_cost(i, &xp, &y);
                xp[r] = x[i][r];
                let fd = (fp - fm) / (2.0 * h);
                if !close(j1[r], fd) {
                    return Err(Error::NumericalFailure(format!(
                        "outer_grad_x[{r}] of player {i}: analytic {} vs fd {fd}",
                        j1[r]
                    )));
                }
            }
            let j2 = game.outer_grad_y(i, &x[i], &y);
            for cidx in 0..m2 {
                yp[cidx] = y[cidx] + h;
                let fp = game.outer_cost(i, &x[i], &yp);
                yp[cidx] = y[cidx] - h;
                let fm = game.outer_cost(i, &x[i], &yp);
                yp[cidx] = y[cidx];
                let fd = (fp - fm) / (2.0 * h);
                if !close(j2[cidx], fd) {
                    return Err(Error::NumericalFailure(format!(
                        "outer_grad_y[{cidx}] of player {i}: analytic {} vs fd {fd}",
                        j2[cidx]
                    )));
                }
            }
        }
    }
    Ok(())
}
