//! Concrete game instances: the small-cell power-allocation benchmark, a
//! synthetic quadratic game with an exactly solvable equilibrium, and two
//! single-digit toys used throughout the tests.

use crate::error::{Error, Result};
use crate::game::{ActionSet, BilevelGame, RawConstants};
use crate::linalg::{norm, scaled, sub, sym_eigen, Mat};
use crate::rng::Rng;

/// Parameters of the power-allocation game: `n` base stations adjust
/// transmission power `x_i` in `[0, p0_i]` against a price `y` set by the
/// inner total-cost problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocationParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub p0: Vec<f64>,
}

/// Equilibrium reported in the literature for the default parameters, kept
/// as reference data only: it does not satisfy the stationarity conditions
/// of the stated costs, so runs log the distance to it without asserting.
pub fn reported_default_equilibrium() -> (Vec<f64>, f64) {
    (vec![0.0, 0.0, 1.0, 0.59, 0.0, 1.0, 0.47, 0.29, 0.07, 0.29], 3.4)
}

impl Default for PowerAllocationParams {
    fn default() -> Self {
        PowerAllocationParams {
            a: vec![2.5, 3.0, 1.0, 2.0, 4.0, 1.0, 2.5, 4.0, 2.5, 4.0],
            b: vec![3.0, 3.0, 4.0, 4.0, 3.0, 5.0, 4.0, 4.0, 3.5, 4.0],
            c: vec![3.0, 3.0, 4.0, 4.0, 3.0, 5.0, 4.0, 4.0, 3.5, 4.0],
            p0: vec![1.0; 10],
        }
    }
}

impl PowerAllocationParams {
    pub fn player_count(&self) -> usize {
        self.a.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.a.len();
        if n == 0 {
            return Err(Error::InvalidParams("power allocation needs at least one player".into()));
        }
        for (name, v) in [("a", &self.a), ("b", &self.b), ("c", &self.c), ("p0", &self.p0)] {
            if v.len() != n {
                return Err(Error::InvalidParams(format!(
                    "{name} has length {}, expected {n}",
                    v.len()
                )));
            }
            if let Some(bad) = v.iter().find(|x| !(**x > 0.0)) {
                return Err(Error::InvalidParams(format!("{name} contains non-positive entry {bad}")));
            }
        }
        Ok(())
    }
}

/// Power-allocation game: outer costs `a_i y x_i - b_i (1 + c_i x_i)`, inner
/// objective `sum_i (y^2 / n - a_i x_i y)`, so the aggregation (price) is
/// `sigma(x) = sum_i a_i x_i / 2`.
pub struct PowerAllocationGame {
    params: PowerAllocationParams,
    sets: Vec<ActionSet>,
}

pub fn power_allocation_game(params: PowerAllocationParams) -> Result<PowerAllocationGame> {
    params.validate()?;
    let sets = params
        .p0
        .iter()
        .map(|&cap| ActionSet::Box { lower: vec![0.0], upper: vec![cap] })
        .collect();
    Ok(PowerAllocationGame { params, sets })
}

impl PowerAllocationGame {
    pub fn params(&self) -> &PowerAllocationParams {
        &self.params
    }

    /// Exact pseudo-gradient component `a_i sigma + a_i^2 x_i / 2 - b_i c_i`.
    pub fn analytic_pseudo_gradient(&self, x: &[Vec<f64>]) -> Vec<f64> {
        let p = &self.params;
        let sigma = 0.5 * x.iter().zip(&p.a).map(|(xi, ai)| ai * xi[0]).sum::<f64>();
        (0..p.a.len())
            .map(|i| p.a[i] * sigma + p.a[i] * p.a[i] * x[i][0] / 2.0 - p.b[i] * p.c[i])
            .collect()
    }

    /// Strong-monotonicity modulus: smallest eigenvalue of
    /// `(a a^T + diag(a^2)) / 2`.
    pub fn exact_theta(&self) -> f64 {
        let n = self.params.a.len();
        let a = &self.params.a;
        let mut jac = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                *jac.at_mut(i, j) = a[i] * a[j] / 2.0 + if i == j { a[i] * a[i] / 2.0 } else { 0.0 };
            }
        }
        sym_eigen(&jac).expect("eigensolver").0[0]
    }
}

impl BilevelGame for PowerAllocationGame {
    fn player_count(&self) -> usize {
        self.params.a.len()
    }
    fn outer_dim(&self) -> usize {
        1
    }
    fn inner_dim(&self) -> usize {
        1
    }
    fn action_set(&self, i: usize) -> &ActionSet {
        &self.sets[i]
    }

    fn outer_cost(&self, i: usize, x_i: &[f64], y: &[f64]) -> f64 {
        let p = &self.params;
        p.a[i] * y[0] * x_i[0] - p.b[i] * (1.0 + p.c[i] * x_i[0])
    }
    fn outer_grad_x(&self, i: usize, _x_i: &[f64], y: &[f64]) -> Vec<f64> {
        let p = &self.params;
        vec![p.a[i] * y[0] - p.b[i] * p.c[i]]
    }
    fn outer_grad_y(&self, i: usize, x_i: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![self.params.a[i] * x_i[0]]
    }

    fn inner_value(&self, i: usize, x_i: &[f64], y: &[f64]) -> f64 {
        let n = self.player_count() as f64;
        y[0] * y[0] / n - self.params.a[i] * x_i[0] * y[0]
    }
    fn inner_grad_x(&self, i: usize, _x_i: &[f64], y: &[f64]) -> Vec<f64> {
        vec![-self.params.a[i] * y[0]]
    }
    fn inner_grad_y(&self, i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.player_count() as f64;
        vec![2.0 * y[0] / n - self.params.a[i] * x_i[0]]
    }
    fn inner_jac_xy(&self, i: usize, _x_i: &[f64], _y: &[f64]) -> Mat {
        Mat { rows: 1, cols: 1, data: vec![-self.params.a[i]] }
    }
    fn inner_hess_yy(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Mat {
        let n = self.player_count() as f64;
        Mat { rows: 1, cols: 1, data: vec![2.0 / n] }
    }

    fn analytic_constants(&self, y_bound: f64) -> Option<RawConstants> {
        let p = &self.params;
        let n = self.player_count() as f64;
        let a_max = p.a.iter().cloned().fold(0.0f64, f64::max);
        let cap_max = p.p0.iter().cloned().fold(0.0f64, f64::max);
        let ax_max = p
            .a
            .iter()
            .zip(&p.p0)
            .map(|(ai, cap)| ai * cap)
            .fold(0.0f64, f64::max);
        Some(RawConstants {
            mu: 2.0,
            lipschitz: a_max.max(2.0 / n),
            theta: self.exact_theta(),
            action_radius: cap_max,
            hess_bound: 2.0 / n,
            outer_grad_y_bound: ax_max,
            inner_grad_y_bound: 2.0 * y_bound / n + ax_max,
            jac_bound: a_max,
            outer_hess_bound: 0.0,
        })
    }

    fn reference_aggregation(&self, x: &[Vec<f64>]) -> Option<Vec<f64>> {
        let s = 0.5 * x.iter().zip(&self.params.a).map(|(xi, ai)| ai * xi[0]).sum::<f64>();
        Some(vec![s])
    }
}

/// The closed-form equilibrium candidate
/// `x_i = P[2 b_i c_i / a_i^2 - 2 sum_j (b_j c_j / a_j) / ((n + 1) a_i)]`.
///
/// The expression assumes no projection is active; the returned flag is true
/// only when every raw component already lies inside its box, in which case
/// the candidate is an actual equilibrium.
pub fn interior_se_formula(p: &PowerAllocationParams) -> (Vec<f64>, f64, bool) {
    let n = p.a.len();
    let total: f64 = (0..n).map(|j| p.b[j] * p.c[j] / p.a[j]).sum();
    let sigma_candidate = total / (n as f64 + 1.0);
    let mut valid = true;
    let x = (0..n)
        .map(|i| {
            let raw = 2.0 * p.b[i] * p.c[i] / (p.a[i] * p.a[i]) - 2.0 * sigma_candidate / p.a[i];
            if raw < 0.0 || raw > p.p0[i] {
                valid = false;
            }
            raw.clamp(0.0, p.p0[i])
        })
        .collect();
    (x, sigma_candidate, valid)
}

/// Synthetic quadratic game on `m1 = m2 = 2`: inner bifunctions
/// `|y|^2 / (2n) - <y, C_i x_i>` (so the aggregation is `sum_i C_i x_i`) and
/// strongly convex quadratic outer costs. Coupling magnitudes are kept small
/// enough that the pseudo-gradient stays strongly monotone for every seed.
pub struct SyntheticQuadraticGame {
    n: usize,
    /// `m2 x m1` coupling of each player into the aggregation.
    c_mats: Vec<Mat>,
    /// `m1 x m2` coupling of the aggregation into each outer cost.
    s_mats: Vec<Mat>,
    targets: Vec<Vec<f64>>,
    anchors: Vec<Vec<f64>>,
    outer_curvature: f64,
    sets: Vec<ActionSet>,
    theta: f64,
    equilibrium: Option<Vec<Vec<f64>>>,
}

const SYNTHETIC_DIM: usize = 2;
const SYNTHETIC_AMPLITUDE: f64 = 0.15;

pub fn synthetic_quadratic_game(n: usize, seed: u64) -> Result<SyntheticQuadraticGame> {
    if n == 0 {
        return Err(Error::InvalidParams("synthetic game needs at least one player".into()));
    }
    let m = SYNTHETIC_DIM;
    let mut rng = Rng::seed_from(seed);
    let mut c_mats = Vec::with_capacity(n);
    let mut s_mats = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut anchors = Vec::with_capacity(n);
    for _ in 0..n {
        c_mats.push(Mat {
            rows: m,
            cols: m,
            data: rng.uniform_vec(-SYNTHETIC_AMPLITUDE, SYNTHETIC_AMPLITUDE, m * m),
        });
        s_mats.push(Mat {
            rows: m,
            cols: m,
            data: rng.uniform_vec(-SYNTHETIC_AMPLITUDE, SYNTHETIC_AMPLITUDE, m * m),
        });
        targets.push(rng.uniform_vec(-0.5, 0.5, m));
        anchors.push(rng.uniform_vec(-0.5, 0.5, m));
    }
    let sets = (0..n).map(|_| ActionSet::symmetric_box(m, 1.0)).collect();
    let mut game = SyntheticQuadraticGame {
        n,
        c_mats,
        s_mats,
        targets,
        anchors,
        outer_curvature: 0.1,
        sets,
        theta: 0.0,
        equilibrium: None,
    };
    game.theta = game.exact_theta()?;
    if !(game.theta > 0.0) {
        return Err(Error::NonPositiveModulus(format!(
            "synthetic game lost monotonicity (theta = {})",
            game.theta
        )));
    }
    let se = crate::oracle::solve_se(&game, 0.1, 1e-12, 200_000)?;
    if !se.converged {
        return Err(Error::NumericalFailure("synthetic equilibrium did not converge".into()));
    }
    game.equilibrium = Some(se.x);
    Ok(game)
}

impl SyntheticQuadraticGame {
    /// Exact smallest eigenvalue of the symmetrized pseudo-gradient Jacobian.
    ///
    /// With the identity summed Hessian, the aggregation sensitivity is
    /// `C_i^T` and the Jacobian blocks are affine in the couplings.
    fn exact_theta(&self) -> Result<f64> {
        let m = SYNTHETIC_DIM;
        let dim = self.n * m;
        let mut jac = Mat::zeros(dim, dim);
        for i in 0..self.n {
            for j in 0..self.n {
                for r in 0..m {
                    for c in 0..m {
                        let mut v = 0.0;
                        if i == j {
                            if r == c {
                                v += 1.0;
                            }
                            // C_i^T S_i^T term.
                            for t in 0..m {
                                v += self.c_mats[i].at(t, r) * self.s_mats[i].at(c, t);
                            }
                        }
                        // S_i C_j term.
                        for t in 0..m {
                            v += self.s_mats[i].at(r, t) * self.c_mats[j].at(t, c);
                        }
                        // eps * C_i^T C_j term.
                        for t in 0..m {
                            v += self.outer_curvature * self.c_mats[i].at(t, r) * self.c_mats[j].at(t, c);
                        }
                        *jac.at_mut(i * m + r, j * m + c) = v;
                    }
                }
            }
        }
        let mut symmetrized = Mat::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..dim {
                *symmetrized.at_mut(r, c) = 0.5 * (jac.at(r, c) + jac.at(c, r));
            }
        }
        Ok(sym_eigen(&symmetrized)?.0[0])
    }
}

impl BilevelGame for SyntheticQuadraticGame {
    fn player_count(&self) -> usize {
        self.n
    }
    fn outer_dim(&self) -> usize {
        SYNTHETIC_DIM
    }
    fn inner_dim(&self) -> usize {
        SYNTHETIC_DIM
    }
    fn action_set(&self, i: usize) -> &ActionSet {
        &self.sets[i]
    }

    fn outer_cost(&self, i: usize, x_i: &[f64], y: &[f64]) -> f64 {
        let d = sub(x_i, &self.targets[i]);
        let sy = self.s_mats[i].mul_vec(y);
        let dy = sub(y, &self.anchors[i]);
        0.5 * norm(&d).powi(2)
            + crate::linalg::dot(x_i, &sy)
            + 0.5 * self.outer_curvature * norm(&dy).powi(2)
    }
    fn outer_grad_x(&self, i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = sub(x_i, &self.targets[i]);
        let sy = self.s_mats[i].mul_vec(y);
        for (a, b) in g.iter_mut().zip(&sy) {
            *a += b;
        }
        g
    }
    fn outer_grad_y(&self, i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = self.s_mats[i].tr_mul_vec(x_i);
        for ((a, yk), pk) in g.iter_mut().zip(y).zip(&self.anchors[i]) {
            *a += self.outer_curvature * (yk - pk);
        }
        g
    }

    fn inner_value(&self, i: usize, x_i: &[f64], y: &[f64]) -> f64 {
        let cx = self.c_mats[i].mul_vec(x_i);
        norm(y).powi(2) / (2.0 * self.n as f64) - crate::linalg::dot(y, &cx)
    }
    fn inner_grad_x(&self, i: usize, _x_i: &[f64], y: &[f64]) -> Vec<f64> {
        scaled(&self.c_mats[i].tr_mul_vec(y), -1.0)
    }
    fn inner_grad_y(&self, i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64> {
        let cx = self.c_mats[i].mul_vec(x_i);
        y.iter().zip(&cx).map(|(yk, ck)| yk / self.n as f64 - ck).collect()
    }
    fn inner_jac_xy(&self, i: usize, _x_i: &[f64], _y: &[f64]) -> Mat {
        let m = SYNTHETIC_DIM;
        let mut jac = Mat::zeros(m, m);
        for r in 0..m {
            for c in 0..m {
                *jac.at_mut(r, c) = -self.c_mats[i].at(c, r);
            }
        }
        jac
    }
    fn inner_hess_yy(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Mat {
        Mat::identity(SYNTHETIC_DIM).scale(1.0 / self.n as f64)
    }

    fn analytic_constants(&self, y_bound: f64) -> Option<RawConstants> {
        let m = SYNTHETIC_DIM as f64;
        let n = self.n as f64;
        let c_max = self.c_mats.iter().map(Mat::frobenius_norm).fold(0.0f64, f64::max);
        let s_max = self.s_mats.iter().map(Mat::frobenius_norm).fold(0.0f64, f64::max);
        let x_rad = m.sqrt();
        let p_max = self.anchors.iter().map(|p| norm(p)).fold(0.0f64, f64::max);
        Some(RawConstants {
            mu: 1.0,
            lipschitz: 1.0f64.max(s_max).max(c_max).max(self.outer_curvature).max(1.0 / n),
            theta: self.theta,
            action_radius: x_rad,
            hess_bound: m.sqrt() / n,
            outer_grad_y_bound: s_max * x_rad + self.outer_curvature * (y_bound + p_max),
            inner_grad_y_bound: y_bound / n + c_max * x_rad,
            jac_bound: c_max,
            outer_hess_bound: self.outer_curvature * m.sqrt(),
        })
    }

    fn reference_aggregation(&self, x: &[Vec<f64>]) -> Option<Vec<f64>> {
        let mut s = vec![0.0; SYNTHETIC_DIM];
        for (i, xi) in x.iter().enumerate() {
            let cx = self.c_mats[i].mul_vec(xi);
            for (a, b) in s.iter_mut().zip(&cx) {
                *a += b;
            }
        }
        Some(s)
    }

    fn reference_equilibrium(&self) -> Option<Vec<Vec<f64>>> {
        self.equilibrium.clone()
    }
}

/// Toy fixtures with hand-solvable equilibria.
pub mod toys {
    use super::*;

    /// One player, `g = (y - x)^2 / 2`, `J = (x - 0.5)^2 / 2`, actions in
    /// `[0, 1]`. The aggregation is the identity and the equilibrium is
    /// `(0.5, 0.5)`.
    pub struct IdentityAggregationToy {
        set: ActionSet,
    }

    pub fn t1() -> IdentityAggregationToy {
        IdentityAggregationToy { set: ActionSet::unit_box(1) }
    }

    impl BilevelGame for IdentityAggregationToy {
        fn player_count(&self) -> usize {
            1
        }
        fn outer_dim(&self) -> usize {
            1
        }
        fn inner_dim(&self) -> usize {
            1
        }
        fn action_set(&self, _i: usize) -> &ActionSet {
            &self.set
        }
        fn outer_cost(&self, _i: usize, x_i: &[f64], _y: &[f64]) -> f64 {
            0.5 * (x_i[0] - 0.5) * (x_i[0] - 0.5)
        }
        fn outer_grad_x(&self, _i: usize, x_i: &[f64], _y: &[f64]) -> Vec<f64> {
            vec![x_i[0] - 0.5]
        }
        fn outer_grad_y(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn inner_value(&self, _i: usize, x_i: &[f64], y: &[f64]) -> f64 {
            0.5 * (y[0] - x_i[0]) * (y[0] - x_i[0])
        }
        fn inner_grad_x(&self, _i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64> {
            vec![-(y[0] - x_i[0])]
        }
        fn inner_grad_y(&self, _i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64> {
            vec![y[0] - x_i[0]]
        }
        fn inner_jac_xy(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Mat {
            Mat { rows: 1, cols: 1, data: vec![-1.0] }
        }
        fn inner_hess_yy(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Mat {
            Mat { rows: 1, cols: 1, data: vec![1.0] }
        }
        fn analytic_constants(&self, y_bound: f64) -> Option<RawConstants> {
            Some(RawConstants {
                mu: 1.0,
                lipschitz: 1.0,
                theta: 1.0,
                action_radius: 1.0,
                hess_bound: 1.0,
                outer_grad_y_bound: 0.0,
                inner_grad_y_bound: y_bound + 1.0,
                jac_bound: 1.0,
                outer_hess_bound: 0.0,
            })
        }
        fn reference_aggregation(&self, x: &[Vec<f64>]) -> Option<Vec<f64>> {
            Some(vec![x[0][0]])
        }
        fn reference_equilibrium(&self) -> Option<Vec<Vec<f64>>> {
            Some(vec![vec![0.5]])
        }
    }

    /// Variant of the single-player toy whose outer cost is linear in the
    /// aggregation (`J = y`), giving the perturbed inner problem the exact
    /// solution `y(delta, x) = x - delta`. Used to pin down the two-point
    /// estimator; its pseudo-gradient is constant, so no step sizes are
    /// derived from it.
    pub struct LinearOuterToy {
        set: ActionSet,
    }

    pub fn t1_linear_outer() -> LinearOuterToy {
        LinearOuterToy { set: ActionSet::unit_box(1) }
    }

    impl BilevelGame for LinearOuterToy {
        fn player_count(&self) -> usize {
            1
        }
        fn outer_dim(&self) -> usize {
            1
        }
        fn inner_dim(&self) -> usize {
            1
        }
        fn action_set(&self, _i: usize) -> &ActionSet {
            &self.set
        }
        fn outer_cost(&self, _i: usize, _x_i: &[f64], y: &[f64]) -> f64 {
            y[0]
        }
        fn outer_grad_x(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn outer_grad_y(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Vec<f64> {
            vec![1.0]
        }
        fn inner_value(&self, _i: usize, x_i: &[f64], y: &[f64]) -> f64 {
            0.5 * (y[0] - x_i[0]) * (y[0] - x_i[0])
        }
        fn inner_grad_x(&self, _i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64> {
            vec![-(y[0] - x_i[0])]
        }
        fn inner_grad_y(&self, _i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64> {
            vec![y[0] - x_i[0]]
        }
        fn inner_jac_xy(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Mat {
            Mat { rows: 1, cols: 1, data: vec![-1.0] }
        }
        fn inner_hess_yy(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Mat {
            Mat { rows: 1, cols: 1, data: vec![1.0] }
        }
        fn reference_aggregation(&self, x: &[Vec<f64>]) -> Option<Vec<f64>> {
            Some(vec![x[0][0]])
        }
    }

    /// Two players on a complete graph, `g_i = y^2/4 - x_i y`,
    /// `J_i = x_i^2/2 + y x_i`, actions in `[-1, 1]`. The aggregation is
    /// `x_1 + x_2`, the pseudo-gradient is `2 x_i + x_1 + x_2`, and the
    /// equilibrium is the origin.
    pub struct TwoPlayerToy {
        sets: [ActionSet; 2],
    }

    pub fn t2() -> TwoPlayerToy {
        TwoPlayerToy {
            sets: [ActionSet::symmetric_box(1, 1.0), ActionSet::symmetric_box(1, 1.0)],
        }
    }

    impl BilevelGame for TwoPlayerToy {
        fn player_count(&self) -> usize {
            2
        }
        fn outer_dim(&self) -> usize {
            1
        }
        fn inner_dim(&self) -> usize {
            1
        }
        fn action_set(&self, i: usize) -> &ActionSet {
            &self.sets[i]
        }
        fn outer_cost(&self, _i: usize, x_i: &[f64], y: &[f64]) -> f64 {
            0.5 * x_i[0] * x_i[0] + y[0] * x_i[0]
        }
        fn outer_grad_x(&self, _i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64> {
            vec![x_i[0] + y[0]]
        }
        fn outer_grad_y(&self, _i: usize, x_i: &[f64], _y: &[f64]) -> Vec<f64> {
            vec![x_i[0]]
        }
        fn inner_value(&self, _i: usize, x_i: &[f64], y: &[f64]) -> f64 {
            y[0] * y[0] / 4.0 - x_i[0] * y[0]
        }
        fn inner_grad_x(&self, _i: usize, _x_i: &[f64], y: &[f64]) -> Vec<f64> {
            vec![-y[0]]
        }
        fn inner_grad_y(&self, _i: usize, x_i: &[f64], y: &[f64]) -> Vec<f64> {
            vec![y[0] / 2.0 - x_i[0]]
        }
        fn inner_jac_xy(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Mat {
            Mat { rows: 1, cols: 1, data: vec![-1.0] }
        }
        fn inner_hess_yy(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Mat {
            Mat { rows: 1, cols: 1, data: vec![0.5] }
        }
        fn analytic_constants(&self, y_bound: f64) -> Option<RawConstants> {
            Some(RawConstants {
                mu: 1.0,
                lipschitz: 1.0,
                theta: 2.0,
                action_radius: 1.0,
                hess_bound: 0.5,
                outer_grad_y_bound: 1.0,
                inner_grad_y_bound: y_bound / 2.0 + 1.0,
                jac_bound: 1.0,
                outer_hess_bound: 0.0,
            })
        }
        fn reference_aggregation(&self, x: &[Vec<f64>]) -> Option<Vec<f64>> {
            Some(vec![x[0][0] + x[1][0]])
        }
        fn reference_equilibrium(&self) -> Option<Vec<Vec<f64>>> {
            Some(vec![vec![0.0], vec![0.0]])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::sample_profile;
    use crate::oracle;

    fn reported_actions() -> Vec<Vec<f64>> {
        [0.0, 0.0, 1.0, 0.59, 0.0, 1.0, 0.47, 0.29, 0.07, 0.29].iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn aggregation_examples() {
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let zero = vec![vec![0.0]; 10];
        assert_eq!(game.reference_aggregation(&zero).unwrap()[0], 0.0);

        let mut e3 = vec![vec![0.0]; 10];
        e3[2][0] = 1.0;
        assert!((game.reference_aggregation(&e3).unwrap()[0] - 0.5).abs() < 1e-15);

        let sigma = game.reference_aggregation(&reported_actions()).unwrap()[0];
        assert!((sigma - 3.425).abs() < 1e-12);
    }

    #[test]
    fn closed_form_aggregation_matches_oracle() {
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let mut rng = Rng::seed_from(11);
        for _ in 0..20 {
            let x = sample_profile(&game, &mut rng);
            let sigma = oracle::solve_sigma(&game, &x, 1e-13).unwrap();
            let reference = game.reference_aggregation(&x).unwrap();
            assert!((sigma[0] - reference[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn analytic_pseudo_gradient_matches_oracle() {
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let mut rng = Rng::seed_from(12);
        for _ in 0..20 {
            let x = sample_profile(&game, &mut rng);
            let oracle_f = oracle::pseudo_gradient(&game, &x, 1e-13).unwrap();
            let exact = game.analytic_pseudo_gradient(&x);
            for i in 0..10 {
                assert!((oracle_f.pseudo_gradient[i][0] - exact[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_non_positive_params() {
        let mut p = PowerAllocationParams::default();
        p.a[3] = -1.0;
        assert!(matches!(power_allocation_game(p), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn interior_formula_single_player() {
        let p = PowerAllocationParams {
            a: vec![2.0],
            b: vec![1.0],
            c: vec![1.0],
            p0: vec![10.0],
        };
        let (x, sigma, valid) = interior_se_formula(&p);
        assert!(valid);
        assert!((sigma - 0.25).abs() < 1e-15);
        assert!((x[0] - 0.25).abs() < 1e-15);

        // The interior candidate solves the equilibrium condition exactly.
        let game = power_allocation_game(p).unwrap();
        let f = game.analytic_pseudo_gradient(&[vec![x[0]]]);
        assert!(f[0].abs() < 1e-12);
    }

    #[test]
    fn interior_formula_flags_clamping_on_defaults() {
        let p = PowerAllocationParams::default();
        let (x, _, valid) = interior_se_formula(&p);
        assert!(!valid);
        // Player 1's raw value 2.88 - 154.3/27.5 is negative, so it clamps.
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn interior_formula_valid_candidate_zeroes_pseudo_gradient() {
        // Mild parameters keep every raw component inside (0, p0).
        let p = PowerAllocationParams {
            a: vec![2.0, 2.2, 2.4],
            b: vec![1.0, 1.1, 1.2],
            c: vec![1.0, 1.0, 1.0],
            p0: vec![10.0; 3],
        };
        let (x, _, valid) = interior_se_formula(&p);
        assert!(valid, "candidate unexpectedly clamped: {x:?}");
        let game = power_allocation_game(p).unwrap();
        let profile: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        let oracle_f = oracle::pseudo_gradient(&game, &profile, 1e-13).unwrap();
        for f_i in &oracle_f.pseudo_gradient {
            assert!(f_i[0].abs() < 1e-8);
        }
    }

    #[test]
    fn synthetic_game_is_deterministic() {
        let g1 = synthetic_quadratic_game(4, 99).unwrap();
        let g2 = synthetic_quadratic_game(4, 99).unwrap();
        assert_eq!(g1.c_mats[2].data, g2.c_mats[2].data);
        assert_eq!(g1.reference_equilibrium(), g2.reference_equilibrium());
    }

    #[test]
    fn synthetic_equilibrium_is_a_projected_fixed_point() {
        let game = synthetic_quadratic_game(4, 7).unwrap();
        let x_star = game.reference_equilibrium().unwrap();
        let oracle_f = oracle::pseudo_gradient(&game, &x_star, 1e-13).unwrap();
        let k = 0.1;
        for i in 0..4 {
            let mut target = x_star[i].clone();
            for (t, f) in target.iter_mut().zip(&oracle_f.pseudo_gradient[i]) {
                *t -= k * f;
            }
            let projected = game.action_set(i).project(&target).unwrap();
            assert!(crate::linalg::dist(&projected, &x_star[i]) < 1e-8);
        }
    }

    #[test]
    fn toy_equilibria() {
        let t1 = toys::t1();
        let se = oracle::solve_se(&t1, 0.5, 1e-12, 10_000).unwrap();
        assert!(se.converged);
        assert!((se.x[0][0] - 0.5).abs() < 1e-10);
        assert!((se.y[0] - 0.5).abs() < 1e-10);

        let t2 = toys::t2();
        let se = oracle::solve_se(&t2, 0.2, 1e-12, 10_000).unwrap();
        assert!(se.converged);
        assert!(se.x[0][0].abs() < 1e-10);
        assert!(se.x[1][0].abs() < 1e-10);
        assert!(se.y[0].abs() < 1e-10);
    }

    #[test]
    fn benchmark_derivatives_pass_finite_difference_checks() {
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        crate::game::validate_game_derivatives(&game, 100, 15.0, 1e-5, 3).unwrap();
        let synth = synthetic_quadratic_game(5, 42).unwrap();
        crate::game::validate_game_derivatives(&synth, 100, 4.0, 1e-5, 4).unwrap();
        crate::game::validate_game_derivatives(&toys::t1(), 100, 5.0, 1e-5, 5).unwrap();
        crate::game::validate_game_derivatives(&toys::t2(), 100, 5.0, 1e-5, 6).unwrap();
    }
}
