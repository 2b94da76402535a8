//! Distributed primal-dual machinery shared by both engines: the aggregation
//! estimate iteration and the pairwise variant used by the first-order
//! engine. One step is a synchronous round; dual updates use the already
//! refreshed primal values (Gauss-Seidel order).

use crate::error::{Error, Result};
use crate::game::BilevelGame;
use crate::graph::GraphTopology;
use crate::linalg::{dist, norm};

/// Per-player aggregation estimates and dual variables.
#[derive(Debug, Clone)]
pub struct ConsensusState {
    /// `y[i]`: player i's estimate of the aggregation, length `m2`.
    pub y: Vec<Vec<f64>>,
    /// `lambda[i]`: dual variable, length `m2`, started at zero.
    pub lambda: Vec<Vec<f64>>,
}

impl ConsensusState {
    pub fn zeros(n: usize, m2: usize) -> Self {
        ConsensusState { y: vec![vec![0.0; m2]; n], lambda: vec![vec![0.0; m2]; n] }
    }

    pub fn is_finite(&self) -> bool {
        self.y.iter().chain(&self.lambda).all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Largest estimate norm across players.
    pub fn max_norm(&self) -> f64 {
        self.y.iter().map(|v| norm(v)).fold(0.0, f64::max)
    }
}

/// `w[i][k]`: node k's estimate of target player i's perturbed minimizer,
/// with matching duals `u[i][k]`.
#[derive(Debug, Clone)]
pub struct PairwiseConsensusState {
    pub w: Vec<Vec<Vec<f64>>>,
    pub u: Vec<Vec<Vec<f64>>>,
}

impl PairwiseConsensusState {
    pub fn zeros(n: usize, m2: usize) -> Self {
        PairwiseConsensusState {
            w: vec![vec![vec![0.0; m2]; n]; n],
            u: vec![vec![vec![0.0; m2]; n]; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(&self.u)
            .flatten()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// One synchronous primal-dual round at a frozen action profile.
///
/// Primal: `y_i += kappa * (mix_j a_ij lambda_j - lambda_i - grad_y g_i(x_i, y_i))`,
/// then dual: `lambda_i -= kappa * (mix_j a_ij y_j' - y_i')` with the updated
/// primal values. Each player reads only neighbor values.
pub fn pd_step(
    state: &ConsensusState,
    x: &[Vec<f64>],
    game: &dyn BilevelGame,
    graph: &GraphTopology,
    kappa: f64,
) -> Result<ConsensusState> {
    let n = graph.n;
    let m2 = game.inner_dim();
    let mut y_next = vec![vec![0.0; m2]; n];
    let mut mix = vec![0.0; m2];
    for i in 0..n {
        graph.mix(i, |j| state.lambda[j].as_slice(), &mut mix);
        let grad = game.inner_grad_y(i, &x[i], &state.y[i]);
        for c in 0..m2 {
            y_next[i][c] =
                state.y[i][c] + kappa * (mix[c] - state.lambda[i][c] - grad[c]);
        }
    }
    let mut lambda_next = vec![vec![0.0; m2]; n];
    for i in 0..n {
        graph.mix(i, |j| y_next[j].as_slice(), &mut mix);
        for c in 0..m2 {
            lambda_next[i][c] = state.lambda[i][c] - kappa * (mix[c] - y_next[i][c]);
        }
    }
    let next = ConsensusState { y: y_next, lambda: lambda_next };
    if !next.is_finite() {
        return Err(Error::NonFiniteState("primal-dual aggregation step".into()));
    }
    Ok(next)
}

/// Result of iterating the primal-dual step to tolerance at frozen actions.
#[derive(Debug, Clone)]
pub struct InnerSolve {
    pub state: ConsensusState,
    pub iterations: usize,
    pub converged: bool,
    /// Largest pairwise distance between the returned estimates.
    pub spread: f64,
}

/// Iterate `pd_step` until the largest per-player update falls below `tol`
/// or the budget runs out; the best state reached is returned either way.
pub fn solve_inner(
    x: &[Vec<f64>],
    game: &dyn BilevelGame,
    graph: &GraphTopology,
    kappa: f64,
    tol: f64,
    max_iter: usize,
) -> Result<InnerSolve> {
    let n = graph.n;
    let m2 = game.inner_dim();
    let mut state = ConsensusState::zeros(n, m2);
    let mut iterations = 0;
    let mut converged = tol.is_infinite();
    while !converged && iterations < max_iter {
        let next = pd_step(&state, x, game, graph, kappa)?;
        iterations += 1;
        let step: f64 =
            (0..n).map(|i| dist(&next.y[i], &state.y[i])).fold(0.0, f64::max);
        state = next;
        if step <= tol {
            converged = true;
        }
    }
    let mut spread = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            spread = spread.max(dist(&state.y[i], &state.y[j]));
        }
    }
    Ok(InnerSolve { state, iterations, converged, spread })
}

/// One synchronous round of the pairwise primal-dual iteration: for each
/// target player `i`, every node `k` refines its estimate `w[i][k]` of the
/// perturbed minimizer, driving its own inner gradient plus (on the target's
/// own node) the scaled outer-cost gradient.
pub fn fogd_pd_step(
    state: &PairwiseConsensusState,
    x: &[Vec<f64>],
    game: &dyn BilevelGame,
    graph: &GraphTopology,
    beta: &[f64],
    delta: &[f64],
) -> Result<PairwiseConsensusState> {
    let n = graph.n;
    let m2 = game.inner_dim();
    let mut next = PairwiseConsensusState::zeros(n, m2);
    let mut mix = vec![0.0; m2];
    for i in 0..n {
        let own_drive = game.outer_grad_y(i, &x[i], &state.w[i][i]);
        for k in 0..n {
            graph.mix(k, |j| state.u[i][j].as_slice(), &mut mix);
            let grad = game.inner_grad_y(k, &x[k], &state.w[i][k]);
            for c in 0..m2 {
                let mut drive = grad[c];
                if k == i {
                    drive += delta[i] * own_drive[c];
                }
                next.w[i][k][c] =
                    state.w[i][k][c] + beta[i] * (mix[c] - state.u[i][k][c] - drive);
            }
        }
        for k in 0..n {
            graph.mix(k, |j| next.w[i][j].as_slice(), &mut mix);
            for c in 0..m2 {
                next.u[i][k][c] =
                    state.u[i][k][c] - beta[i] * (mix[c] - next.w[i][k][c]);
            }
        }
    }
    if !next.is_finite() {
        return Err(Error::NonFiniteState("pairwise primal-dual step".into()));
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{power_allocation_game, toys, PowerAllocationParams};
    use crate::graph::build_metropolis;

    #[test]
    fn single_player_step_is_plain_descent() {
        // With one node the mixing terms vanish and the primal update is a
        // gradient step on the local bifunction.
        let game = toys::t1();
        let graph = build_metropolis(1, &[]).unwrap();
        let state = ConsensusState { y: vec![vec![1.0]], lambda: vec![vec![0.0]] };
        let next = pd_step(&state, &[vec![0.0]], &game, &graph, 0.5).unwrap();
        assert!((next.y[0][0] - 0.5).abs() < 1e-15);
        assert_eq!(next.lambda[0][0], 0.0);
    }

    #[test]
    fn two_player_step_matches_hand_computation() {
        let game = toys::t2();
        let graph = build_metropolis(2, &[(1, 2)]).unwrap();
        let state = ConsensusState {
            y: vec![vec![1.0], vec![-1.0]],
            lambda: vec![vec![0.0], vec![0.0]],
        };
        let x = vec![vec![0.0], vec![0.0]];
        let next = pd_step(&state, &x, &game, &graph, 0.25).unwrap();
        // y updates by -kappa * grad, grad = y/2 at x = 0.
        assert!((next.y[0][0] - 0.875).abs() < 1e-15);
        assert!((next.y[1][0] + 0.875).abs() < 1e-15);
        // Dual picks up +kappa * (I - A) y'.
        assert!((next.lambda[0][0] - 0.21875).abs() < 1e-15);
        assert!((next.lambda[1][0] + 0.21875).abs() < 1e-15);
    }

    #[test]
    fn kkt_point_is_fixed() {
        let game = toys::t2();
        let graph = build_metropolis(2, &[(1, 2)]).unwrap();
        // At x = (0.3, -0.1) the aggregation is 0.2 and the dual solving the
        // stationarity system is (0.2, -0.2).
        let x = vec![vec![0.3], vec![-0.1]];
        let state = ConsensusState {
            y: vec![vec![0.2], vec![0.2]],
            lambda: vec![vec![0.2], vec![-0.2]],
        };
        let next = pd_step(&state, &x, &game, &graph, 0.25).unwrap();
        for i in 0..2 {
            assert!((next.y[i][0] - state.y[i][0]).abs() < 1e-15);
            assert!((next.lambda[i][0] - state.lambda[i][0]).abs() < 1e-15);
        }
    }

    #[test]
    fn duals_stay_zero_sum() {
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let graph = build_metropolis(
            10,
            &[(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (8, 9), (9, 10), (10, 1)],
        )
        .unwrap();
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![0.1 * i as f64 / 10.0]).collect();
        let mut state = ConsensusState::zeros(10, 1);
        for _ in 0..200 {
            state = pd_step(&state, &x, &game, &graph, 0.2).unwrap();
            let total: f64 = state.lambda.iter().map(|l| l[0]).sum();
            assert!(total.abs() < 1e-12);
        }
    }

    #[test]
    fn solve_inner_reaches_identity_aggregation() {
        let game = toys::t1();
        let graph = build_metropolis(1, &[]).unwrap();
        let solve = solve_inner(&[vec![0.73]], &game, &graph, 0.5, 1e-12, 10_000).unwrap();
        assert!(solve.converged);
        assert!((solve.state.y[0][0] - 0.73).abs() < 1e-9);
    }

    #[test]
    fn infinite_tolerance_returns_initial_state() {
        let game = toys::t1();
        let graph = build_metropolis(1, &[]).unwrap();
        let solve =
            solve_inner(&[vec![0.5]], &game, &graph, 0.5, f64::INFINITY, 10_000).unwrap();
        assert_eq!(solve.iterations, 0);
        assert_eq!(solve.state.y[0][0], 0.0);
    }

    #[test]
    fn single_node_pairwise_step_matches_hand_value() {
        // One node, linear outer cost: the update is a gradient step on the
        // perturbed objective, since mixing terms vanish.
        let game = toys::t1_linear_outer();
        let graph = build_metropolis(1, &[]).unwrap();
        let x = vec![vec![0.4]];
        let state = PairwiseConsensusState {
            w: vec![vec![vec![0.4]]],
            u: vec![vec![vec![0.0]]],
        };
        let next = fogd_pd_step(&state, &x, &game, &graph, &[0.5], &[0.1]).unwrap();
        assert!((next.w[0][0][0] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn single_node_pairwise_converges_to_perturbed_minimizer() {
        let game = toys::t1_linear_outer();
        let graph = build_metropolis(1, &[]).unwrap();
        let x = vec![vec![0.4]];
        let mut state = PairwiseConsensusState::zeros(1, 1);
        for _ in 0..2000 {
            state = fogd_pd_step(&state, &x, &game, &graph, &[0.5], &[0.1]).unwrap();
        }
        // Perturbed minimizer of 0.1 * y + (y - x)^2 / 2 is x - 0.1.
        assert!((state.w[0][0][0] - 0.3).abs() < 1e-10);
    }

    #[test]
    fn zero_delta_pairwise_reduces_to_aggregation_dynamics() {
        let graph = build_metropolis(3, &[(1, 2), (2, 3), (1, 3)]).unwrap();
        let params = PowerAllocationParams {
            a: vec![1.0, 2.0, 3.0],
            b: vec![1.0, 1.0, 1.0],
            c: vec![1.0, 1.0, 1.0],
            p0: vec![1.0; 3],
        };
        let game = power_allocation_game(params).unwrap();
        let x = vec![vec![0.2], vec![0.7], vec![0.4]];
        let kappa = 0.2;
        let mut plain = ConsensusState::zeros(3, 1);
        let mut pairwise = PairwiseConsensusState::zeros(3, 1);
        for _ in 0..50 {
            plain = pd_step(&plain, &x, &game, &graph, kappa).unwrap();
            pairwise =
                fogd_pd_step(&pairwise, &x, &game, &graph, &[kappa; 3], &[0.0; 3]).unwrap();
            for i in 0..3 {
                for k in 0..3 {
                    assert!((pairwise.w[i][k][0] - plain.y[k][0]).abs() < 1e-14);
                    assert!((pairwise.u[i][k][0] - plain.lambda[k][0]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn pairwise_fixed_point_stays_put() {
        // Single node again: w at the perturbed minimizer with zero dual.
        let game = toys::t1_linear_outer();
        let graph = build_metropolis(1, &[]).unwrap();
        let x = vec![vec![0.4]];
        let state = PairwiseConsensusState {
            w: vec![vec![vec![0.3]]],
            u: vec![vec![vec![0.0]]],
        };
        let next = fogd_pd_step(&state, &x, &game, &graph, &[0.5], &[0.1]).unwrap();
        assert!((next.w[0][0][0] - 0.3).abs() < 1e-15);
        assert!(next.u[0][0][0].abs() < 1e-15);
    }

    #[test]
    fn frozen_profile_contraction_is_geometric() {
        // The benchmark invariant: with admissible kappa the tracking error
        // decays at least as fast as the theoretical squared-Lyapunov factor.
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let edges: Vec<(usize, usize)> =
            (1..10).map(|i| (i, i + 1)).chain(std::iter::once((10, 1))).collect();
        let graph = build_metropolis(10, &edges).unwrap();
        let spectral = crate::graph::spectral_bounds(&graph).unwrap();
        let constants = crate::game::derive_constants(&game, 64, 15.0).unwrap();
        let steps =
            crate::game::admissible_steps(&constants, &spectral, 10, 0.9, &[]).unwrap();

        let x = vec![vec![0.5]; 10];
        let sigma = crate::oracle::solve_sigma(&game, &x, 1e-13).unwrap();
        let mut state = ConsensusState::zeros(10, 1);
        let mut errs = Vec::new();
        for _ in 0..3000 {
            state = pd_step(&state, &x, &game, &graph, steps.kappa).unwrap();
            let err: f64 =
                state.y.iter().map(|y| (y[0] - sigma[0]).abs()).fold(0.0, f64::max);
            errs.push(err);
        }
        // Geometric-mean ratio over the decaying stretch.
        let lo = 100;
        let hi = errs.iter().position(|&e| e < 1e-11).unwrap_or(errs.len() - 1);
        assert!(hi > lo, "error never decayed: {:?}", &errs[..5]);
        let ratio = (errs[hi] / errs[lo]).powf(1.0 / (hi - lo) as f64);
        let gamma0 = constants.pd_contraction_factor(steps.kappa, spectral.lambda2);
        assert!(
            ratio <= gamma0 + 0.05,
            "observed ratio {ratio} exceeds theoretical {gamma0} + slack"
        );
        assert!(errs[hi] < 1e-6);
    }

    #[test]
    fn divergent_step_reports_non_finite_state() {
        let game = toys::t1();
        let graph = build_metropolis(1, &[]).unwrap();
        let mut state = ConsensusState { y: vec![vec![1.0]], lambda: vec![vec![0.0]] };
        let mut failed = false;
        for _ in 0..600 {
            // kappa far above the admissible range blows the iteration up.
            match pd_step(&state, &[vec![0.0]], &game, &graph, 10.0) {
                Ok(next) => state = next,
                Err(Error::NonFiniteState(_)) => {
                    failed = true;
                    break;
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(failed, "state stayed finite: {:?}", state.y);
    }

    #[test]
    fn mixing_uses_only_neighbors() {
        // Mixing weights of non-neighbors are zero by construction, so a
        // perturbation of a non-neighbor must not leak in one step.
        let graph = build_metropolis(4, &[(1, 2), (2, 3), (3, 4)]).unwrap();
        let mut values = [vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let mut out = vec![0.0];
        graph.mix(0, |j| values[j].as_slice(), &mut out);
        let before = out[0];
        values[3][0] = 100.0; // node 4 is not a neighbor of node 1
        graph.mix(0, |j| values[j].as_slice(), &mut out);
        assert_eq!(before, out[0]);
    }
}
