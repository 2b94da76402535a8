//! First-order engine: per round, one primal-dual step on the aggregation
//! estimates, one pairwise primal-dual step on the perturbed-minimizer
//! estimates, a two-point gradient estimate, and the same Krasnoselskii-Mann
//! projected-gradient action update as the second-order engine.
//!
//! The two-point estimate differences the inner bifunction's gradient in the
//! *first* argument. The printed rule differences the second-argument
//! gradient instead, which lives in the aggregation dimension and only
//! recovers the true gradient product when the dimensions coincide; it is
//! kept available behind `strict_printed_estimator` for comparison runs.

use crate::consensus::{fogd_pd_step, pd_step, ConsensusState, PairwiseConsensusState};
use crate::diagnostics::{snapshot_fogd, EquilibriumRefs, TraceRecord};
use crate::error::{Error, Result};
use crate::game::{BilevelGame, StepSizes};
use crate::graph::GraphTopology;
use crate::linalg::norm;
use crate::rng::Rng;

/// Estimator variants for the gradient product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimatorMode {
    /// First-argument gradient difference; recovers the gradient product in
    /// the small-parameter limit.
    #[default]
    FirstArgument,
    /// The rule as printed (second-argument difference); requires matching
    /// outer and inner dimensions and does not recover the true gradient.
    StrictPrinted,
}

/// Options specific to the first-order engine.
#[derive(Debug, Clone)]
pub struct FogdOptions {
    pub mode: EstimatorMode,
    /// When set, the estimate parameters shrink as `delta * a / (t + a)`
    /// with `a` taken from the schedule.
    pub delta_decay: bool,
}

impl Default for FogdOptions {
    fn default() -> Self {
        FogdOptions { mode: EstimatorMode::FirstArgument, delta_decay: false }
    }
}

/// Full per-player iterate bundle of the first-order engine.
#[derive(Debug, Clone)]
pub struct FogdState {
    pub t: usize,
    pub x: Vec<Vec<f64>>,
    pub consensus: ConsensusState,
    pub pairwise: PairwiseConsensusState,
    /// Latest two-point estimates, one per player (outer dimension).
    pub d: Vec<Vec<f64>>,
}

/// Seeded initial state: actions uniform in their sets; aggregation and
/// pairwise estimates start together (both at the same zero-or-random
/// values) so that their gap carries only the perturbation response.
pub fn fogd_init(game: &dyn BilevelGame, seed: u64, y0_scale: f64) -> FogdState {
    let n = game.player_count();
    let m1 = game.outer_dim();
    let m2 = game.inner_dim();
    let mut rng = Rng::seed_from(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|i| game.action_set(i).sample(&mut rng)).collect();
    let y: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            if y0_scale > 0.0 {
                rng.uniform_vec(0.0, y0_scale, m2)
            } else {
                vec![0.0; m2]
            }
        })
        .collect();
    let mut pairwise = PairwiseConsensusState::zeros(n, m2);
    for i in 0..n {
        for k in 0..n {
            pairwise.w[i][k] = y[k].clone();
        }
    }
    FogdState {
        t: 0,
        x,
        consensus: ConsensusState { y, lambda: vec![vec![0.0; m2]; n] },
        pairwise,
        d: vec![vec![0.0; m1]; n],
    }
}

/// Two-point estimate of the gradient product for one player from its own
/// perturbed-minimizer estimate and aggregation estimate.
pub fn two_point_estimate(
    game: &dyn BilevelGame,
    i: usize,
    x_i: &[f64],
    w_ii: &[f64],
    y_i: &[f64],
    delta_i: f64,
    mode: EstimatorMode,
) -> Vec<f64> {
    match mode {
        EstimatorMode::FirstArgument => {
            let a = game.inner_grad_x(i, x_i, w_ii);
            let b = game.inner_grad_x(i, x_i, y_i);
            a.iter().zip(&b).map(|(p, q)| (p - q) / delta_i).collect()
        }
        EstimatorMode::StrictPrinted => {
            assert_eq!(
                game.outer_dim(),
                game.inner_dim(),
                "printed estimator only applies when outer and inner dimensions match"
            );
            let a = game.inner_grad_y(i, x_i, w_ii);
            let b = game.inner_grad_y(i, x_i, y_i);
            a.iter().zip(&b).map(|(p, q)| (p - q) / delta_i).collect()
        }
    }
}

fn effective_deltas(steps: &StepSizes, options: &FogdOptions, t: usize) -> Vec<f64> {
    if options.delta_decay {
        let scale = steps.eta_a / (t as f64 + steps.eta_a);
        steps.delta.iter().map(|d| d * scale).collect()
    } else {
        steps.delta.clone()
    }
}

/// One full round.
pub fn fogd_iterate(
    state: &FogdState,
    game: &dyn BilevelGame,
    graph: &GraphTopology,
    steps: &StepSizes,
    y_bound: f64,
    options: &FogdOptions,
) -> Result<FogdState> {
    let n = game.player_count();
    assert_eq!(steps.delta.len(), n, "first-order engine needs one delta per player");
    assert_eq!(steps.beta.len(), n, "first-order engine needs one beta per player");
    let eta = steps.eta(state.t);
    let deltas = effective_deltas(steps, options, state.t);

    let consensus = pd_step(&state.consensus, &state.x, game, graph, steps.kappa)?;
    let pairwise =
        fogd_pd_step(&state.pairwise, &state.x, game, graph, &steps.beta, &deltas)?;

    // Estimates and actions consume the pre-round snapshot.
    let mut d_next = Vec::with_capacity(n);
    let mut x_next = Vec::with_capacity(n);
    for i in 0..n {
        let d = two_point_estimate(
            game,
            i,
            &state.x[i],
            &state.pairwise.w[i][i],
            &state.consensus.y[i],
            deltas[i],
            options.mode,
        );
        let mut f_hat = game.outer_grad_x(i, &state.x[i], &state.consensus.y[i]);
        for (f, dc) in f_hat.iter_mut().zip(&d) {
            *f += dc;
        }
        let mut target = state.x[i].clone();
        for (t, f) in target.iter_mut().zip(&f_hat) {
            *t -= steps.outer * f;
        }
        let projected = game.action_set(i).project(&target)?;
        let blended: Vec<f64> = state.x[i]
            .iter()
            .zip(&projected)
            .map(|(xc, pc)| (1.0 - eta) * xc + eta * pc)
            .collect();
        d_next.push(d);
        x_next.push(blended);
    }

    for (i, y) in consensus.y.iter().enumerate() {
        let len = norm(y);
        if len > y_bound {
            return Err(Error::YBoundViolated { player: i, norm: len, bound: y_bound });
        }
    }
    let next = FogdState { t: state.t + 1, x: x_next, consensus, pairwise, d: d_next };
    if !next.x.iter().chain(&next.d).all(|v| v.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFiniteState(format!("first-order round {}", next.t)));
    }
    Ok(next)
}

/// Run `iterations` rounds with tracing as in the second-order engine.
pub fn fogd_run(
    init: FogdState,
    game: &dyn BilevelGame,
    graph: &GraphTopology,
    steps: &StepSizes,
    iterations: usize,
    trace_every: usize,
    y_bound: f64,
    options: &FogdOptions,
    refs: &EquilibriumRefs,
) -> Result<(FogdState, Vec<TraceRecord>)> {
    let mut state = init;
    let mut trace = Vec::new();
    if trace_every > 0 {
        trace.push(snapshot_fogd(&state, game, steps, refs)?);
    }
    for round in 1..=iterations {
        state = fogd_iterate(&state, game, graph, steps, y_bound, options)?;
        if trace_every > 0 && (round % trace_every == 0 || round == iterations) {
            trace.push(snapshot_fogd(&state, game, steps, refs)?);
        }
    }
    Ok((state, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{power_allocation_game, toys, PowerAllocationParams};
    use crate::game::{admissible_steps, derive_constants};
    use crate::graph::{build_metropolis, spectral_bounds};
    use crate::oracle;

    #[test]
    fn zero_difference_gives_zero_estimate() {
        let game = toys::t1();
        let d = two_point_estimate(&game, 0, &[0.4], &[0.7], &[0.7], 0.1, EstimatorMode::FirstArgument);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn linear_outer_toy_recovers_exact_product() {
        // J linear in the aggregation: the perturbed minimizer is x - delta,
        // and the first-argument difference reproduces the gradient product
        // exactly (both equal 1).
        let game = toys::t1_linear_outer();
        let x = vec![vec![0.4]];
        for delta in [0.1, 0.01] {
            let w = oracle::solve_perturbed_inner(&game, 0, &x, delta, 1e-13).unwrap();
            assert!((w[0] - (0.4 - delta)).abs() < 1e-10);
            let sigma = oracle::solve_sigma(&game, &x, 1e-13).unwrap();
            let d = two_point_estimate(&game, 0, &x[0], &w, &sigma, delta, EstimatorMode::FirstArgument);
            assert!((d[0] - 1.0).abs() < 1e-9, "delta {delta}: d = {}", d[0]);
        }
    }

    #[test]
    fn benchmark_estimate_matches_hand_value() {
        // With exact inner values the estimate equals a_i^2 x_i / 2.
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![(i as f64 + 1.0) / 10.0]).collect();
        let oracle_ref = oracle::pseudo_gradient(&game, &x, 1e-13).unwrap();
        for i in 0..10 {
            let delta = 0.05;
            let w = oracle::solve_perturbed_inner(&game, i, &x, delta, 1e-13).unwrap();
            let d = two_point_estimate(&game, i, &x[i], &w, &oracle_ref.sigma, delta, EstimatorMode::FirstArgument);
            let a_i = game.params().a[i];
            let expect = a_i * a_i * x[i][0] / 2.0;
            assert!((d[0] - expect).abs() < 1e-9, "player {i}: {} vs {expect}", d[0]);
        }
    }

    #[test]
    fn printed_estimator_differs_on_benchmark() {
        // The printed second-argument difference does not recover the
        // gradient product here.
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let x: Vec<Vec<f64>> = (0..10).map(|_| vec![0.5]).collect();
        let delta = 0.05;
        let i = 4;
        let w = oracle::solve_perturbed_inner(&game, i, &x, delta, 1e-13).unwrap();
        let sigma = oracle::solve_sigma(&game, &x, 1e-13).unwrap();
        let first =
            two_point_estimate(&game, i, &x[i], &w, &sigma, delta, EstimatorMode::FirstArgument);
        let printed =
            two_point_estimate(&game, i, &x[i], &w, &sigma, delta, EstimatorMode::StrictPrinted);
        let a_i = game.params().a[i];
        let expect = a_i * a_i * x[i][0] / 2.0;
        assert!((first[0] - expect).abs() < 1e-9);
        assert!((printed[0] - expect).abs() > 0.1);
    }

    #[test]
    fn zero_weight_freezes_actions() {
        let game = toys::t1();
        let graph = build_metropolis(1, &[]).unwrap();
        let steps = StepSizes {
            kappa: 0.5,
            alpha: 0.25,
            outer: 0.5,
            eta_a: 1.0,
            eta_b: 0.0,
            beta: vec![0.5],
            delta: vec![0.1],
        };
        let mut state = fogd_init(&game, 2, 0.0);
        state.x = vec![vec![0.3]];
        let next =
            fogd_iterate(&state, &game, &graph, &steps, 10.0, &FogdOptions::default()).unwrap();
        assert_eq!(next.x[0][0], 0.3);
    }

    #[test]
    fn vanishing_outer_coupling_reduces_to_projected_gradient() {
        // For the identity-aggregation toy the outer cost ignores the
        // aggregation, the estimate vanishes in the limit, and the engine
        // behaves like projected gradient on the outer cost alone.
        let game = toys::t1();
        let graph = build_metropolis(1, &[]).unwrap();
        let spectral = spectral_bounds(&graph).unwrap();
        let constants = derive_constants(&game, 64, 10.0).unwrap();
        let steps = admissible_steps(&constants, &spectral, 1, 0.9, &[0.05]).unwrap();
        let refs = EquilibriumRefs { x_star: vec![vec![0.5]], sigma_star: vec![0.5] };
        let init = fogd_init(&game, 3, 0.0);
        let (state, trace) = fogd_run(
            init,
            &game,
            &graph,
            &steps,
            20_000,
            1000,
            10.0,
            &FogdOptions::default(),
            &refs,
        )
        .unwrap();
        assert!((state.x[0][0] - 0.5).abs() < 1e-3, "x = {}", state.x[0][0]);
        assert!(trace.last().unwrap().err_x < 1e-3);
    }

    #[test]
    fn zero_iterations_returns_initial_state() {
        let game = toys::t1();
        let graph = build_metropolis(1, &[]).unwrap();
        let steps = StepSizes {
            kappa: 0.5,
            alpha: 0.25,
            outer: 0.5,
            eta_a: 1.0,
            eta_b: 1.0,
            beta: vec![0.5],
            delta: vec![0.1],
        };
        let refs = EquilibriumRefs { x_star: vec![vec![0.5]], sigma_star: vec![0.5] };
        let init = fogd_init(&game, 4, 0.0);
        let x0 = init.x.clone();
        let (state, trace) = fogd_run(
            init,
            &game,
            &graph,
            &steps,
            0,
            0,
            10.0,
            &FogdOptions::default(),
            &refs,
        )
        .unwrap();
        assert_eq!(state.t, 0);
        assert_eq!(state.x, x0);
        assert!(trace.is_empty());
    }

    #[test]
    fn bias_respects_formula_bound() {
        // With oracle-exact inputs the estimate error is bounded by the
        // analysis constant times the parameter.
        let game = crate::benchmarks::synthetic_quadratic_game(5, 42).unwrap();
        let c = derive_constants(&game, 64, 4.0).unwrap();
        let n = 5.0f64;
        let c0 = (n.sqrt() * c.outer_grad_y_bound * c.outer_grad_y_bound * c.lipschitz
            * (1.0 + c.outer_hess_bound)
            + n.sqrt() * c.mu * c.outer_grad_y_bound * c.lipschitz)
            / (c.mu * c.mu * c.mu);
        let bias_constant = c.lipschitz * c.outer_grad_y_bound * c.outer_grad_y_bound
            / (2.0 * n * c.mu * c.mu)
            + c0 * c.inner_grad_y_bound / 2.0;
        let mut rng = crate::rng::Rng::seed_from(77);
        for _ in 0..10 {
            let x = crate::game::sample_profile(&game, &mut rng);
            let oracle_now = oracle::pseudo_gradient(&game, &x, 1e-13).unwrap();
            for delta in [0.1, 0.01] {
                for i in 0..5 {
                    let w = oracle::solve_perturbed_inner(&game, i, &x, delta, 1e-13).unwrap();
                    let d = two_point_estimate(
                        &game,
                        i,
                        &x[i],
                        &w,
                        &oracle_now.sigma,
                        delta,
                        EstimatorMode::FirstArgument,
                    );
                    let target = oracle::estimate_target(&game, &oracle_now, i, &x);
                    let err = crate::linalg::dist(&d, &target);
                    assert!(
                        err <= bias_constant * delta,
                        "player {i}, delta {delta}: error {err} above {}",
                        bias_constant * delta
                    );
                }
            }
        }
    }

    #[test]
    fn frozen_profile_pairwise_estimates_converge_geometrically() {
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let edges: Vec<(usize, usize)> = (1..10)
            .map(|i| (i, i + 1))
            .chain([(10, 1), (1, 6), (2, 7), (3, 8), (4, 9), (5, 10)])
            .collect();
        let graph = build_metropolis(10, &edges).unwrap();
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![0.05 * (i as f64 + 1.0)]).collect();
        let deltas = vec![0.1; 10];
        let beta = vec![0.2; 10];
        let references: Vec<Vec<f64>> = (0..10)
            .map(|i| oracle::solve_perturbed_inner(&game, i, &x, deltas[i], 1e-13).unwrap())
            .collect();
        let mut state = crate::consensus::PairwiseConsensusState::zeros(10, 1);
        let mut errs = Vec::new();
        for _ in 0..2000 {
            state =
                crate::consensus::fogd_pd_step(&state, &x, &game, &graph, &beta, &deltas)
                    .unwrap();
            let mut err = 0.0f64;
            for i in 0..10 {
                for k in 0..10 {
                    err = err.max(crate::linalg::dist(&state.w[i][k], &references[i]));
                }
            }
            errs.push(err);
        }
        let lo = errs.iter().position(|&e| e < errs[0] / 10.0).unwrap();
        let hi = errs.iter().position(|&e| e < 1e-10).unwrap_or(errs.len() - 1);
        assert!(hi > lo);
        let ratio = (errs[hi] / errs[lo]).powf(1.0 / (hi - lo) as f64);
        assert!(ratio < 1.0, "no geometric decay: ratio {ratio}");
        assert!(errs[hi] < 1e-8, "floor {}", errs[hi]);
    }

    #[test]
    fn exact_estimate_fixed_point_keeps_actions_still() {
        // At the oracle equilibrium with exact inner values, the benchmark's
        // estimator is exact, so the action update is a true fixed point.
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let edges: Vec<(usize, usize)> = (1..10)
            .map(|i| (i, i + 1))
            .chain([(10, 1), (1, 6), (2, 7), (3, 8), (4, 9), (5, 10)])
            .collect();
        let graph = build_metropolis(10, &edges).unwrap();
        let se = oracle::solve_se(&game, 0.1, 1e-11, 400_000).unwrap();
        let deltas = vec![0.05; 10];
        let steps = StepSizes {
            kappa: 0.2,
            alpha: 0.2,
            outer: 0.0005,
            eta_a: 2.0,
            eta_b: 1.0,
            beta: vec![0.2; 10],
            delta: deltas.clone(),
        };
        let mut state = fogd_init(&game, 1, 0.0);
        state.x = se.x.clone();
        state.consensus.y = vec![se.y.clone(); 10];
        for i in 0..10 {
            let w = oracle::solve_perturbed_inner(&game, i, &se.x, deltas[i], 1e-13).unwrap();
            for k in 0..10 {
                state.pairwise.w[i][k] = w.clone();
            }
        }
        let next =
            fogd_iterate(&state, &game, &graph, &steps, 15.0, &FogdOptions::default()).unwrap();
        let moved = crate::linalg::profile_dist(&next.x, &se.x);
        assert!(moved < 1e-9, "actions moved by {moved}");
    }

    #[test]
    fn delta_decay_shrinks_parameters() {
        let steps = StepSizes {
            kappa: 0.5,
            alpha: 0.25,
            outer: 0.5,
            eta_a: 10.0,
            eta_b: 5.0,
            beta: vec![0.5],
            delta: vec![0.2],
        };
        let options = FogdOptions { mode: EstimatorMode::FirstArgument, delta_decay: true };
        let d0 = effective_deltas(&steps, &options, 0);
        let d100 = effective_deltas(&steps, &options, 100);
        assert_eq!(d0[0], 0.2);
        assert!(d100[0] < 0.02 + 1e-12);
    }
}
