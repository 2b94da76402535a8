//! Second-order engine: per round, one primal-dual step on the aggregation
//! estimates, dynamic average tracking of the inner Hessians, a descent step
//! on the auxiliary variable, and a Krasnoselskii-Mann projected-gradient
//! update of the actions.
//!
//! The printed update rules index their right-hand sides by time, not by
//! presentation order: the Hessian tracking increment consumes the *new*
//! actions and estimates while the auxiliary and action updates consume the
//! old ones. Every right-hand side is therefore snapshotted before any write.

use crate::consensus::{pd_step, ConsensusState};
use crate::diagnostics::{snapshot_sogd, EquilibriumRefs, TraceRecord};
use crate::error::{Error, Result};
use crate::game::{BilevelGame, StepSizes};
use crate::graph::GraphTopology;
use crate::linalg::{norm, Mat};
use crate::rng::Rng;

/// Full per-player iterate bundle of the second-order engine.
#[derive(Debug, Clone)]
pub struct SogdState {
    pub t: usize,
    /// Actions, one `m1`-vector per player, feasible at every round.
    pub x: Vec<Vec<f64>>,
    pub consensus: ConsensusState,
    /// Tracking estimates of the average inner Hessian, one `m2 x m2` each.
    pub v: Vec<Mat>,
    /// Estimates of the auxiliary targets, one `m2`-vector per player.
    pub z: Vec<Vec<f64>>,
    /// Inner Hessians at the current point, cached for the next tracking
    /// increment.
    hess_now: Vec<Mat>,
}

/// Seeded initial state: actions uniform in their sets, estimates at zero
/// (or uniform in `[0, y0_scale]` when positive), duals and auxiliaries at
/// zero, tracking variables at the local Hessians.
pub fn sogd_init(
    game: &dyn BilevelGame,
    seed: u64,
    y0_scale: f64,
) -> SogdState {
    let n = game.player_count();
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
    let hess_now: Vec<Mat> = (0..n).map(|i| game.inner_hess_yy(i, &x[i], &y[i])).collect();
    SogdState {
        t: 0,
        v: hess_now.clone(),
        z: vec![vec![0.0; m2]; n],
        consensus: ConsensusState { y, lambda: vec![vec![0.0; m2]; n] },
        x,
        hess_now,
    }
}

/// One full round.
pub fn sogd_iterate(
    state: &SogdState,
    game: &dyn BilevelGame,
    graph: &GraphTopology,
    steps: &StepSizes,
    y_bound: f64,
) -> Result<SogdState> {
    let n = game.player_count();
    let m2 = game.inner_dim();
    let eta = steps.eta(state.t);

    // Aggregation estimates advance first.
    let consensus = pd_step(&state.consensus, &state.x, game, graph, steps.kappa)?;

    // Action update from current-round quantities.
    let mut x_next = Vec::with_capacity(n);
    for i in 0..n {
        let mut f_hat = game.outer_grad_x(i, &state.x[i], &state.consensus.y[i]);
        let jac = game.inner_jac_xy(i, &state.x[i], &state.consensus.y[i]);
        let jz = jac.mul_vec(&state.z[i]);
        for (f, c) in f_hat.iter_mut().zip(&jz) {
            *f += c;
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
        x_next.push(blended);
    }

    // Hessian tracking consumes the refreshed actions and estimates.
    let mut hess_next = Vec::with_capacity(n);
    let mut v_next = Vec::with_capacity(n);
    for i in 0..n {
        let fresh = game.inner_hess_yy(i, &x_next[i], &consensus.y[i]);
        let mut mixed = Mat::zeros(m2, m2);
        let aii = graph.weight(i, i);
        for (m, s) in mixed.data.iter_mut().zip(&state.v[i].data) {
            *m = aii * s;
        }
        for &j in &graph.neighbor_lists[i] {
            let w = graph.weight(i, j);
            for (m, s) in mixed.data.iter_mut().zip(&state.v[j].data) {
                *m += w * s;
            }
        }
        mixed.add_assign(&fresh.sub(&state.hess_now[i]));
        hess_next.push(fresh);
        v_next.push(mixed);
    }

    // Auxiliary descent from current-round tracking values.
    let nf = n as f64;
    let mut z_next = Vec::with_capacity(n);
    for i in 0..n {
        let vz = state.v[i].mul_vec(&state.z[i]);
        let gy = game.outer_grad_y(i, &state.x[i], &state.consensus.y[i]);
        let z: Vec<f64> = state.z[i]
            .iter()
            .zip(vz.iter().zip(&gy))
            .map(|(zc, (vc, gc))| zc - steps.alpha * (nf * vc + gc))
            .collect();
        z_next.push(z);
    }

    for (i, y) in consensus.y.iter().enumerate() {
        let len = norm(y);
        if len > y_bound {
            return Err(Error::YBoundViolated { player: i, norm: len, bound: y_bound });
        }
    }
    let next = SogdState {
        t: state.t + 1,
        x: x_next,
        consensus,
        v: v_next,
        z: z_next,
        hess_now: hess_next,
    };
    if !next.x.iter().chain(&next.z).all(|v| v.iter().all(|c| c.is_finite()))
        || !next.v.iter().all(Mat::is_finite)
    {
        return Err(Error::NonFiniteState(format!("second-order round {}", next.t)));
    }
    Ok(next)
}

/// Run `iterations` rounds, emitting a trace record every `trace_every`
/// rounds (0 disables tracing; the initial and final states are always
/// recorded when tracing is on).
pub fn sogd_run(
    init: SogdState,
    game: &dyn BilevelGame,
    graph: &GraphTopology,
    steps: &StepSizes,
    iterations: usize,
    trace_every: usize,
    y_bound: f64,
    refs: &EquilibriumRefs,
) -> Result<(SogdState, Vec<TraceRecord>)> {
    let mut state = init;
    let mut trace = Vec::new();
    if trace_every > 0 {
        trace.push(snapshot_sogd(&state, game, steps, refs)?);
    }
    for round in 1..=iterations {
        state = sogd_iterate(&state, game, graph, steps, y_bound)?;
        if trace_every > 0 && (round % trace_every == 0 || round == iterations) {
            trace.push(snapshot_sogd(&state, game, steps, refs)?);
        }
    }
    Ok((state, trace))
}

/// Average of the tracking estimates minus the average of the local
/// Hessians at the current state: zero at every round by conservation.
pub fn tracking_conservation_gap(state: &SogdState, game: &dyn BilevelGame) -> f64 {
    let n = game.player_count();
    let m2 = game.inner_dim();
    let mut v_avg = Mat::zeros(m2, m2);
    let mut g_avg = Mat::zeros(m2, m2);
    for i in 0..n {
        v_avg.add_assign(&state.v[i]);
        g_avg.add_assign(&game.inner_hess_yy(i, &state.x[i], &state.consensus.y[i]));
    }
    v_avg.sub(&g_avg).frobenius_norm() / n as f64
}
