//! Per-iteration error metrics against oracle references, the theoretical
//! rate-envelope fit, and CSV emission.
//!
//! Norms are Euclidean for vectors and Frobenius for matrices throughout.

use crate::error::{Error, Result};
use crate::fogd::FogdState;
use crate::game::{BilevelGame, StepSizes};
use crate::linalg::{dist, profile_dist, Mat};
use crate::oracle;
use crate::sogd::SogdState;

/// Precomputed equilibrium references shared by every snapshot of a run.
#[derive(Debug, Clone)]
pub struct EquilibriumRefs {
    pub x_star: Vec<Vec<f64>>,
    pub sigma_star: Vec<f64>,
}

/// One diagnostic row. Engine-specific fields are `None` where they do not
/// apply and are emitted as empty CSV cells.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub t: usize,
    pub eta: f64,
    /// Distance of the stacked actions to the reference equilibrium.
    pub err_x: f64,
    /// Worst per-player estimate error against the equilibrium aggregation.
    pub err_y_star: f64,
    /// Worst per-player estimate error against the current aggregation.
    pub err_y_track: f64,
    /// Worst tracking error against the average inner Hessian (second-order
    /// engine only).
    pub err_v: Option<f64>,
    /// Worst auxiliary error against its oracle target (second-order only).
    pub err_z: Option<f64>,
    /// Worst pairwise estimate error against the perturbed minimizers
    /// (first-order only).
    pub err_w: Option<f64>,
    /// Worst two-point estimate error against the exact gradient product
    /// (first-order only).
    pub err_d: Option<f64>,
}

impl TraceRecord {
    pub fn is_finite(&self) -> bool {
        let opt = |v: &Option<f64>| v.is_none_or(|x| x.is_finite() && x >= 0.0);
        self.eta.is_finite()
            && self.err_x.is_finite()
            && self.err_y_star.is_finite()
            && self.err_y_track.is_finite()
            && opt(&self.err_v)
            && opt(&self.err_z)
            && opt(&self.err_w)
            && opt(&self.err_d)
    }
}

fn common_errors(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    refs: &EquilibriumRefs,
    sigma_now: &[f64],
) -> (f64, f64, f64) {
    let err_x = profile_dist(x, &refs.x_star);
    let err_y_star = y.iter().map(|yi| dist(yi, &refs.sigma_star)).fold(0.0, f64::max);
    let err_y_track = y.iter().map(|yi| dist(yi, sigma_now)).fold(0.0, f64::max);
    (err_x, err_y_star, err_y_track)
}

/// Materialize the error quantities of a second-order state. The tracking
/// target is the average of the local Hessians at the state's own estimates;
/// the auxiliary target comes from the oracle at the current actions.
pub fn snapshot_sogd(
    state: &SogdState,
    game: &dyn BilevelGame,
    steps: &StepSizes,
    refs: &EquilibriumRefs,
) -> Result<TraceRecord> {
    let n = game.player_count();
    let oracle_now = oracle::pseudo_gradient(game, &state.x, 1e-12)?;
    let (err_x, err_y_star, err_y_track) =
        common_errors(&state.x, &state.consensus.y, refs, &oracle_now.sigma);

    let m2 = game.inner_dim();
    let mut gbar_state = Mat::zeros(m2, m2);
    for i in 0..n {
        gbar_state.add_assign(&game.inner_hess_yy(i, &state.x[i], &state.consensus.y[i]));
    }
    let gbar_state = gbar_state.scale(1.0 / n as f64);
    let err_v = state
        .v
        .iter()
        .map(|v| v.sub(&gbar_state).frobenius_norm())
        .fold(0.0, f64::max);
    let err_z = state
        .z
        .iter()
        .zip(&oracle_now.h)
        .map(|(z, h)| dist(z, h))
        .fold(0.0, f64::max);

    let record = TraceRecord {
        t: state.t,
        eta: steps.eta(state.t),
        err_x,
        err_y_star,
        err_y_track,
        err_v: Some(err_v),
        err_z: Some(err_z),
        err_w: None,
        err_d: None,
    };
    if !record.is_finite() {
        return Err(Error::NonFiniteState(format!("diagnostics at round {}", state.t)));
    }
    Ok(record)
}

/// Materialize the error quantities of a first-order state.
pub fn snapshot_fogd(
    state: &FogdState,
    game: &dyn BilevelGame,
    steps: &StepSizes,
    refs: &EquilibriumRefs,
) -> Result<TraceRecord> {
    let n = game.player_count();
    let oracle_now = oracle::pseudo_gradient(game, &state.x, 1e-12)?;
    let (err_x, err_y_star, err_y_track) =
        common_errors(&state.x, &state.consensus.y, refs, &oracle_now.sigma);

    let mut err_w = 0.0f64;
    let mut err_d = 0.0f64;
    for i in 0..n {
        let reference =
            oracle::solve_perturbed_inner(game, i, &state.x, steps.delta[i], 1e-12)?;
        for k in 0..n {
            err_w = err_w.max(dist(&state.pairwise.w[i][k], &reference));
        }
        let target = oracle::estimate_target(game, &oracle_now, i, &state.x);
        err_d = err_d.max(dist(&state.d[i], &target));
    }

    let record = TraceRecord {
        t: state.t,
        eta: steps.eta(state.t),
        err_x,
        err_y_star,
        err_y_track,
        err_v: None,
        err_z: None,
        err_w: Some(err_w),
        err_d: Some(err_d),
    };
    if !record.is_finite() {
        return Err(Error::NonFiniteState(format!("diagnostics at round {}", state.t)));
    }
    Ok(record)
}

/// Envelope value `sqrt(ln t / t)`, defined for `t >= 2`.
fn envelope(t: usize) -> f64 {
    ((t as f64).ln() / t as f64).sqrt()
}

/// Fit the action error against the theoretical decay envelope.
///
/// `c_fit` is the smallest constant so that `err_x(t) <= c_fit * envelope(t)`
/// for all traced `t >= t_min`. The violation fraction counts records past
/// `2 * t_min` that exceed the constant fitted on `[t_min, 2 t_min]` alone,
/// flagging envelopes that degrade late in a run.
pub fn rate_envelope_fit(trace: &[TraceRecord], t_min: usize) -> Result<(f64, f64)> {
    let t_min = t_min.max(2);
    let tail: Vec<&TraceRecord> = trace.iter().filter(|r| r.t >= t_min).collect();
    if tail.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let c_fit = tail
        .iter()
        .map(|r| r.err_x / envelope(r.t))
        .fold(0.0, f64::max);
    let c_half = tail
        .iter()
        .filter(|r| r.t <= 2 * t_min)
        .map(|r| r.err_x / envelope(r.t))
        .fold(0.0, f64::max);
    let beyond: Vec<&&TraceRecord> = tail.iter().filter(|r| r.t >= 2 * t_min).collect();
    let violation_fraction = if beyond.is_empty() || c_half == 0.0 {
        0.0
    } else {
        let violations =
            beyond.iter().filter(|r| r.err_x > c_half * envelope(r.t)).count();
        violations as f64 / beyond.len() as f64
    };
    Ok((c_fit, violation_fraction))
}

pub const CSV_HEADER: &str = "t,eta_t,err_x,err_y_star,err_y_track,err_v,err_z,err_w,err_d";

/// Render the trace as CSV, fields in the documented column order, absent
/// fields as empty cells.
pub fn trace_to_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    let cell = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.t,
            r.eta,
            r.err_x,
            r.err_y_star,
            r.err_y_track,
            cell(&r.err_v),
            cell(&r.err_z),
            cell(&r.err_w),
            cell(&r.err_d),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{power_allocation_game, toys, PowerAllocationParams};
    use crate::consensus::{ConsensusState, PairwiseConsensusState};
    use crate::fogd::fogd_init;
    use crate::sogd::sogd_init;

    fn plain_record(t: usize, err_x: f64) -> TraceRecord {
        TraceRecord {
            t,
            eta: 0.1,
            err_x,
            err_y_star: 0.0,
            err_y_track: 0.0,
            err_v: None,
            err_z: None,
            err_w: None,
            err_d: None,
        }
    }

    #[test]
    fn snapshot_at_equilibrium_vanishes() {
        let game = toys::t1();
        let refs = EquilibriumRefs { x_star: vec![vec![0.5]], sigma_star: vec![0.5] };
        let oracle_ref = oracle::pseudo_gradient(&game, &refs.x_star, 1e-13).unwrap();
        let mut state = sogd_init(&game, 1, 0.0);
        state.x = vec![vec![0.5]];
        state.consensus = ConsensusState { y: vec![vec![0.5]], lambda: vec![vec![0.0]] };
        state.z = vec![oracle_ref.h[0].clone()];
        state.v = vec![oracle_ref.gbar.clone()];
        let steps = StepSizes {
            kappa: 0.5,
            alpha: 0.25,
            outer: 0.5,
            eta_a: 2.0,
            eta_b: 1.0,
            beta: vec![],
            delta: vec![],
        };
        let rec = snapshot_sogd(&state, &game, &steps, &refs).unwrap();
        assert!(rec.err_x < 1e-9);
        assert!(rec.err_y_star < 1e-9);
        assert!(rec.err_y_track < 1e-9);
        assert!(rec.err_v.unwrap() < 1e-9);
        assert!(rec.err_z.unwrap() < 1e-9);
    }

    #[test]
    fn initial_tracking_error_vanishes_for_constant_hessians() {
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let state = sogd_init(&game, 7, 0.0);
        let refs = EquilibriumRefs {
            x_star: vec![vec![0.0]; 10],
            sigma_star: vec![0.0],
        };
        let steps = StepSizes {
            kappa: 0.2,
            alpha: 0.2,
            outer: 0.001,
            eta_a: 2.0,
            eta_b: 1.0,
            beta: vec![],
            delta: vec![],
        };
        let rec = snapshot_sogd(&state, &game, &steps, &refs).unwrap();
        assert!(rec.err_v.unwrap() < 1e-15);
    }

    #[test]
    fn coincident_estimates_make_estimate_error_equal_target_norm() {
        // With w_ii = y_i the two-point difference is zero, so its error is
        // exactly the norm of the true gradient product.
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let mut state = fogd_init(&game, 8, 0.0);
        let x: Vec<Vec<f64>> = (0..10).map(|_| vec![0.5]).collect();
        state.x = x.clone();
        let sigma = oracle::solve_sigma(&game, &x, 1e-13).unwrap();
        state.consensus = ConsensusState { y: vec![sigma.clone(); 10], lambda: vec![vec![0.0]; 10] };
        let mut pairwise = PairwiseConsensusState::zeros(10, 1);
        for i in 0..10 {
            for k in 0..10 {
                pairwise.w[i][k] = sigma.clone();
            }
        }
        state.pairwise = pairwise;
        state.d = vec![vec![0.0]; 10];

        let refs = EquilibriumRefs { x_star: x.clone(), sigma_star: sigma.clone() };
        let steps = StepSizes {
            kappa: 0.2,
            alpha: 0.2,
            outer: 0.001,
            eta_a: 2.0,
            eta_b: 1.0,
            beta: vec![0.2; 10],
            delta: vec![0.05; 10],
        };
        let rec = snapshot_fogd(&state, &game, &steps, &refs).unwrap();
        let oracle_now = oracle::pseudo_gradient(&game, &x, 1e-13).unwrap();
        let max_target = (0..10)
            .map(|i| crate::linalg::norm(&oracle::estimate_target(&game, &oracle_now, i, &x)))
            .fold(0.0f64, f64::max);
        assert!((rec.err_d.unwrap() - max_target).abs() < 1e-9);
    }

    #[test]
    fn triangle_inequality_between_error_fields() {
        // err_y_star <= err_y_track + |sigma(x_t) - sigma(x*)| per record.
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let refs_x: Vec<Vec<f64>> =
            [0.0, 0.0, 1.0, 0.59, 0.0, 1.0, 0.47, 0.29, 0.07, 0.29].iter().map(|&v| vec![v]).collect();
        let sigma_star = oracle::solve_sigma(&game, &refs_x, 1e-13).unwrap();
        let refs = EquilibriumRefs { x_star: refs_x, sigma_star };
        let steps = StepSizes {
            kappa: 0.2,
            alpha: 0.2,
            outer: 0.001,
            eta_a: 2.0,
            eta_b: 1.0,
            beta: vec![],
            delta: vec![],
        };
        let mut rng = crate::rng::Rng::seed_from(5);
        for _ in 0..10 {
            let mut state = sogd_init(&game, rng.next_u64(), 1.0);
            state.x = crate::game::sample_profile(&game, &mut rng);
            let rec = snapshot_sogd(&state, &game, &steps, &refs).unwrap();
            let sigma_now = oracle::solve_sigma(&game, &state.x, 1e-13).unwrap();
            let sigma_gap = dist(&sigma_now, &refs.sigma_star);
            assert!(rec.err_y_star <= rec.err_y_track + sigma_gap + 1e-9);
        }
    }

    #[test]
    fn converging_run_has_no_late_divergence() {
        // Every error series of a converging run eventually stays below its
        // own first-quartile value.
        let game = power_allocation_game(PowerAllocationParams::default()).unwrap();
        let edges: Vec<(usize, usize)> = (1..10)
            .map(|i| (i, i + 1))
            .chain([(10, 1), (1, 6), (2, 7), (3, 8), (4, 9), (5, 10)])
            .collect();
        let graph = crate::graph::build_metropolis(10, &edges).unwrap();
        let spectral = crate::graph::spectral_bounds(&graph).unwrap();
        let constants = crate::game::derive_constants(&game, 64, 15.0).unwrap();
        let steps = crate::game::admissible_steps(&constants, &spectral, 10, 0.9, &[]).unwrap();
        let se = oracle::solve_se(&game, 0.1, 1e-10, 400_000).unwrap();
        let refs = EquilibriumRefs { x_star: se.x, sigma_star: se.y };
        let init = crate::sogd::sogd_init(&game, 7, 0.0);
        let (_, trace) =
            crate::sogd::sogd_run(init, &game, &graph, &steps, 20_000, 100, 15.0, &refs)
                .unwrap();

        let series: [(&str, Box<dyn Fn(&TraceRecord) -> f64>); 4] = [
            ("err_x", Box::new(|r| r.err_x)),
            ("err_y_star", Box::new(|r| r.err_y_star)),
            ("err_y_track", Box::new(|r| r.err_y_track)),
            ("err_z", Box::new(|r| r.err_z.unwrap())),
        ];
        for (name, get) in series {
            let mut sorted: Vec<f64> = trace.iter().map(&get).collect();
            sorted.sort_by(f64::total_cmp);
            let quartile = sorted[sorted.len() / 4];
            let tail_start = trace.len() - trace.len() / 4;
            for r in &trace[tail_start..] {
                assert!(
                    get(r) <= quartile + 1e-15,
                    "{name} at t = {} is {} above quartile {quartile}",
                    r.t,
                    get(r)
                );
            }
        }
    }

    #[test]
    fn exact_envelope_trace_fits_with_unit_constant() {
        let trace: Vec<TraceRecord> =
            (2..5000).step_by(7).map(|t| plain_record(t, envelope(t))).collect();
        let (c_fit, violations) = rate_envelope_fit(&trace, 100).unwrap();
        assert!((c_fit - 1.0).abs() < 1e-12);
        assert_eq!(violations, 0.0);
    }

    #[test]
    fn dominated_sequence_never_violates() {
        let trace: Vec<TraceRecord> =
            (2..5000).step_by(7).map(|t| plain_record(t, 1.0 / t as f64)).collect();
        let (_, violations) = rate_envelope_fit(&trace, 100).unwrap();
        assert_eq!(violations, 0.0);
    }

    #[test]
    fn empty_tail_is_an_error() {
        let trace = vec![plain_record(5, 1.0)];
        assert!(matches!(rate_envelope_fit(&trace, 100), Err(Error::EmptyTrace)));
    }

    #[test]
    fn csv_layout_and_missing_cells() {
        let mut r = plain_record(3, 0.25);
        r.err_v = Some(0.5);
        let csv = trace_to_csv(&[r]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "3,0.1,0.25,0,0,0.5,,,");
    }
}
