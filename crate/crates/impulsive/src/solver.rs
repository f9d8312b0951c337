//! Trajectory solvers.
//!
//! Three routes produce trajectories:
//!  * [`solve_reduced`] integrates the straightened drift with the control
//!    entering only as an argument, so it accepts any pointwise-defined
//!    control;
//!  * [`pd_solution`] composes the reduced solution with the chart to get
//!    the pointwise-defined solution of the original system, inheriting the
//!    discontinuity set of the control;
//!  * [`solve_original_ac`] integrates the embedded `(x, z)` system directly
//!    and only accepts absolutely continuous controls. It serves as the
//!    independent cross-check for the chart route.
//!
//! [`ac_approximation`] and [`pd_limit_study`] witness that the pointwise
//! solution is the limit of classical solutions along absolutely continuous
//! controls converging in L1 and at the probe time.

use std::cell::RefCell;

use thiserror::Error;

use crate::flowbox::{ChartError, FlowBoxChart};
use crate::ode::{self, OdeError};
use crate::rng;
use crate::signal::{
    merge_times, ControlSignal, Piece, PieceFn, SignalError, SignalKind, Trajectory,
    TrajectoryJump,
};
use crate::util::{dist2, loglog_slope, norm2};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("invalid control: {0}")]
    InvalidControl(String),
}

const JUMP_TOL: f64 = 1e-12;

/// Integration grid: requested sample times joined with every breakpoint of
/// the controls and both horizon endpoints.
fn build_grid(u: &ControlSignal, v: &ControlSignal, sample_times: &[f64]) -> Vec<f64> {
    let ub = u.breakpoints();
    let vb = v.breakpoints();
    let ends = [u.a, u.b];
    merge_times(&[sample_times, &ub, &vb, &ends], 1e-13)
}

fn piece_covering(sig: &ControlSignal, t_mid: f64) -> &Piece {
    let idx = sig
        .pieces
        .iter()
        .position(|p| t_mid < p.t1)
        .unwrap_or(sig.pieces.len() - 1);
    &sig.pieces[idx]
}

/// Carathéodory solution of the reduced system `xi' = F(xi, u(t), v(t))`.
///
/// The control enters only through its value, so `xi` is continuous across
/// jumps of `u`; integration restarts at every breakpoint to keep the
/// right-hand side smooth inside each span.
pub fn solve_reduced(
    chart: &FlowBoxChart,
    xi0: &[f64],
    u: &ControlSignal,
    v: &ControlSignal,
    sample_times: &[f64],
) -> Result<Trajectory, SolveError> {
    let grid = build_grid(u, v, sample_times);
    let mut states = Vec::with_capacity(grid.len());
    let mut xi = xi0.to_vec();
    states.push(xi.clone());
    let chart_err: RefCell<Option<ChartError>> = RefCell::new(None);
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let mid = 0.5 * (t0 + t1);
        let up = piece_covering(u, mid);
        let vp = piece_covering(v, mid);
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            let uv = up.value(t);
            let vv = vp.value(t);
            match chart.pushforward_drift(y, &uv, &vv) {
                Ok(f) => dy.copy_from_slice(&f),
                Err(e) => {
                    *chart_err.borrow_mut() = Some(e);
                    dy.fill(f64::NAN);
                }
            }
        };
        xi = match ode::integrate(rhs, t0, t1, &xi, &chart.ode) {
            Ok(y) => y,
            Err(e) => {
                if let Some(ce) = chart_err.borrow_mut().take() {
                    return Err(ce.into());
                }
                return Err(e.into());
            }
        };
        states.push(xi.clone());
    }
    Ok(Trajectory { times: grid, states, controls: vec![], jumps: vec![] })
}

/// Pointwise-defined solution of the impulsive system.
///
/// `xi0 = phi_pr(x0, u(a))`, `xi` solves the reduced equation, and the state
/// is recovered pointwise as `x(t) = phi_pr(xi(t), -u(t))`. The state
/// inherits exactly the jump set of `u`; at each jump both one-sided values
/// are stored.
pub fn pd_solution(
    chart: &FlowBoxChart,
    x0: &[f64],
    u: &ControlSignal,
    v: &ControlSignal,
    sample_times: &[f64],
) -> Result<Trajectory, SolveError> {
    if !u.values_in_domain(&chart.sys.u_set, 1e-9) {
        return Err(SolveError::InvalidControl(
            "impulsive control takes values outside U".to_string(),
        ));
    }
    let u_bar = u.value(u.a);
    let xi0 = chart.phi_pr(x0, &u_bar)?;
    let xi_traj = solve_reduced(chart, &xi0, u, v, sample_times)?;

    let jump_times: Vec<f64> = u.jumps(JUMP_TOL).iter().map(|j| j.t).collect();
    let mut states = Vec::with_capacity(xi_traj.times.len());
    let mut controls = Vec::with_capacity(xi_traj.times.len());
    let mut jumps = Vec::new();
    for (i, (&t, xi)) in xi_traj.times.iter().zip(&xi_traj.states).enumerate() {
        let is_jump = jump_times.iter().any(|&tau| (tau - t).abs() <= 1e-12);
        // Node values are the right-continuous representatives; at a jump
        // the other one-sided value goes into the jump record. At an
        // initial jump the pointwise value x(a) = x0 plays the "left" role
        // and the node stores the limit from the right.
        let u_here = if is_jump && t <= u.a {
            u.pieces[0].value(u.a)
        } else {
            u.value(t)
        };
        let (x, _) = chart.phi_inverse(xi, &u_here)?;
        if is_jump {
            if t <= u.a {
                jumps.push(TrajectoryJump { index: i, left_state: x0.to_vec() });
            } else {
                let u_left = u.left_limit(t);
                let (x_left, _) = chart.phi_inverse(xi, &u_left)?;
                jumps.push(TrajectoryJump { index: i, left_state: x_left });
            }
        }
        states.push(x);
        controls.push(u_here);
    }
    Ok(Trajectory { times: xi_traj.times, states, controls, jumps })
}

/// Direct Carathéodory integration of the embedded `(x, z)` system
/// `(x, z)' = f(x, z, v) + sum_a g_a(x, z) u_a'` for absolutely continuous
/// `u`. Returns the full `(x, z)` trajectory.
pub fn solve_original_ac(
    chart: &FlowBoxChart,
    x0: &[f64],
    u: &ControlSignal,
    v: &ControlSignal,
    sample_times: &[f64],
) -> Result<Trajectory, SolveError> {
    if !u.is_ac() {
        return Err(SolveError::InvalidControl(
            "direct integration needs an absolutely continuous control".to_string(),
        ));
    }
    let sys = &chart.sys;
    let (n, m, _) = sys.dims();
    let dim = n + m;
    let grid = build_grid(u, v, sample_times);
    let mut state = Vec::with_capacity(dim);
    state.extend_from_slice(x0);
    state.extend_from_slice(&u.value(u.a));
    let mut states = Vec::with_capacity(grid.len());
    states.push(state.clone());
    let mut fbuf = vec![0.0; dim];
    let mut gbuf = vec![0.0; dim];
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let mid = 0.5 * (t0 + t1);
        let up = piece_covering(u, mid);
        let vp = piece_covering(v, mid);
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            let vv = vp.value(t);
            let du = up.derivative(t);
            sys.extended_f(y, &vv, &mut fbuf);
            dy.copy_from_slice(&fbuf);
            for (alpha, &da) in du.iter().enumerate() {
                if da != 0.0 {
                    sys.extended_g(alpha, y, &mut gbuf);
                    for (o, g) in dy.iter_mut().zip(&gbuf) {
                        *o += da * g;
                    }
                }
            }
        };
        state = ode::integrate(rhs, t0, t1, &state, &chart.ode)?;
        states.push(state.clone());
    }
    let controls = grid.iter().map(|&t| u.value(t)).collect();
    Ok(Trajectory { times: grid, states, controls, jumps: vec![] })
}

/// Drop the trailing `m` components of an embedded trajectory.
pub fn project_state(traj: &Trajectory, n: usize) -> Trajectory {
    Trajectory {
        times: traj.times.clone(),
        states: traj.states.iter().map(|s| s[..n].to_vec()).collect(),
        controls: traj.controls.clone(),
        jumps: traj
            .jumps
            .iter()
            .map(|j| TrajectoryJump { index: j.index, left_state: j.left_state[..n].to_vec() })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Absolutely continuous approximation of a jumpy control
// ---------------------------------------------------------------------------

struct RampSpec {
    lo: f64,
    hi: f64,
    val_lo: Vec<f64>,
    val_hi: Vec<f64>,
}

/// Replace every jump of `u` by a linear ramp so that the result is
/// absolutely continuous, agrees with `u` at `a`, at `b` and at `t_star`,
/// and satisfies `||u_k - u||_1 = O(4^{-k})`.
///
/// A ramp normally occupies `[tau, tau + w]` just after its jump (matching
/// the right-continuous convention); it moves in front of the jump when the
/// jump time is `t_star` or `b`, and shrinks whenever it would otherwise
/// cross `t_star` or a neighbouring breakpoint.
pub fn ac_approximation(
    u: &ControlSignal,
    t_star: f64,
    k: u32,
) -> Result<ControlSignal, SolveError> {
    if t_star < u.a - 1e-12 || t_star > u.b + 1e-12 {
        return Err(SolveError::InvalidControl(format!(
            "t_star = {t_star} outside horizon [{}, {}]",
            u.a, u.b
        )));
    }
    let jumps = u.jumps(JUMP_TOL);
    if jumps.is_empty() && u.is_ac() {
        return Ok(u.clone());
    }
    if jumps.is_empty() {
        let mut ac = u.clone();
        ac.kind = SignalKind::Ac;
        return Ok(ac);
    }

    // Breakpoints bounding each ramp (jump times plus horizon endpoints).
    let mut bounds: Vec<f64> = vec![u.a, u.b];
    bounds.extend(u.breakpoints());
    bounds.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let n_jumps = jumps.len() as f64;
    let w_base = (u.b - u.a) / (4f64.powi(k as i32) * n_jumps);

    let mut ramps: Vec<RampSpec> = Vec::new();
    for j in &jumps {
        let tau = j.t;
        let before = (tau - u.a).abs() > 1e-12
            && ((tau - u.b).abs() <= 1e-12 || (tau - t_star).abs() <= 1e-12);
        if before {
            // Ramp `[tau - w, tau]`, ending exactly at the jump value.
            let prev = bounds
                .iter()
                .copied()
                .filter(|&x| x < tau - 1e-12)
                .fold(u.a, f64::max);
            let mut w = w_base.min(0.5 * (tau - prev));
            if t_star > tau - w && t_star < tau {
                w = 0.5 * (tau - t_star);
            }
            if w <= 0.0 {
                return Err(SolveError::InvalidControl(
                    "no room to place an approximation ramp".to_string(),
                ));
            }
            let lo = tau - w;
            ramps.push(RampSpec { lo, hi: tau, val_lo: u.value(lo), val_hi: j.right.clone() });
        } else {
            // Ramp `[tau, tau + w]`, starting from the left limit.
            let next = bounds
                .iter()
                .copied()
                .filter(|&x| x > tau + 1e-12)
                .fold(u.b, f64::min);
            let mut w = w_base.min(0.5 * (next - tau));
            if t_star > tau && t_star < tau + w {
                w = 0.5 * (t_star - tau);
            }
            if w <= 0.0 {
                return Err(SolveError::InvalidControl(
                    "no room to place an approximation ramp".to_string(),
                ));
            }
            let hi = tau + w;
            ramps.push(RampSpec { lo: tau, hi, val_lo: j.left.clone(), val_hi: u.value(hi) });
        }
    }
    ramps.sort_by(|r, s| r.lo.partial_cmp(&s.lo).unwrap());

    // Stitch: original pieces outside ramps, affine bridges inside.
    let mut cuts: Vec<f64> = vec![u.a, u.b];
    cuts.extend(u.breakpoints());
    for r in &ramps {
        cuts.push(r.lo);
        cuts.push(r.hi);
    }
    let cuts = merge_times(&[&cuts], 1e-13);

    let mut pieces = Vec::new();
    for w in cuts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let mid = 0.5 * (t0 + t1);
        if let Some(r) = ramps.iter().find(|r| mid > r.lo && mid < r.hi) {
            let slope: Vec<f64> = r
                .val_lo
                .iter()
                .zip(&r.val_hi)
                .map(|(a, b)| (b - a) / (r.hi - r.lo))
                .collect();
            let start: Vec<f64> = r
                .val_lo
                .iter()
                .zip(&slope)
                .map(|(a, s)| a + s * (t0 - r.lo))
                .collect();
            pieces.push(Piece { t0, t1, f: PieceFn::Affine { start, slope } });
        } else {
            let src = piece_covering(u, mid);
            let f = match &src.f {
                PieceFn::Constant(v) => PieceFn::Constant(v.clone()),
                PieceFn::Affine { slope, .. } => {
                    PieceFn::Affine { start: src.value(t0), slope: slope.clone() }
                }
                PieceFn::Expr(es) => PieceFn::Expr(es.clone()),
            };
            pieces.push(Piece { t0, t1, f });
        }
    }
    let ac = ControlSignal::new(pieces, u.end_value.clone(), SignalKind::Ac)?;
    Ok(ac)
}

/// Numeric L1 distance between two signals (piecewise trapezoid on the
/// merged breakpoints with sub-sampling).
pub fn signal_l1_distance(u1: &ControlSignal, u2: &ControlSignal) -> f64 {
    let b1 = u1.breakpoints();
    let b2 = u2.breakpoints();
    let ends = [u1.a, u1.b];
    let grid = merge_times(&[&b1, &b2, &ends], 1e-13);
    let mut acc = 0.0;
    let sub = 16;
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let h = (t1 - t0) / sub as f64;
        let mut prev = {
            let mid_shift = t0 + 1e-13 * (t1 - t0);
            dist2(&u1.value(mid_shift), &u2.value(mid_shift))
        };
        for i in 1..=sub {
            let t = if i == sub { t1 - 1e-13 * (t1 - t0) } else { t0 + h * i as f64 };
            let cur = dist2(&u1.value(t), &u2.value(t));
            acc += 0.5 * (prev + cur) * h;
            prev = cur;
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Limit study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct PdLimitReport {
    pub ks: Vec<u32>,
    /// `||u_k - u||_1` for each k.
    pub u_l1: Vec<f64>,
    /// `||x_k - x_pd||_1` for each k.
    pub x_l1: Vec<f64>,
    /// `|x_k(t*) - x_pd(t*)|` for each k.
    pub t_star_err: Vec<f64>,
    /// Log-log regression slope of `x_l1` against `u_l1`.
    pub slope: Option<f64>,
    pub monotone_l1: bool,
    pub monotone_t_star: bool,
}

/// For each `k`, build the AC approximant, integrate it classically and
/// compare with the pointwise solution in L1 and at `t_star`.
pub fn pd_limit_study(
    chart: &FlowBoxChart,
    x0: &[f64],
    u: &ControlSignal,
    v: &ControlSignal,
    t_star: f64,
    ks: &[u32],
) -> Result<PdLimitReport, SolveError> {
    let n = chart.sys.n();
    let base: Vec<f64> = crate::util::linspace(u.a, u.b, 201);
    let mut u_l1 = Vec::new();
    let mut x_l1 = Vec::new();
    let mut t_err = Vec::new();
    for &k in ks {
        let uk = ac_approximation(u, t_star, k)?;
        let mut samples = base.clone();
        samples.push(t_star);
        let ub = uk.breakpoints();
        let samples = merge_times(&[&samples, &ub], 1e-13);
        let x_pd = pd_solution(chart, x0, u, v, &samples)?;
        let x_k = project_state(&solve_original_ac(chart, x0, &uk, v, &samples)?, n);
        debug_assert_eq!(x_pd.times.len(), x_k.times.len());
        u_l1.push(signal_l1_distance(&uk, u));
        x_l1.push(x_pd.l1_distance(&x_k));
        let idx = x_pd
            .times
            .iter()
            .position(|&t| (t - t_star).abs() <= 1e-12)
            .expect("t_star is on the grid");
        t_err.push(dist2(&x_pd.states[idx], &x_k.states[idx]));
    }
    // 5% slack for measurement noise plus an absolute floor: once the
    // errors reach the integration noise level, ordering is meaningless.
    let monotone = |xs: &[f64]| xs.windows(2).all(|w| w[1] <= w[0] * 1.05 + 1e-9);
    Ok(PdLimitReport {
        ks: ks.to_vec(),
        slope: loglog_slope(&u_l1, &x_l1),
        monotone_l1: monotone(&x_l1),
        monotone_t_star: monotone(&t_err),
        u_l1,
        x_l1,
        t_star_err: t_err,
    })
}

// ---------------------------------------------------------------------------
// Lipschitz dependence probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct LipschitzReport {
    /// Max over sampled pairs and probe times of the solution-to-data ratio.
    pub max_ratio: f64,
    pub pairs: usize,
    pub skipped: usize,
}

/// Empirical continuous-dependence constant: sample control/initial-state
/// pairs, solve both, and take the worst ratio of solution distance to data
/// distance. Degenerate pairs (zero data distance) are skipped and counted.
pub fn lipschitz_dependence_probe(
    chart: &FlowBoxChart,
    r: f64,
    k_box: (&[f64], &[f64]),
    n_pairs: usize,
    v: &ControlSignal,
    seed: u64,
) -> Result<LipschitzReport, SolveError> {
    assert!(n_pairs >= 1);
    let (n, m, _) = chart.sys.dims();
    let mut rng = rng::stream(seed, rng::purpose::LIPSCHITZ);
    let a = v.a;
    let b = v.b;
    let pieces = 4;
    let mut max_ratio = 0.0f64;
    let mut skipped = 0usize;
    let base: Vec<f64> = crate::util::linspace(a, b, 51);

    let draw_pair = |rng: &mut rand_chacha::ChaCha12Rng| -> (Vec<f64>, ControlSignal) {
        let mut x0 = rng::uniform_in(rng, &vec![-r; n], &vec![r; n]);
        let nr = norm2(&x0);
        if nr > r {
            for c in x0.iter_mut() {
                *c *= r / nr;
            }
        }
        let vals: Vec<Vec<f64>> =
            (0..pieces).map(|_| rng::uniform_in(rng, k_box.0, k_box.1)).collect();
        let end = rng::uniform_in(rng, k_box.0, k_box.1);
        let u = ControlSignal::piecewise_constant(a, b, vals, end).unwrap();
        (x0, u)
    };

    for _ in 0..n_pairs {
        let (x1, u1) = draw_pair(&mut rng);
        let (x2, u2) = draw_pair(&mut rng);
        let b1 = u1.breakpoints();
        let b2 = u2.breakpoints();
        let grid = merge_times(&[&base, &b1, &b2], 1e-13);
        let t1 = pd_solution(chart, &x1, &u1, v, &grid)?;
        let t2 = pd_solution(chart, &x2, &u2, v, &grid)?;
        let l1_x = t1.l1_distance(&t2);
        let l1_u = signal_l1_distance(&u1, &u2);
        let d_x0 = dist2(&x1, &x2);
        let d_ua = dist2(&u1.value(a), &u2.value(a));
        let probe_count = 10;
        for pi in 0..probe_count {
            let t = a + (b - a) * (pi as f64 + 0.5) / probe_count as f64;
            let xt1 = t1.value_at(t);
            let xt2 = t2.value_at(t);
            let num = dist2(&xt1, &xt2) + l1_x;
            let den = d_x0 + d_ua + dist2(&u1.value(t), &u2.value(t)) + l1_u;
            if den < 1e-12 {
                skipped += 1;
                continue;
            }
            max_ratio = max_ratio.max(num / den);
        }
        let _ = m;
    }
    Ok(LipschitzReport { max_ratio, pairs: n_pairs, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::util::linspace;
    use std::sync::Arc;

    fn toy_chart() -> FlowBoxChart {
        FlowBoxChart::new(Arc::new(presets::toy_system()))
            .with_variational_jacobian()
            .with_tol(1e-10)
    }

    #[test]
    fn reduced_zero_drift_is_constant() {
        let sys = Arc::new(presets::translation_system());
        let chart = FlowBoxChart::new(sys);
        let u = ControlSignal::piecewise_constant(0.0, 1.0, vec![vec![0.3]], vec![0.3]).unwrap();
        let v = ControlSignal::constant(0.0, 1.0, vec![]);
        let traj = solve_reduced(&chart, &[1.5], &u, &v, &linspace(0.0, 1.0, 11)).unwrap();
        for s in &traj.states {
            assert!((s[0] - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn reduced_toy_closed_form() {
        // xi' = xi v with v = 1 on [0, 1/2), 0 after.
        let chart = toy_chart();
        let xi0 = 1.0 / std::f64::consts::E;
        let u = ControlSignal::piecewise_constant(0.0, 1.0, vec![vec![0.0]], vec![0.0]).unwrap();
        let v = presets::toy_ordinary_control();
        let traj =
            solve_reduced(&chart, &[xi0], &u, &v, &linspace(0.0, 1.0, 21)).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let expect = xi0 * t.min(0.5).exp();
            assert!((s[0] - expect).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn pd_constant_control_no_drift_is_constant() {
        let sys = Arc::new(presets::translation_system());
        let chart = FlowBoxChart::new(sys);
        let u = ControlSignal::piecewise_constant(0.0, 1.0, vec![vec![0.4]], vec![0.4]).unwrap();
        let v = ControlSignal::constant(0.0, 1.0, vec![]);
        let traj = pd_solution(&chart, &[2.0], &u, &v, &linspace(0.0, 1.0, 9)).unwrap();
        for s in &traj.states {
            assert!((s[0] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pd_matches_alternating_closed_form() {
        let chart = toy_chart();
        let k_max = 8;
        let u = presets::alternating_control(k_max);
        let v = presets::toy_ordinary_control();
        let x0 = 1.3;
        let samples = linspace(0.0, 1.0, 41);
        let traj = pd_solution(&chart, &[x0], &u, &v, &samples).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            if let Some(expect) = presets::alternating_closed_form(x0, *t, k_max) {
                assert!(
                    (s[0] - expect).abs() < 1e-7 * expect.abs().max(1.0),
                    "t = {t}: got {}, expected {expect}",
                    s[0]
                );
            }
        }
        // Terminal value x(1) = x0 e^{-1/2}.
        let last = traj.states.last().unwrap();
        assert!((last[0] - x0 * (-0.5f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn pd_agrees_with_direct_for_ac_control() {
        let chart = toy_chart();
        let u = ControlSignal::piecewise_affine(
            0.0,
            1.0,
            vec![vec![0.2], vec![-0.5], vec![0.8], vec![0.0]],
        )
        .unwrap();
        let v = presets::toy_ordinary_control();
        let samples = linspace(0.0, 1.0, 21);
        let pd = pd_solution(&chart, &[0.7], &u, &v, &samples).unwrap();
        let direct = project_state(&solve_original_ac(&chart, &[0.7], &u, &v, &samples).unwrap(), 1);
        assert!(pd.sup_distance(&direct) < 1e-8);
    }

    #[test]
    fn conjugacy_between_embedded_and_reduced() {
        // phi((x, z)(t)) = (xi, zeta)(t) for absolutely continuous controls.
        let chart = toy_chart();
        let u = ControlSignal::piecewise_affine(0.0, 1.0, vec![vec![0.1], vec![0.9], vec![-0.3]])
            .unwrap();
        let v = presets::toy_ordinary_control();
        let samples = linspace(0.0, 1.0, 21);
        let emb = solve_original_ac(&chart, &[1.1], &u, &v, &samples).unwrap();
        let xi0 = chart.phi_pr(&[1.1], &u.value(0.0)).unwrap();
        let red = solve_reduced(&chart, &xi0, &u, &v, &samples).unwrap();
        for i in 0..emb.times.len() {
            let xz = &emb.states[i];
            let (xi, zeta) = chart.phi(&xz[..1], &xz[1..]).unwrap();
            assert!((xi[0] - red.states[i][0]).abs() < 1e-8);
            assert!((zeta[0] - u.value(emb.times[i])[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn zeta_equals_control_bit_exact() {
        let chart = toy_chart();
        let u = presets::alternating_control(6);
        let v = presets::toy_ordinary_control();
        let traj = pd_solution(&chart, &[1.0], &u, &v, &linspace(0.0, 1.0, 17)).unwrap();
        for (t, c) in traj.times.iter().zip(&traj.controls) {
            assert_eq!(c, &u.value(*t));
        }
    }

    #[test]
    fn direct_translation_quadrature() {
        // u(t) = t, g = 1, f = 0: x(t) = x0 + t.
        let sys = Arc::new(presets::translation_system());
        let chart = FlowBoxChart::new(sys);
        let u = ControlSignal::piecewise_affine(0.0, 1.0, vec![vec![0.0], vec![1.0]]).unwrap();
        let v = ControlSignal::constant(0.0, 1.0, vec![]);
        let traj = solve_original_ac(&chart, &[0.5], &u, &v, &linspace(0.0, 1.0, 11)).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert!((s[0] - (0.5 + t)).abs() < 1e-10);
        }
    }

    #[test]
    fn exponential_closed_form_on_subhorizon() {
        // On [1/2, 1] the toy system has v = 0, so the classical solution
        // of an AC control is x(t) = x(a) e^{u(t) - u(a)}.
        let chart = toy_chart();
        let u = ControlSignal::piecewise_affine(0.5, 1.0, vec![vec![0.6], vec![-0.8]]).unwrap();
        let v = ControlSignal::constant(0.5, 1.0, vec![0.0]);
        let xa = 1.7;
        let traj = solve_original_ac(&chart, &[xa], &u, &v, &linspace(0.5, 1.0, 11)).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let expect = xa * (u.value(*t)[0] - 0.6f64).exp();
            assert!((s[0] - expect).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn general_horizon_translation() {
        let sys = Arc::new(presets::translation_system());
        let chart = FlowBoxChart::new(sys).with_variational_jacobian();
        let u = ControlSignal::piecewise_constant(
            -1.0,
            2.0,
            vec![vec![0.1], vec![-0.4]],
            vec![0.9],
        )
        .unwrap();
        let v = ControlSignal::constant(-1.0, 2.0, vec![]);
        let traj = pd_solution(&chart, &[0.3], &u, &v, &linspace(-1.0, 2.0, 7)).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let expect = 0.3 + u.value(*t)[0] - 0.1;
            assert!((s[0] - expect).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn ac_approximation_bridges_initial_jump() {
        let u = ControlSignal::piecewise_constant(0.0, 1.0, vec![vec![-0.2]], vec![-0.2])
            .unwrap()
            .with_start_value(vec![0.8]);
        let uk = ac_approximation(&u, 1.0, 3).unwrap();
        assert!(uk.is_ac());
        assert_eq!(uk.value(0.0), vec![0.8], "starts at the pointwise initial value");
        assert_eq!(uk.value(1.0), vec![-0.2]);
        // Ramp occupies [a, a + w]; afterwards the approximant matches u.
        assert_eq!(uk.value(0.5), vec![-0.2]);
    }

    #[test]
    fn ac_approximation_rejects_outside_probe() {
        let u = ControlSignal::piecewise_constant(0.0, 1.0, vec![vec![0.0], vec![1.0]], vec![1.0])
            .unwrap();
        assert!(matches!(
            ac_approximation(&u, 1.5, 2),
            Err(SolveError::InvalidControl(_))
        ));
    }

    #[test]
    fn ac_approximation_of_step() {
        let u = ControlSignal::piecewise_constant(0.0, 1.0, vec![vec![0.0], vec![1.0]], vec![1.0])
            .unwrap();
        for k in 1..=4 {
            let uk = ac_approximation(&u, 1.0, k).unwrap();
            assert!(uk.is_ac());
            assert_eq!(uk.value(0.0), u.value(0.0));
            assert_eq!(uk.value(1.0), u.value(1.0));
            assert_eq!(uk.value(0.5), vec![0.0], "ramp sits after the jump");
            let w = 0.25f64.powi(k as i32);
            let l1 = signal_l1_distance(&uk, &u);
            assert!((l1 - w / 2.0).abs() < 1e-6 * w.max(1e-9) + 1e-12, "k = {k}: {l1} vs {}", w / 2.0);
        }
    }

    #[test]
    fn ac_approximation_matches_at_t_star_on_jump() {
        let u = ControlSignal::piecewise_constant(0.0, 1.0, vec![vec![0.0], vec![1.0]], vec![1.0])
            .unwrap();
        let uk = ac_approximation(&u, 0.5, 2).unwrap();
        assert_eq!(uk.value(0.5), u.value(0.5), "ramp moves in front of t_star");
    }

    #[test]
    fn ac_approximation_identity_for_ac_input() {
        let u = ControlSignal::piecewise_affine(0.0, 1.0, vec![vec![0.0], vec![1.0]]).unwrap();
        let uk = ac_approximation(&u, 0.3, 3).unwrap();
        assert!(signal_l1_distance(&uk, &u) == 0.0);
    }

    #[test]
    fn limit_study_step_control() {
        let chart = toy_chart();
        let u = ControlSignal::piecewise_constant(0.0, 1.0, vec![vec![0.0], vec![1.0]], vec![1.0])
            .unwrap();
        let v = presets::toy_ordinary_control();
        let ks: Vec<u32> = (1..=7).collect();
        let rep = pd_limit_study(&chart, &[1.0], &u, &v, 1.0, &ks).unwrap();
        assert!(rep.monotone_l1, "x errors: {:?}", rep.x_l1);
        assert!(*rep.x_l1.last().unwrap() < 1e-3);
        assert!(*rep.t_star_err.last().unwrap() < 1e-6);
        let slope = rep.slope.unwrap();
        assert!(slope > 0.9, "slope {slope}");
    }

    #[test]
    fn limit_study_trivial_for_ac() {
        let chart = toy_chart();
        let u = ControlSignal::piecewise_affine(0.0, 1.0, vec![vec![0.0], vec![0.5]]).unwrap();
        let v = presets::toy_ordinary_control();
        let rep = pd_limit_study(&chart, &[1.0], &u, &v, 0.7, &[1, 2, 3]).unwrap();
        for e in &rep.x_l1 {
            assert!(*e < 1e-8);
        }
    }

    #[test]
    fn lipschitz_probe_translation_system() {
        // Pure translation: x(t) = x0 + u(t) - u(a); ratios stay small.
        let sys = Arc::new(presets::translation_system());
        let chart = FlowBoxChart::new(sys);
        let v = ControlSignal::constant(0.0, 1.0, vec![]);
        let rep =
            lipschitz_dependence_probe(&chart, 1.0, (&[-1.0], &[1.0]), 12, &v, 7).unwrap();
        assert!(rep.max_ratio.is_finite());
        assert!(rep.max_ratio <= 2.0 + 1e-9, "ratio {}", rep.max_ratio);
    }

    #[test]
    fn lipschitz_probe_stability_under_doubling() {
        let chart = toy_chart();
        let v = presets::toy_ordinary_control();
        let r1 =
            lipschitz_dependence_probe(&chart, 1.0, (&[-1.0], &[1.0]), 10, &v, 3).unwrap();
        let r2 =
            lipschitz_dependence_probe(&chart, 1.0, (&[-1.0], &[1.0]), 20, &v, 3).unwrap();
        assert!(r2.max_ratio >= r1.max_ratio * 0.99);
        assert!((r2.max_ratio - r1.max_ratio).abs() <= 0.5 * r1.max_ratio.max(1.0));
    }
}
