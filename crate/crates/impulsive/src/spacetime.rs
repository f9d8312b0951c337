//! Bounded-variation controls, space-time (graph-completion) controls and
//! the reparameterized system.
//!
//! A space-time control is a Lipschitz path `(u0, u)` on `[0, 1]` with `u0`
//! nondecreasing onto `[a, b]` and the slope budget
//! `u0' + |u'| <= b - a + K`. Strictly increasing `u0` corresponds, up to
//! reparameterization, to an absolutely continuous control of variation at
//! most `K`; segments with `u0' = 0` are bridges that carry the impulse
//! dynamics across a jump. With commuting impulse fields the bridge path
//! does not matter, which is what makes the rectilinear (straight-segment)
//! completion canonical.

use std::sync::Arc;

use thiserror::Error;

use crate::flowbox::FlowBoxChart;
use crate::ode::{self, OdeError, OdeOptions};
use crate::signal::{merge_times, ControlSignal, PieceFn};
use crate::solver::{pd_solution, SolveError};
use crate::sysmodel::ControlAffineSystem;
use crate::util::{dist2, loglog_slope, norm2};

#[derive(Debug, Error)]
pub enum SpaceTimeError {
    #[error("invalid space-time control: {0}")]
    Invalid(String),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Total variation of a piecewise signal: per-piece variation plus the jump
/// magnitudes at breakpoints, the initial override and the terminal value.
pub fn total_variation(u: &ControlSignal) -> f64 {
    let pieces: f64 = u.pieces.iter().map(|p| p.variation()).sum();
    let jumps: f64 = u.jumps(1e-12).iter().map(|j| j.magnitude()).sum();
    pieces + jumps
}

/// A bounded-variation control: a pointwise signal together with its
/// computed total variation.
#[derive(Debug, Clone)]
pub struct BvControl {
    pub signal: ControlSignal,
    pub var: f64,
}

impl BvControl {
    pub fn new(signal: ControlSignal) -> Self {
        let var = total_variation(&signal);
        BvControl { signal, var }
    }
}

/// One node of the space-time path.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StNode {
    pub s: f64,
    /// Reparameterized time `u0(s)`.
    pub t: f64,
    /// Control value `u(s)`.
    pub u: Vec<f64>,
}

/// Piecewise-affine space-time control.
#[derive(Debug, Clone)]
pub struct SpaceTimeControl {
    pub a: f64,
    pub b: f64,
    /// Variation budget `K` of the class this control belongs to.
    pub k_budget: f64,
    pub nodes: Vec<StNode>,
    /// Ordinary control as a function of the pseudo-time `s` on `[0, 1]`.
    pub v: ControlSignal,
}

const SLOPE_SLACK: f64 = 1.0 + 1e-9;

impl SpaceTimeControl {
    /// Check all class invariants: node ordering, endpoint pinning,
    /// monotone `u0` and the slope budget on every segment.
    pub fn validate(&self) -> Result<(), SpaceTimeError> {
        if self.nodes.len() < 2 {
            return Err(SpaceTimeError::Invalid("need at least two nodes".to_string()));
        }
        let first = self.nodes.first().unwrap();
        let last = self.nodes.last().unwrap();
        if first.s != 0.0 || (last.s - 1.0).abs() > 1e-12 {
            return Err(SpaceTimeError::Invalid("s must run over [0, 1]".to_string()));
        }
        if (first.t - self.a).abs() > 1e-9 || (last.t - self.b).abs() > 1e-9 {
            return Err(SpaceTimeError::Invalid(format!(
                "u0 must map onto [{}, {}], got [{}, {}]",
                self.a, self.b, first.t, last.t
            )));
        }
        let budget = (self.b - self.a + self.k_budget) * SLOPE_SLACK;
        for w in self.nodes.windows(2) {
            let ds = w[1].s - w[0].s;
            if ds <= 0.0 {
                return Err(SpaceTimeError::Invalid("s nodes must strictly increase".to_string()));
            }
            let dt = w[1].t - w[0].t;
            if dt < -1e-12 {
                return Err(SpaceTimeError::Invalid("u0 must be nondecreasing".to_string()));
            }
            let du: Vec<f64> = w[0].u.iter().zip(&w[1].u).map(|(p, q)| q - p).collect();
            let speed = (dt.max(0.0) + norm2(&du)) / ds;
            if speed > budget {
                return Err(SpaceTimeError::Invalid(format!(
                    "slope bound violated: {speed:.6} > {budget:.6} on [{}, {}]",
                    w[0].s, w[1].s
                )));
            }
        }
        Ok(())
    }

    /// Member of the strict subclass with `u0' > 0` everywhere.
    pub fn strictly_increasing(&self) -> bool {
        self.nodes.windows(2).all(|w| w[1].t - w[0].t > 0.0)
    }

    pub fn u0_at(&self, s: f64) -> f64 {
        let (i, w) = self.segment_at(s);
        let _ = i;
        w
    }

    fn segment_index(&self, s: f64) -> usize {
        if s >= 1.0 {
            return self.nodes.len() - 2;
        }
        let mut lo = 0usize;
        let mut hi = self.nodes.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.nodes[mid].s <= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn segment_at(&self, s: f64) -> (usize, f64) {
        let i = self.segment_index(s);
        let (n0, n1) = (&self.nodes[i], &self.nodes[i + 1]);
        let w = (s.clamp(n0.s, n1.s) - n0.s) / (n1.s - n0.s);
        (i, n0.t + w * (n1.t - n0.t))
    }

    pub fn u_at(&self, s: f64) -> Vec<f64> {
        let i = self.segment_index(s);
        let (n0, n1) = (&self.nodes[i], &self.nodes[i + 1]);
        let w = (s.clamp(n0.s, n1.s) - n0.s) / (n1.s - n0.s);
        n0.u.iter().zip(&n1.u).map(|(p, q)| p + w * (q - p)).collect()
    }

    /// Pseudo-time at which the graph reaches `t` from the right: after all
    /// bridges stacked at `t`.
    pub fn s_of_t_right(&self, t: f64) -> f64 {
        let tol = 1e-12;
        let mut j = 0usize;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.t <= t + tol {
                j = i;
            }
        }
        let nj = &self.nodes[j];
        if (nj.t - t).abs() <= tol || j + 1 == self.nodes.len() {
            return nj.s;
        }
        let nk = &self.nodes[j + 1];
        if nk.t - nj.t <= tol {
            return nj.s;
        }
        nj.s + (t - nj.t) / (nk.t - nj.t) * (nk.s - nj.s)
    }
}

// ---------------------------------------------------------------------------
// Constructions
// ---------------------------------------------------------------------------

/// Raw path segments in (t, u) space before arc-length normalization.
struct Seg {
    dt: f64,
    u0: Vec<f64>,
    u1: Vec<f64>,
}

fn normalize_to_control(
    a: f64,
    b: f64,
    k_budget: f64,
    u_start: Vec<f64>,
    segs: Vec<Seg>,
    v_t: &ControlSignal,
) -> Result<SpaceTimeControl, SpaceTimeError> {
    let total_len: f64 = segs
        .iter()
        .map(|s| s.dt + dist2(&s.u0, &s.u1))
        .sum();
    if total_len <= 0.0 {
        return Err(SpaceTimeError::Invalid("degenerate path".to_string()));
    }
    let mut nodes = Vec::with_capacity(segs.len() + 1);
    nodes.push(StNode { s: 0.0, t: a, u: u_start });
    let mut s_acc = 0.0;
    let mut t_acc = a;
    for seg in &segs {
        let len = seg.dt + dist2(&seg.u0, &seg.u1);
        if len <= 1e-15 * total_len {
            continue;
        }
        s_acc += len / total_len;
        t_acc += seg.dt;
        nodes.push(StNode { s: s_acc, t: t_acc, u: seg.u1.clone() });
    }
    // Pin the endpoints exactly.
    if let Some(last) = nodes.last_mut() {
        last.s = 1.0;
        last.t = b;
    }

    // Transport the ordinary control from physical time to pseudo-time.
    let v_s = compose_v_with_time(v_t, &nodes, a, b);

    let stc = SpaceTimeControl { a, b, k_budget, nodes, v: v_s };
    stc.validate()?;
    Ok(stc)
}

/// Piecewise-constant `v(t)` to piecewise-constant `v(s)` through `u0`.
/// Breakpoints falling inside a bridge snap to the bridge start; only the
/// drift term sees `v`, and it is switched off there anyway.
fn compose_v_with_time(v_t: &ControlSignal, nodes: &[StNode], a: f64, b: f64) -> ControlSignal {
    let dim = v_t.dim();
    if dim == 0 {
        return ControlSignal::constant(0.0, 1.0, vec![]);
    }
    let s_of_t = |t: f64| -> f64 {
        let mut j = 0usize;
        for (i, n) in nodes.iter().enumerate() {
            if n.t <= t + 1e-12 {
                j = i;
            }
        }
        if j + 1 >= nodes.len() {
            return nodes[j].s;
        }
        let (n0, n1) = (&nodes[j], &nodes[j + 1]);
        if n1.t - n0.t <= 1e-12 {
            n0.s
        } else {
            n0.s + (t.clamp(n0.t, n1.t) - n0.t) / (n1.t - n0.t) * (n1.s - n0.s)
        }
    };
    // Cut at every path node as well: a piece must lie inside a single
    // segment for the midpoint inversion below to be valid.
    let mut cuts = vec![0.0, 1.0];
    for n in nodes {
        cuts.push(n.s);
    }
    for bp in v_t.breakpoints() {
        cuts.push(s_of_t(bp));
    }
    let cuts = merge_times(&[&cuts], 1e-12);
    let mut values = Vec::new();
    let mut times = Vec::new();
    for w in cuts.windows(2) {
        let s_mid = 0.5 * (w[0] + w[1]);
        // Invert s -> t linearly on the containing segment.
        let mut j = 0usize;
        for (i, n) in nodes.iter().enumerate() {
            if n.s <= s_mid {
                j = i;
            }
        }
        let j = j.min(nodes.len() - 2);
        let (n0, n1) = (&nodes[j], &nodes[j + 1]);
        let t_mid = if n1.s - n0.s <= 0.0 {
            n0.t
        } else {
            n0.t + (s_mid - n0.s) / (n1.s - n0.s) * (n1.t - n0.t)
        };
        values.push(v_t.value(t_mid.clamp(a, b)));
        times.push((w[0], w[1]));
    }
    let pieces = times
        .into_iter()
        .zip(values)
        .map(|((s0, s1), val)| crate::signal::Piece {
            t0: s0,
            t1: s1,
            f: PieceFn::Constant(val),
        })
        .collect();
    ControlSignal::new(pieces, v_t.value(b), crate::signal::SignalKind::PiecewiseDefined).unwrap()
}

/// Subdivide a signal piece into affine chunks in (t, u) space.
fn piece_segments(u: &ControlSignal, piece_idx: usize, out: &mut Vec<Seg>) {
    let p = &u.pieces[piece_idx];
    let chunks = match &p.f {
        PieceFn::Constant(_) | PieceFn::Affine { .. } => 1,
        PieceFn::Expr(_) => 32,
    };
    let h = (p.t1 - p.t0) / chunks as f64;
    for i in 0..chunks {
        let t0 = p.t0 + h * i as f64;
        let t1 = p.t0 + h * (i + 1) as f64;
        out.push(Seg { dt: t1 - t0, u0: p.value(t0), u1: p.value(t1) });
    }
}

/// Arc-length reparameterization of an absolutely continuous control into a
/// strictly increasing space-time control with `K` equal to its variation.
pub fn reparameterize_ac(
    u: &ControlSignal,
    v: &ControlSignal,
) -> Result<SpaceTimeControl, SpaceTimeError> {
    if !u.is_ac() {
        return Err(SpaceTimeError::Invalid(
            "reparameterization needs an absolutely continuous control".to_string(),
        ));
    }
    let mut segs = Vec::new();
    for i in 0..u.pieces.len() {
        piece_segments(u, i, &mut segs);
    }
    let k = total_variation(u);
    normalize_to_control(u.a, u.b, k, u.value(u.a), segs, v)
}

/// Rectilinear graph completion of a bounded-variation control: graph
/// segments where the control is continuous, straight bridges at frozen
/// time across each jump. `K` is the total variation of the control.
pub fn rectilinear_completion(
    u: &ControlSignal,
    v: &ControlSignal,
) -> Result<SpaceTimeControl, SpaceTimeError> {
    completion_with_bridges(u, v, |_jump_idx, left, right| vec![left.to_vec(), right.to_vec()])
}

/// Graph completion with caller-provided bridge polylines. The callback
/// returns the full waypoint list (including both endpoints) for each jump,
/// in jump order. Used to probe the path-independence of commuting jumps.
pub fn completion_with_bridges<F>(
    u: &ControlSignal,
    v: &ControlSignal,
    mut bridge: F,
) -> Result<SpaceTimeControl, SpaceTimeError>
where
    F: FnMut(usize, &[f64], &[f64]) -> Vec<Vec<f64>>,
{
    let jumps = u.jumps(1e-12);
    let mut segs = Vec::new();
    let mut jump_idx = 0usize;
    let mut push_bridge = |segs: &mut Vec<Seg>, left: &[f64], right: &[f64]| {
        let path = bridge(jump_idx, left, right);
        jump_idx += 1;
        for w in path.windows(2) {
            segs.push(Seg { dt: 0.0, u0: w[0].clone(), u1: w[1].clone() });
        }
    };

    // Initial jump when the pointwise value at `a` detaches from the first
    // piece.
    if let Some(j) = jumps.iter().find(|j| (j.t - u.a).abs() <= 1e-12) {
        push_bridge(&mut segs, &j.left, &j.right);
    }
    for i in 0..u.pieces.len() {
        piece_segments(u, i, &mut segs);
        let t_end = u.pieces[i].t1;
        if let Some(j) = jumps.iter().find(|j| (j.t - t_end).abs() <= 1e-12) {
            push_bridge(&mut segs, &j.left, &j.right);
        }
    }

    // Variation along the realized path (equals Var[u] for rectilinear
    // bridges, larger for detours).
    let k: f64 = segs.iter().map(|s| dist2(&s.u0, &s.u1)).sum();
    normalize_to_control(u.a, u.b, k, u.value(u.a), segs, v)
}

// ---------------------------------------------------------------------------
// The reparameterized system
// ---------------------------------------------------------------------------

/// Trajectory of the space-time system, sampled along `s`.
#[derive(Debug, Clone)]
pub struct SpaceTimeTrajectory {
    pub s: Vec<f64>,
    /// `y0(s) = u0(s)`.
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

impl SpaceTimeTrajectory {
    pub fn terminal(&self) -> (&[f64], &[f64]) {
        (self.y.last().unwrap(), self.u.last().unwrap())
    }

    /// Linear interpolation in `s` (the path is continuous).
    pub fn value_at(&self, s: f64) -> Vec<f64> {
        if s <= self.s[0] {
            return self.y[0].clone();
        }
        if s >= *self.s.last().unwrap() {
            return self.y.last().unwrap().clone();
        }
        let mut lo = 0usize;
        let mut hi = self.s.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.s[mid] <= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w = (s - self.s[lo]) / (self.s[hi] - self.s[lo]);
        self.y[lo]
            .iter()
            .zip(&self.y[hi])
            .map(|(p, q)| p + w * (q - p))
            .collect()
    }

    pub fn sup_distance(&self, other: &SpaceTimeTrajectory, probes: usize) -> f64 {
        (0..=probes)
            .map(|i| {
                let s = i as f64 / probes as f64;
                dist2(&self.value_at(s), &other.value_at(s))
            })
            .fold(0.0, f64::max)
    }
}

/// Carathéodory solution of the space-time system
/// `y0' = u0'`, `y' = u0' f(y, u, v) + sum_a g_a(y, u) u_a'` on `[0, 1]`.
pub fn solve_spacetime(
    sys: &Arc<ControlAffineSystem>,
    x0: &[f64],
    stc: &SpaceTimeControl,
    ode_opts: &OdeOptions,
    samples_per_seg: usize,
) -> Result<SpaceTimeTrajectory, SpaceTimeError> {
    solve_spacetime_probed(sys, x0, stc, ode_opts, samples_per_seg, &[])
}

/// As [`solve_spacetime`], but additionally lands integration nodes exactly
/// on the given pseudo-times, so those samples carry no interpolation
/// error.
pub fn solve_spacetime_probed(
    sys: &Arc<ControlAffineSystem>,
    x0: &[f64],
    stc: &SpaceTimeControl,
    ode_opts: &OdeOptions,
    samples_per_seg: usize,
    probe_s: &[f64],
) -> Result<SpaceTimeTrajectory, SpaceTimeError> {
    stc.validate()?;
    let n = sys.n();
    let seg_nodes: Vec<f64> = stc.nodes.iter().map(|n| n.s).collect();
    let vb = stc.v.breakpoints();
    let clipped: Vec<f64> = probe_s.iter().copied().filter(|s| (0.0..=1.0).contains(s)).collect();
    let spans = merge_times(&[&seg_nodes, &vb, &clipped], 1e-13);

    let mut s_out = vec![0.0];
    let mut t_out = vec![stc.a];
    let mut y_out = vec![x0.to_vec()];
    let mut u_out = vec![stc.nodes[0].u.clone()];

    let mut y = x0.to_vec();
    let mut fbuf = vec![0.0; n];
    let mut gbuf = vec![0.0; n];
    for w in spans.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        let i = stc.segment_index(0.5 * (s0 + s1));
        let (n0, n1) = (&stc.nodes[i], &stc.nodes[i + 1]);
        let ds = n1.s - n0.s;
        let t_slope = (n1.t - n0.t) / ds;
        let u_slope: Vec<f64> =
            n0.u.iter().zip(&n1.u).map(|(p, q)| (q - p) / ds).collect();
        let v_val = stc.v.value(0.5 * (s0 + s1));
        let u_of_s = |s: f64| -> Vec<f64> {
            n0.u.iter().zip(&u_slope).map(|(p, k)| p + k * (s - n0.s)).collect()
        };
        let sub = samples_per_seg.max(1);
        for step in 0..sub {
            let sa = s0 + (s1 - s0) * step as f64 / sub as f64;
            let sb = if step + 1 == sub { s1 } else { s0 + (s1 - s0) * (step + 1) as f64 / sub as f64 };
            y = ode::integrate(
                |s, yv, dy| {
                    let u_here = u_of_s(s);
                    sys.f_tilde(yv, &u_here, &v_val, &mut fbuf);
                    for (d, f) in dy.iter_mut().zip(&fbuf) {
                        *d = t_slope * f;
                    }
                    for (alpha, &du) in u_slope.iter().enumerate() {
                        if du != 0.0 {
                            sys.g_tilde(alpha, yv, &u_here, &mut gbuf);
                            for (d, g) in dy.iter_mut().zip(&gbuf) {
                                *d += du * g;
                            }
                        }
                    }
                },
                sa,
                sb,
                &y,
                ode_opts,
            )?;
            s_out.push(sb);
            t_out.push(n0.t + t_slope * (sb - n0.s));
            y_out.push(y.clone());
            u_out.push(u_of_s(sb));
        }
    }
    Ok(SpaceTimeTrajectory { s: s_out, t: t_out, y: y_out, u: u_out })
}

// ---------------------------------------------------------------------------
// Density of strictly increasing controls
// ---------------------------------------------------------------------------

/// Raise every `u0` slope to at least `min_slope` by reallocating time from
/// faster segments, then renormalize to constant speed. The result stays in
/// the same budget class; if nothing is below `min_slope` the control is
/// returned unchanged.
pub fn density_perturb(
    stc: &SpaceTimeControl,
    min_slope: f64,
) -> Result<SpaceTimeControl, SpaceTimeError> {
    let m = stc.nodes[0].u.len();
    let _ = m;
    let segs: Vec<(f64, f64, f64)> = stc
        .nodes
        .windows(2)
        .map(|w| {
            let ds = w[1].s - w[0].s;
            let dt = w[1].t - w[0].t;
            let du: Vec<f64> = w[0].u.iter().zip(&w[1].u).map(|(p, q)| q - p).collect();
            (ds, dt, norm2(&du))
        })
        .collect();
    let total_u: f64 = segs.iter().map(|s| s.2).sum();
    let l_new = (stc.b - stc.a) + total_u;
    if min_slope >= l_new {
        return Err(SpaceTimeError::Invalid(format!(
            "min slope {min_slope} exceeds the path speed {l_new}"
        )));
    }
    let req: Vec<f64> = segs
        .iter()
        .map(|(_, _, du)| min_slope * du / (l_new - min_slope))
        .collect();
    let deficit: f64 = segs
        .iter()
        .zip(&req)
        .map(|((_, dt, _), r)| (r - dt).max(0.0))
        .sum();
    if deficit <= 0.0 {
        return Ok(stc.clone());
    }
    let surplus: f64 = segs
        .iter()
        .zip(&req)
        .map(|((_, dt, _), r)| (dt - r).max(0.0))
        .sum();
    if deficit >= 0.9 * surplus {
        return Err(SpaceTimeError::Invalid(
            "min slope too large: not enough time to reallocate".to_string(),
        ));
    }
    let scale = 1.0 - deficit / surplus;
    let new_dt: Vec<f64> = segs
        .iter()
        .zip(&req)
        .map(|((_, dt, _), r)| if *dt < *r { *r } else { r + (dt - r) * scale })
        .collect();

    // Rebuild nodes with constant-speed pseudo-time.
    let mut nodes = Vec::with_capacity(stc.nodes.len());
    nodes.push(StNode { s: 0.0, t: stc.a, u: stc.nodes[0].u.clone() });
    let mut t_acc = stc.a;
    let mut s_acc = 0.0;
    for (i, (_, _, du)) in segs.iter().enumerate() {
        t_acc += new_dt[i];
        s_acc += (new_dt[i] + du) / l_new;
        nodes.push(StNode { s: s_acc, t: t_acc, u: stc.nodes[i + 1].u.clone() });
    }
    if let Some(last) = nodes.last_mut() {
        last.s = 1.0;
        last.t = stc.b;
    }
    let out = SpaceTimeControl {
        a: stc.a,
        b: stc.b,
        k_budget: stc.k_budget,
        nodes,
        v: stc.v.clone(),
    };
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DensityReport {
    pub min_slopes: Vec<f64>,
    pub sup_distances: Vec<f64>,
    pub terminal_distances: Vec<f64>,
    /// Log-log slope of sup distance against min slope.
    pub slope: Option<f64>,
}

/// Approximate a space-time control by strictly increasing ones with
/// decreasing minimum slope and report the trajectory distances.
pub fn density_study(
    sys: &Arc<ControlAffineSystem>,
    x0: &[f64],
    stc: &SpaceTimeControl,
    min_slopes: &[f64],
    ode_opts: &OdeOptions,
) -> Result<DensityReport, SpaceTimeError> {
    // Both trajectories carry exact samples at the comparison points, so
    // the reported distances are free of interpolation error.
    let probes = crate::util::linspace(0.0, 1.0, 401);
    let base = solve_spacetime_probed(sys, x0, stc, ode_opts, 2, &probes)?;
    let mut sup = Vec::new();
    let mut term = Vec::new();
    for &h in min_slopes {
        let pert = density_perturb(stc, h)?;
        let yh = solve_spacetime_probed(sys, x0, &pert, ode_opts, 2, &probes)?;
        let d = probes
            .iter()
            .map(|&s| dist2(&base.value_at(s), &yh.value_at(s)))
            .fold(0.0, f64::max);
        sup.push(d);
        term.push(dist2(base.terminal().0, yh.terminal().0));
    }
    Ok(DensityReport {
        min_slopes: min_slopes.to_vec(),
        slope: loglog_slope(min_slopes, &sup),
        sup_distances: sup,
        terminal_distances: term,
    })
}

/// Max deviation between the pointwise-defined solution and the space-time
/// solution of the rectilinear completion, over the graph times of the
/// control (right limits at jumps).
pub fn equivalence_pd_vs_spacetime(
    chart: &FlowBoxChart,
    x0: &[f64],
    u: &ControlSignal,
    v: &ControlSignal,
) -> Result<f64, SpaceTimeError> {
    let stc = rectilinear_completion(u, v)?;

    // Probe at endpoints, breakpoints and piece midpoints; the space-time
    // solve lands nodes exactly at the corresponding pseudo-times.
    let mut probes = vec![u.a, u.b];
    for p in &u.pieces {
        probes.push(p.t0);
        probes.push(0.5 * (p.t0 + p.t1));
    }
    for p in &v.pieces {
        probes.push(p.t0);
        probes.push(0.5 * (p.t0 + p.t1));
    }
    let probes = merge_times(&[&probes], 1e-13);
    let s_probes: Vec<f64> = probes.iter().map(|&t| stc.s_of_t_right(t)).collect();
    let y = solve_spacetime_probed(&chart.sys, x0, &stc, &chart.ode, 2, &s_probes)?;
    let x_pd = pd_solution(chart, x0, u, v, &probes)?;

    let mut worst = 0.0f64;
    for (i, &t) in x_pd.times.iter().enumerate() {
        let y_here = y.value_at(stc.s_of_t_right(t));
        worst = worst.max(dist2(&x_pd.states[i], &y_here));
    }
    Ok(worst)
}
