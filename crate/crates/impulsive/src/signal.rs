//! Everywhere-defined control signals and sampled trajectories.
//!
//! An impulsive control here is a genuine function, not an equivalence
//! class: it has a value at every instant. The representation is a list of
//! half-open pieces `[t_i, t_{i+1})` covering `[a, b)`, an explicit value at
//! `b`, and an optional explicit value at `a` overriding the first piece
//! (for controls that jump immediately).

use thiserror::Error;

use crate::expr::Expr;
use crate::util::norm2;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("pieces must cover [a, b) without gaps or overlaps: {0}")]
    BadCover(String),
    #[error("piece value dimension {got} does not match signal dimension {expected}")]
    BadDim { expected: usize, got: usize },
    #[error("signal declared absolutely continuous but jumps at t = {t}")]
    NotContinuous { t: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Value map of one piece. `Expr` pieces are functions of the single
/// variable `t` (absolute time, not piece-local).
#[derive(Debug, Clone)]
pub enum PieceFn {
    Constant(Vec<f64>),
    /// `start + slope * (t - t0)`.
    Affine { start: Vec<f64>, slope: Vec<f64> },
    Expr(Vec<Expr>),
}

#[derive(Debug, Clone)]
pub struct Piece {
    pub t0: f64,
    pub t1: f64,
    pub f: PieceFn,
}

impl Piece {
    pub fn dim(&self) -> usize {
        match &self.f {
            PieceFn::Constant(v) => v.len(),
            PieceFn::Affine { start, .. } => start.len(),
            PieceFn::Expr(es) => es.len(),
        }
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        match &self.f {
            PieceFn::Constant(v) => v.clone(),
            PieceFn::Affine { start, slope } => start
                .iter()
                .zip(slope)
                .map(|(s, k)| s + k * (t - self.t0))
                .collect(),
            PieceFn::Expr(es) => es.iter().map(|e| e.eval(&[t])).collect(),
        }
    }

    /// Time derivative inside the piece (analytic, never numeric).
    pub fn derivative(&self, t: f64) -> Vec<f64> {
        match &self.f {
            PieceFn::Constant(v) => vec![0.0; v.len()],
            PieceFn::Affine { slope, .. } => slope.clone(),
            PieceFn::Expr(es) => es.iter().map(|e| e.derivative(0).eval(&[t])).collect(),
        }
    }

    /// Euclidean total variation of the piece on its own interval.
    pub fn variation(&self) -> f64 {
        match &self.f {
            PieceFn::Constant(_) => 0.0,
            PieceFn::Affine { slope, .. } => norm2(slope) * (self.t1 - self.t0),
            PieceFn::Expr(_) => {
                // Sampled upper bound; expression pieces are rare and smooth.
                let steps = 256;
                let mut var = 0.0;
                let mut prev = self.value(self.t0);
                for i in 1..=steps {
                    let t = self.t0 + (self.t1 - self.t0) * i as f64 / steps as f64;
                    let cur = self.value(t);
                    var += crate::util::dist2(&cur, &prev);
                    prev = cur;
                }
                var
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    /// Continuous on `[a, b]`, absolutely continuous on each piece.
    Ac,
    /// Arbitrary pointwise-defined piecewise signal.
    PiecewiseDefined,
}

/// A jump of the signal: at `t`, the left limit differs from the value.
#[derive(Debug, Clone)]
pub struct Jump {
    pub t: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl Jump {
    pub fn magnitude(&self) -> f64 {
        crate::util::dist2(&self.left, &self.right)
    }
}

#[derive(Debug, Clone)]
pub struct ControlSignal {
    pub a: f64,
    pub b: f64,
    dim: usize,
    pub pieces: Vec<Piece>,
    /// Value at `b` (the pieces only cover `[a, b)`).
    pub end_value: Vec<f64>,
    /// Optional value at `a` differing from the first piece.
    pub start_value: Option<Vec<f64>>,
    pub kind: SignalKind,
    /// For signals that truncate an infinite family of pieces, the index at
    /// which the family was cut.
    pub truncation_level: Option<u32>,
}

const COVER_TOL: f64 = 1e-12;

impl ControlSignal {
    pub fn new(
        pieces: Vec<Piece>,
        end_value: Vec<f64>,
        kind: SignalKind,
    ) -> Result<Self, SignalError> {
        if pieces.is_empty() {
            return Err(SignalError::BadCover("no pieces".to_string()));
        }
        let dim = pieces[0].dim();
        if end_value.len() != dim {
            return Err(SignalError::BadDim { expected: dim, got: end_value.len() });
        }
        for w in pieces.windows(2) {
            if (w[0].t1 - w[1].t0).abs() > COVER_TOL {
                return Err(SignalError::BadCover(format!(
                    "gap between {} and {}",
                    w[0].t1, w[1].t0
                )));
            }
        }
        for p in &pieces {
            if p.dim() != dim {
                return Err(SignalError::BadDim { expected: dim, got: p.dim() });
            }
            if p.t1 <= p.t0 || p.t0.is_nan() || p.t1.is_nan() {
                return Err(SignalError::BadCover(format!(
                    "piece [{}, {}) is empty or reversed",
                    p.t0, p.t1
                )));
            }
        }
        let a = pieces[0].t0;
        let b = pieces.last().unwrap().t1;
        let sig = ControlSignal {
            a,
            b,
            dim,
            pieces,
            end_value,
            start_value: None,
            kind,
            truncation_level: None,
        };
        if kind == SignalKind::Ac {
            sig.check_continuity()?;
        }
        Ok(sig)
    }

    fn check_continuity(&self) -> Result<(), SignalError> {
        let tol = 1e-9;
        if self.start_value.is_some() {
            return Err(SignalError::NotContinuous { t: self.a });
        }
        for w in self.pieces.windows(2) {
            let left = w[0].value(w[0].t1);
            let right = w[1].value(w[1].t0);
            if crate::util::dist2(&left, &right) > tol {
                return Err(SignalError::NotContinuous { t: w[1].t0 });
            }
        }
        let last = self.pieces.last().unwrap();
        if crate::util::dist2(&last.value(self.b), &self.end_value) > tol {
            return Err(SignalError::NotContinuous { t: self.b });
        }
        Ok(())
    }

    /// Piecewise-constant signal over a uniform partition.
    pub fn piecewise_constant(
        a: f64,
        b: f64,
        values: Vec<Vec<f64>>,
        end_value: Vec<f64>,
    ) -> Result<Self, SignalError> {
        let n = values.len();
        assert!(n >= 1);
        let step = (b - a) / n as f64;
        let pieces = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| Piece {
                t0: a + step * i as f64,
                t1: if i + 1 == n { b } else { a + step * (i + 1) as f64 },
                f: PieceFn::Constant(v),
            })
            .collect();
        ControlSignal::new(pieces, end_value, SignalKind::PiecewiseDefined)
    }

    /// Continuous piecewise-affine signal through `nodes` at uniform times.
    pub fn piecewise_affine(a: f64, b: f64, nodes: Vec<Vec<f64>>) -> Result<Self, SignalError> {
        assert!(nodes.len() >= 2);
        let segs = nodes.len() - 1;
        let step = (b - a) / segs as f64;
        let end_value = nodes.last().unwrap().clone();
        let pieces = nodes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let t0 = a + step * i as f64;
                let t1 = if i + 1 == segs { b } else { a + step * (i + 1) as f64 };
                let slope: Vec<f64> =
                    w[0].iter().zip(&w[1]).map(|(p, q)| (q - p) / (t1 - t0)).collect();
                Piece { t0, t1, f: PieceFn::Affine { start: w[0].clone(), slope } }
            })
            .collect();
        ControlSignal::new(pieces, end_value, SignalKind::Ac)
    }

    /// Constant signal (also usable as the empty ordinary control when
    /// `value` is empty and the dimension is zero).
    pub fn constant(a: f64, b: f64, value: Vec<f64>) -> Self {
        let dim = value.len();
        ControlSignal {
            a,
            b,
            dim,
            pieces: vec![Piece { t0: a, t1: b, f: PieceFn::Constant(value.clone()) }],
            end_value: value,
            start_value: None,
            kind: SignalKind::Ac,
            truncation_level: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_ac(&self) -> bool {
        self.kind == SignalKind::Ac
    }

    pub fn with_start_value(mut self, v: Vec<f64>) -> Self {
        self.start_value = Some(v);
        self.kind = SignalKind::PiecewiseDefined;
        self
    }

    fn piece_index(&self, t: f64) -> usize {
        // Binary search over piece starts; t in [a, b).
        let mut lo = 0usize;
        let mut hi = self.pieces.len();
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.pieces[mid].t0 <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Pointwise value; every `t` in `[a, b]` has one.
    pub fn value(&self, t: f64) -> Vec<f64> {
        if t >= self.b {
            return self.end_value.clone();
        }
        if t <= self.a {
            if let Some(v) = &self.start_value {
                return v.clone();
            }
            return self.pieces[0].value(self.a);
        }
        let idx = self.piece_index(t);
        self.pieces[idx].value(t)
    }

    /// Left limit at `t` (for `t > a`).
    pub fn left_limit(&self, t: f64) -> Vec<f64> {
        assert!(t > self.a);
        let idx = if t >= self.b { self.pieces.len() - 1 } else { self.piece_index(t) };
        let p = &self.pieces[idx];
        if (t - p.t0).abs() <= COVER_TOL && idx > 0 {
            self.pieces[idx - 1].value(t)
        } else {
            p.value(t)
        }
    }

    /// Analytic derivative at `t`, using the piece containing `t`.
    pub fn derivative(&self, t: f64) -> Vec<f64> {
        if t >= self.b {
            return self.pieces.last().unwrap().derivative(t);
        }
        let idx = self.piece_index(t.max(self.a));
        self.pieces[idx].derivative(t)
    }

    /// Interior piece boundaries (strictly inside `(a, b)`).
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces[..self.pieces.len() - 1].iter().map(|p| p.t1).collect()
    }

    /// All jump discontinuities, including one at `a` when a start override
    /// is present and one at `b` when the end value detaches from the last
    /// piece.
    pub fn jumps(&self, tol: f64) -> Vec<Jump> {
        let mut out = Vec::new();
        if let Some(sv) = &self.start_value {
            let right = self.pieces[0].value(self.a);
            if crate::util::dist2(sv, &right) > tol {
                out.push(Jump { t: self.a, left: sv.clone(), right });
            }
        }
        for w in self.pieces.windows(2) {
            let left = w[0].value(w[0].t1);
            let right = w[1].value(w[1].t0);
            if crate::util::dist2(&left, &right) > tol {
                out.push(Jump { t: w[1].t0, left, right });
            }
        }
        let last_limit = self.pieces.last().unwrap().value(self.b);
        if crate::util::dist2(&last_limit, &self.end_value) > tol {
            out.push(Jump { t: self.b, left: last_limit, right: self.end_value.clone() });
        }
        out
    }

    /// True when every pointwise value (piece node values, endpoints and
    /// one-sided limits) lies in the given domain.
    pub fn values_in_domain(&self, dom: &crate::sysmodel::ImpulseDomain, tol: f64) -> bool {
        let check = |v: &[f64]| dom.contains(v, tol);
        if let Some(sv) = &self.start_value {
            if !check(sv) {
                return false;
            }
        }
        if !check(&self.end_value) {
            return false;
        }
        for p in &self.pieces {
            // Endpoints suffice for constant/affine pieces; sample expr ones.
            match &p.f {
                PieceFn::Constant(_) | PieceFn::Affine { .. } => {
                    if !check(&p.value(p.t0)) || !check(&p.value(p.t1)) {
                        return false;
                    }
                }
                PieceFn::Expr(_) => {
                    for i in 0..=16 {
                        let t = p.t0 + (p.t1 - p.t0) * i as f64 / 16.0;
                        if !check(&p.value(t)) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

/// A record that the state jumps at grid node `index`: `left_state` is the
/// limit from the left, `states[index]` the (right-continuous) value.
#[derive(Debug, Clone)]
pub struct TrajectoryJump {
    pub index: usize,
    pub left_state: Vec<f64>,
}

/// Sampled trajectory on a strictly increasing grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Control samples aligned with `times` (empty when not applicable).
    pub controls: Vec<Vec<f64>>,
    pub jumps: Vec<TrajectoryJump>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states.first().map(|s| s.len()).unwrap_or(0)
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// Linear interpolation between grid nodes; right-continuous at jumps
    /// (grids always contain the jump times).
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let ts = &self.times;
        if t <= ts[0] {
            return self.states[0].clone();
        }
        if t >= *ts.last().unwrap() {
            return self.states.last().unwrap().clone();
        }
        let mut lo = 0usize;
        let mut hi = ts.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if ts[mid] <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if ts[lo] == t {
            return self.states[lo].clone();
        }
        let w = (t - ts[lo]) / (ts[hi] - ts[lo]);
        // Interpolate toward the left limit when the right node is a jump.
        let right_state = self
            .jumps
            .iter()
            .find(|j| j.index == hi)
            .map(|j| j.left_state.clone())
            .unwrap_or_else(|| self.states[hi].clone());
        self.states[lo]
            .iter()
            .zip(&right_state)
            .map(|(p, q)| p + w * (q - p))
            .collect()
    }

    pub fn left_limit_at_index(&self, index: usize) -> Vec<f64> {
        self.jumps
            .iter()
            .find(|j| j.index == index)
            .map(|j| j.left_state.clone())
            .unwrap_or_else(|| self.states[index].clone())
    }

    /// Trapezoidal L1 norm of the trajectory, jump-aware: each interval uses
    /// the right value at its left end and the left limit at its right end.
    pub fn norm_l1(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.times.len() - 1 {
            let dt = self.times[i + 1] - self.times[i];
            let left = norm2(&self.states[i]);
            let right = norm2(&self.left_limit_at_index(i + 1));
            acc += 0.5 * (left + right) * dt;
        }
        acc
    }

    /// Trapezoidal L1 distance to another trajectory on the same grid.
    pub fn l1_distance(&self, other: &Trajectory) -> f64 {
        assert_eq!(self.times.len(), other.times.len());
        let mut acc = 0.0;
        for i in 0..self.times.len() - 1 {
            let dt = self.times[i + 1] - self.times[i];
            let dl = crate::util::dist2(&self.states[i], &other.states[i]);
            let dr = crate::util::dist2(
                &self.left_limit_at_index(i + 1),
                &other.left_limit_at_index(i + 1),
            );
            acc += 0.5 * (dl + dr) * dt;
        }
        acc
    }

    /// Max pointwise distance over grid nodes (right values).
    pub fn sup_distance(&self, other: &Trajectory) -> f64 {
        assert_eq!(self.times.len(), other.times.len());
        self.states
            .iter()
            .zip(&other.states)
            .map(|(p, q)| crate::util::dist2(p, q))
            .fold(0.0, f64::max)
    }
}

/// Sorted union of several time lists with duplicates collapsed.
pub fn merge_times(lists: &[&[f64]], tol: f64) -> Vec<f64> {
    let mut all: Vec<f64> = lists.iter().flat_map(|l| l.iter().copied()).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for t in all {
        if out.last().map(|&last| t - last > tol).unwrap_or(true) {
            out.push(t);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_constant_values() {
        let u = ControlSignal::piecewise_constant(
            0.0,
            1.0,
            vec![vec![1.0], vec![-1.0]],
            vec![0.0],
        )
        .unwrap();
        assert_eq!(u.value(0.0), vec![1.0]);
        assert_eq!(u.value(0.25), vec![1.0]);
        assert_eq!(u.value(0.5), vec![-1.0], "jump time belongs to the right piece");
        assert_eq!(u.value(1.0), vec![0.0], "explicit terminal value");
        assert_eq!(u.left_limit(0.5), vec![1.0]);
        assert_eq!(u.left_limit(1.0), vec![-1.0]);
        let jumps = u.jumps(1e-12);
        assert_eq!(jumps.len(), 2);
        assert_eq!(jumps[0].t, 0.5);
        assert_eq!(jumps[1].t, 1.0);
    }

    #[test]
    fn start_override_is_a_jump() {
        let u = ControlSignal::piecewise_constant(0.0, 1.0, vec![vec![0.5]], vec![0.5])
            .unwrap()
            .with_start_value(vec![1.0]);
        assert_eq!(u.value(0.0), vec![1.0]);
        assert_eq!(u.value(1e-9), vec![0.5]);
        let jumps = u.jumps(1e-12);
        assert_eq!(jumps.len(), 1);
        assert_eq!(jumps[0].t, 0.0);
    }

    #[test]
    fn affine_signal_is_ac() {
        let u =
            ControlSignal::piecewise_affine(0.0, 1.0, vec![vec![0.0], vec![1.0], vec![0.5]])
                .unwrap();
        assert!(u.is_ac());
        assert!(u.jumps(1e-9).is_empty());
        assert_eq!(u.value(0.25), vec![0.5]);
        assert_eq!(u.derivative(0.25), vec![2.0]);
        assert_eq!(u.derivative(0.75), vec![-1.0]);
    }

    #[test]
    fn ac_validation_rejects_jumps() {
        let pieces = vec![
            Piece { t0: 0.0, t1: 0.5, f: PieceFn::Constant(vec![0.0]) },
            Piece { t0: 0.5, t1: 1.0, f: PieceFn::Constant(vec![1.0]) },
        ];
        let err = ControlSignal::new(pieces, vec![1.0], SignalKind::Ac).unwrap_err();
        assert!(matches!(err, SignalError::NotContinuous { .. }));
    }

    #[test]
    fn trajectory_l1_with_jump() {
        // x = 0 on [0, 0.5), x = 1 on [0.5, 1]: L1 norm is 0.5.
        let traj = Trajectory {
            times: vec![0.0, 0.5, 1.0],
            states: vec![vec![0.0], vec![1.0], vec![1.0]],
            controls: vec![],
            jumps: vec![TrajectoryJump { index: 1, left_state: vec![0.0] }],
        };
        assert!((traj.norm_l1() - 0.5).abs() < 1e-15);
        assert_eq!(traj.value_at(0.25), vec![0.0]);
        assert_eq!(traj.value_at(0.5), vec![1.0]);
    }
}
