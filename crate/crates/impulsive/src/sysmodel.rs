//! Control-affine impulsive systems and their standing-assumption audit.
//!
//! A system is `x' = f(x,u,v) + sum_a g_a(x,u) u_a'` with state dimension
//! `n`, impulsive-control dimension `m` and ordinary-control dimension `l`.
//! The fields extend to `R^{n+m}`: the drift gets `m` trailing zeros, each
//! impulse field `g_a` gets the unit vector `e_a` appended. All machinery
//! downstream (the flow-box chart, the reduced system, the graph-completion
//! solver) works on these extended fields and assumes the extended impulse
//! fields commute pairwise; `check_hypotheses` audits that numerically.

use std::sync::Arc;

use thiserror::Error;

use crate::expr::{self, Expr, ParseError, Scope};
use crate::rng::halton_point;
use crate::util::{all_finite, norm2, Mat};

/// Admissible impulse-control sets. Only descriptor classes for which
/// step controls can be bridged by absolutely continuous ones are accepted:
/// boxes, convex polytopes `Ax <= b`, and the whole space.
#[derive(Debug, Clone, PartialEq)]
pub enum ImpulseDomain {
    FullSpace,
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Polytope { normals: Vec<Vec<f64>>, offsets: Vec<f64> },
}

impl ImpulseDomain {
    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        match self {
            ImpulseDomain::FullSpace => true,
            ImpulseDomain::Box { lo, hi } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (a, b))| *x >= a - tol && *x <= b + tol),
            ImpulseDomain::Polytope { normals, offsets } => normals
                .iter()
                .zip(offsets)
                .all(|(row, b)| row.iter().zip(u).map(|(a, x)| a * x).sum::<f64>() <= b + tol),
        }
    }

    /// All descriptor classes here are convex.
    pub fn is_convex(&self) -> bool {
        true
    }

    /// Coordinate-wise clamp for boxes; identity for the full space.
    pub fn clamp(&self, u: &mut [f64]) {
        if let ImpulseDomain::Box { lo, hi } = self {
            for (x, (a, b)) in u.iter_mut().zip(lo.iter().zip(hi)) {
                *x = x.clamp(*a, *b);
            }
        }
    }

    /// A bounding box usable as a search domain.
    pub fn search_box(&self, center: &[f64], fallback_radius: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            ImpulseDomain::Box { lo, hi } => (lo.clone(), hi.clone()),
            _ => (
                center.iter().map(|c| c - fallback_radius).collect(),
                center.iter().map(|c| c + fallback_radius).collect(),
            ),
        }
    }
}

/// Compact ordinary-control sets: a box, a finite list of points, or empty
/// when `l = 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum OrdinarySet {
    Empty,
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Finite(Vec<Vec<f64>>),
}

impl OrdinarySet {
    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        match self {
            OrdinarySet::Empty => v.is_empty(),
            OrdinarySet::Box { lo, hi } => v
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (a, b))| *x >= a - tol && *x <= b + tol),
            OrdinarySet::Finite(pts) => pts
                .iter()
                .any(|p| p.iter().zip(v).all(|(a, b)| (a - b).abs() <= tol)),
        }
    }

    /// Representative sample, used by the hypothesis audit and the
    /// Hamiltonian maximization: all points of a finite set, a per-axis grid
    /// for boxes, the empty control for `l = 0`.
    pub fn samples(&self, per_axis: usize) -> Vec<Vec<f64>> {
        match self {
            OrdinarySet::Empty => vec![vec![]],
            OrdinarySet::Finite(pts) => pts.clone(),
            OrdinarySet::Box { lo, hi } => {
                let axes: Vec<Vec<f64>> = lo
                    .iter()
                    .zip(hi)
                    .map(|(&a, &b)| {
                        if per_axis == 1 || a == b {
                            vec![0.5 * (a + b)]
                        } else {
                            crate::util::linspace(a, b, per_axis)
                        }
                    })
                    .collect();
                let mut out = vec![vec![]];
                for axis in axes {
                    let mut next = Vec::with_capacity(out.len() * axis.len());
                    for p in &out {
                        for &v in &axis {
                            let mut q = p.clone();
                            q.push(v);
                            next.push(q);
                        }
                    }
                    out = next;
                }
                out
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum DslError {
    #[error("syntax error at {0}")]
    Syntax(#[from] ParseError),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("missing declaration of `{0}`")]
    Missing(String),
    #[error("{what} has dimension {got}, expected {expected}")]
    DimensionMismatch { what: String, expected: usize, got: usize },
}

/// How Jacobians of the fields are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobianMode {
    /// Expression-level differentiation, exact to round-off.
    Analytic,
    /// Central differences with relative step `h_rel * (1 + |p_j|)`.
    FiniteDifference { h_rel: f64 },
}

impl JacobianMode {
    pub const DEFAULT_H_REL: f64 = 1e-6;

    pub fn finite_difference() -> Self {
        JacobianMode::FiniteDifference { h_rel: Self::DEFAULT_H_REL }
    }
}

/// A parsed control-affine impulsive system.
///
/// Immutable after parsing; evaluation methods take `&self` and write into
/// caller buffers, so concurrent use needs no synchronization.
#[derive(Debug, Clone)]
pub struct ControlAffineSystem {
    n: usize,
    m: usize,
    l: usize,
    /// Drift, length `n`, over slots `x1..xn, u1..um, v1..vl`.
    f: Vec<Expr>,
    /// Impulse fields, `m` entries of length `n`, over slots `x1..xn, u1..um`.
    g: Vec<Vec<Expr>>,
    pub u_set: ImpulseDomain,
    pub v_set: OrdinarySet,
    /// Analytic Jacobians of each `g_a` (rows: n, cols: n+m), derived at
    /// parse time. `None` forces finite differencing.
    g_jac: Option<Vec<Vec<Vec<Expr>>>>,
}

impl ControlAffineSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.m, self.l)
    }

    /// Drop the analytic Jacobians so downstream code exercises the
    /// finite-difference path.
    pub fn without_analytic_jacobians(mut self) -> Self {
        self.g_jac = None;
        self
    }

    pub fn has_analytic_jacobians(&self) -> bool {
        self.g_jac.is_some()
    }

    /// Evaluate the drift `f(x, u, v)` into `out` (length `n`).
    pub fn f_tilde(&self, x: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(u.len(), self.m);
        debug_assert_eq!(v.len(), self.l);
        let mut slots = Vec::with_capacity(self.n + self.m + self.l);
        slots.extend_from_slice(x);
        slots.extend_from_slice(u);
        slots.extend_from_slice(v);
        for (i, e) in self.f.iter().enumerate() {
            out[i] = e.eval(&slots);
        }
    }

    /// Evaluate the impulse field `g_a(x, u)` into `out` (length `n`).
    pub fn g_tilde(&self, alpha: usize, x: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert!(alpha < self.m);
        let mut slots = Vec::with_capacity(self.n + self.m);
        slots.extend_from_slice(x);
        slots.extend_from_slice(u);
        for (i, e) in self.g[alpha].iter().enumerate() {
            out[i] = e.eval(&slots);
        }
    }

    /// Extended drift on `R^{n+m}`: `(f(x,z,v), 0)`.
    pub fn extended_f(&self, p: &[f64], v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(p.len(), self.n + self.m);
        let mut slots = Vec::with_capacity(self.n + self.m + self.l);
        slots.extend_from_slice(p);
        slots.extend_from_slice(v);
        for (i, e) in self.f.iter().enumerate() {
            out[i] = e.eval(&slots);
        }
        for o in out[self.n..].iter_mut() {
            *o = 0.0;
        }
    }

    /// Extended impulse field on `R^{n+m}`: `(g_a(x,z), e_a)`.
    pub fn extended_g(&self, alpha: usize, p: &[f64], out: &mut [f64]) {
        debug_assert_eq!(p.len(), self.n + self.m);
        for (i, e) in self.g[alpha].iter().enumerate() {
            out[i] = e.eval(p);
        }
        for (j, o) in out[self.n..].iter_mut().enumerate() {
            *o = if j == alpha { 1.0 } else { 0.0 };
        }
    }

    /// Jacobian of the extended `g_a` at `p`, shape `(n+m) x (n+m)`. The
    /// last `m` rows are zero because the appended components are constant.
    pub fn extended_g_jacobian(&self, alpha: usize, p: &[f64], mode: JacobianMode) -> Mat {
        let dim = self.n + self.m;
        let mut jac = Mat::zeros(dim, dim);
        self.extended_g_jacobian_into(alpha, p, mode, &mut jac);
        jac
    }

    /// Allocation-free variant for hot loops; `jac` must be `(n+m) x (n+m)`.
    pub fn extended_g_jacobian_into(
        &self,
        alpha: usize,
        p: &[f64],
        mode: JacobianMode,
        jac: &mut Mat,
    ) {
        let dim = self.n + self.m;
        debug_assert_eq!(jac.rows, dim);
        jac.data.fill(0.0);
        match (mode, &self.g_jac) {
            (JacobianMode::Analytic, Some(tables)) => {
                for r in 0..self.n {
                    for c in 0..dim {
                        jac.set(r, c, tables[alpha][r][c].eval(p));
                    }
                }
            }
            (JacobianMode::Analytic, None) | (JacobianMode::FiniteDifference { .. }, _) => {
                let h_rel = match mode {
                    JacobianMode::FiniteDifference { h_rel } => h_rel,
                    JacobianMode::Analytic => JacobianMode::DEFAULT_H_REL,
                };
                let mut plus = vec![0.0; dim];
                let mut minus = vec![0.0; dim];
                let mut q = p.to_vec();
                for c in 0..dim {
                    let h = h_rel * (1.0 + p[c].abs());
                    q[c] = p[c] + h;
                    self.extended_g(alpha, &q, &mut plus);
                    q[c] = p[c] - h;
                    self.extended_g(alpha, &q, &mut minus);
                    q[c] = p[c];
                    for r in 0..self.n {
                        jac.set(r, c, (plus[r] - minus[r]) / (2.0 * h));
                    }
                }
            }
        }
    }

    /// Canonical rendering of the system as DSL text.
    pub fn pretty(&self) -> String {
        let fs = Scope::system(self.n, self.m, self.l);
        let gs = Scope::state_control(self.n, self.m);
        let mut out = format!("n = {}; m = {}; l = {}\n", self.n, self.m, self.l);
        let render = |exprs: &[Expr], scope: &Scope| {
            if exprs.len() == 1 {
                exprs[0].pretty(scope)
            } else {
                let parts: Vec<String> = exprs.iter().map(|e| e.pretty(scope)).collect();
                format!("({})", parts.join(", "))
            }
        };
        out.push_str(&format!("f = {}\n", render(&self.f, &fs)));
        for (k, g) in self.g.iter().enumerate() {
            out.push_str(&format!("g{} = {}\n", k + 1, render(g, &gs)));
        }
        match &self.u_set {
            ImpulseDomain::FullSpace => out.push_str("U = full\n"),
            ImpulseDomain::Box { lo, hi } => {
                let nums: Vec<String> =
                    lo.iter().chain(hi.iter()).map(|v| format!("{v}")).collect();
                out.push_str(&format!("U = box({})\n", nums.join(", ")));
            }
            ImpulseDomain::Polytope { normals, offsets } => {
                let rows: Vec<String> = normals
                    .iter()
                    .zip(offsets)
                    .map(|(row, b)| {
                        let cs: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                        format!("({}): {}", cs.join(", "), b)
                    })
                    .collect();
                out.push_str(&format!("U = polytope({})\n", rows.join("; ")));
            }
        }
        match &self.v_set {
            OrdinarySet::Empty => {}
            OrdinarySet::Box { lo, hi } => {
                let nums: Vec<String> =
                    lo.iter().chain(hi.iter()).map(|v| format!("{v}")).collect();
                out.push_str(&format!("V = box({})\n", nums.join(", ")));
            }
            OrdinarySet::Finite(pts) => {
                let items: Vec<String> = pts
                    .iter()
                    .map(|p| {
                        if p.len() == 1 {
                            format!("{}", p[0])
                        } else {
                            let cs: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
                            format!("({})", cs.join(", "))
                        }
                    })
                    .collect();
                out.push_str(&format!("V = set{{{}}}\n", items.join(", ")));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// DSL file parsing
// ---------------------------------------------------------------------------

struct Stmt {
    key: String,
    value: String,
    line: usize,
    value_col: usize,
}

fn split_statements(source: &str) -> Result<Vec<Stmt>, DslError> {
    let mut stmts = Vec::new();
    for (li, raw) in source.lines().enumerate() {
        let line_no = li + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let mut col = 1usize;
        for part in line.split(';') {
            let trimmed = part.trim();
            if !trimmed.is_empty() {
                let eq = trimmed.find('=').ok_or(DslError::Invalid {
                    line: line_no,
                    message: format!("expected `key = value`, got `{trimmed}`"),
                })?;
                let key = trimmed[..eq].trim().to_string();
                let value = trimmed[eq + 1..].trim().to_string();
                let lead = part.len() - part.trim_start().len();
                let value_col =
                    col + lead + eq + 1 + trimmed[eq + 1..].len() - trimmed[eq + 1..].trim_start().len();
                if key.is_empty() || value.is_empty() {
                    return Err(DslError::Invalid {
                        line: line_no,
                        message: "empty key or value".to_string(),
                    });
                }
                stmts.push(Stmt { key, value, line: line_no, value_col });
            }
            col += part.len() + 1;
        }
    }
    Ok(stmts)
}

fn parse_usize(stmt: &Stmt) -> Result<usize, DslError> {
    stmt.value.parse().map_err(|_| DslError::Invalid {
        line: stmt.line,
        message: format!("`{}` must be a nonnegative integer, got `{}`", stmt.key, stmt.value),
    })
}

fn parse_number_list(text: &str, line: usize) -> Result<Vec<f64>, DslError> {
    text.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| DslError::Invalid {
                line,
                message: format!("invalid number `{}`", s.trim()),
            })
        })
        .collect()
}

fn parse_u_set(stmt: &Stmt, m: usize) -> Result<ImpulseDomain, DslError> {
    let v = stmt.value.trim();
    if v == "full" {
        return Ok(ImpulseDomain::FullSpace);
    }
    if let Some(rest) = v.strip_prefix("box(").and_then(|s| s.strip_suffix(')')) {
        let nums = parse_number_list(rest, stmt.line)?;
        if nums.len() != 2 * m {
            return Err(DslError::DimensionMismatch {
                what: "U = box(..)".to_string(),
                expected: 2 * m,
                got: nums.len(),
            });
        }
        let (lo, hi) = nums.split_at(m);
        if lo.iter().zip(hi).any(|(a, b)| a > b) {
            return Err(DslError::Invalid {
                line: stmt.line,
                message: "box lower bound exceeds upper bound".to_string(),
            });
        }
        return Ok(ImpulseDomain::Box { lo: lo.to_vec(), hi: hi.to_vec() });
    }
    if let Some(rest) = v.strip_prefix("polytope(").and_then(|s| s.strip_suffix(')')) {
        let mut normals = Vec::new();
        let mut offsets = Vec::new();
        for row in rest.split(';') {
            let row = row.trim();
            let (coeffs, off) = row
                .rsplit_once(':')
                .ok_or(DslError::Invalid {
                    line: stmt.line,
                    message: "polytope row must be `(a1, .., am): b`".to_string(),
                })?;
            let coeffs = coeffs
                .trim()
                .strip_prefix('(')
                .and_then(|s| s.strip_suffix(')'))
                .ok_or(DslError::Invalid {
                    line: stmt.line,
                    message: "polytope coefficients must be parenthesized".to_string(),
                })?;
            let row_vec = parse_number_list(coeffs, stmt.line)?;
            if row_vec.len() != m {
                return Err(DslError::DimensionMismatch {
                    what: "polytope row".to_string(),
                    expected: m,
                    got: row_vec.len(),
                });
            }
            let b: f64 = off.trim().parse().map_err(|_| DslError::Invalid {
                line: stmt.line,
                message: format!("invalid polytope offset `{}`", off.trim()),
            })?;
            normals.push(row_vec);
            offsets.push(b);
        }
        return Ok(ImpulseDomain::Polytope { normals, offsets });
    }
    Err(DslError::Invalid {
        line: stmt.line,
        message: format!("U must be `full`, `box(..)` or `polytope(..)`, got `{v}`"),
    })
}

fn parse_v_set(stmt: &Stmt, l: usize) -> Result<OrdinarySet, DslError> {
    let v = stmt.value.trim();
    if let Some(rest) = v.strip_prefix("box(").and_then(|s| s.strip_suffix(')')) {
        let nums = parse_number_list(rest, stmt.line)?;
        if nums.len() != 2 * l {
            return Err(DslError::DimensionMismatch {
                what: "V = box(..)".to_string(),
                expected: 2 * l,
                got: nums.len(),
            });
        }
        let (lo, hi) = nums.split_at(l);
        return Ok(OrdinarySet::Box { lo: lo.to_vec(), hi: hi.to_vec() });
    }
    if let Some(rest) = v.strip_prefix("set{").and_then(|s| s.strip_suffix('}')) {
        let mut pts = Vec::new();
        // Elements are scalars (l = 1) or parenthesized tuples.
        let mut depth = 0usize;
        let mut cur = String::new();
        let mut items = Vec::new();
        for c in rest.chars() {
            match c {
                '(' => {
                    depth += 1;
                    cur.push(c);
                }
                ')' => {
                    depth -= 1;
                    cur.push(c);
                }
                ',' if depth == 0 => {
                    items.push(cur.trim().to_string());
                    cur.clear();
                }
                _ => cur.push(c),
            }
        }
        if !cur.trim().is_empty() {
            items.push(cur.trim().to_string());
        }
        for item in items {
            let nums = if let Some(inner) =
                item.strip_prefix('(').and_then(|s| s.strip_suffix(')'))
            {
                parse_number_list(inner, stmt.line)?
            } else {
                parse_number_list(&item, stmt.line)?
            };
            if nums.len() != l {
                return Err(DslError::DimensionMismatch {
                    what: "V set element".to_string(),
                    expected: l,
                    got: nums.len(),
                });
            }
            pts.push(nums);
        }
        if pts.is_empty() {
            return Err(DslError::Invalid {
                line: stmt.line,
                message: "V = set{..} must not be empty".to_string(),
            });
        }
        return Ok(OrdinarySet::Finite(pts));
    }
    Err(DslError::Invalid {
        line: stmt.line,
        message: format!("V must be `box(..)` or `set{{..}}`, got `{v}`"),
    })
}

/// Parse a system declaration.
///
/// ```text
/// n = 1; m = 1; l = 1
/// f = x1 * v1
/// g1 = x1
/// U = box(-1, 1)
/// V = set{0, 1}
/// ```
pub fn parse_system(source: &str) -> Result<ControlAffineSystem, DslError> {
    let stmts = split_statements(source)?;
    let find_dim = |key: &str| -> Result<usize, DslError> {
        stmts
            .iter()
            .find(|s| s.key == key)
            .ok_or_else(|| DslError::Missing(key.to_string()))
            .and_then(parse_usize)
    };
    let n = find_dim("n")?;
    let m = find_dim("m")?;
    let l = find_dim("l")?;
    if n < 1 || m < 1 {
        return Err(DslError::Invalid {
            line: 1,
            message: format!("need n >= 1 and m >= 1, got n = {n}, m = {m}"),
        });
    }

    let f_scope = Scope::system(n, m, l);
    let g_scope = Scope::state_control(n, m);

    let mut f = None;
    let mut g: Vec<Option<Vec<Expr>>> = vec![None; m];
    let mut u_set = ImpulseDomain::FullSpace;
    let mut v_set = if l == 0 { OrdinarySet::Empty } else { OrdinarySet::Box { lo: vec![], hi: vec![] } };
    let mut v_declared = false;

    for stmt in &stmts {
        match stmt.key.as_str() {
            "n" | "m" | "l" => {}
            "f" => {
                let exprs = expr::parse_vector(&stmt.value, &f_scope, stmt.line, stmt.value_col)?;
                if exprs.len() != n {
                    return Err(DslError::DimensionMismatch {
                        what: "f".to_string(),
                        expected: n,
                        got: exprs.len(),
                    });
                }
                f = Some(exprs);
            }
            "U" => u_set = parse_u_set(stmt, m)?,
            "V" => {
                if l == 0 {
                    return Err(DslError::Invalid {
                        line: stmt.line,
                        message: "V declared but l = 0".to_string(),
                    });
                }
                v_set = parse_v_set(stmt, l)?;
                v_declared = true;
            }
            key if key.starts_with('g') => {
                let idx: usize = key[1..].parse().map_err(|_| DslError::Invalid {
                    line: stmt.line,
                    message: format!("unknown declaration `{key}`"),
                })?;
                if idx < 1 || idx > m {
                    return Err(DslError::Invalid {
                        line: stmt.line,
                        message: format!("g index {idx} out of range 1..={m}"),
                    });
                }
                let exprs = expr::parse_vector(&stmt.value, &g_scope, stmt.line, stmt.value_col)?;
                if exprs.len() != n {
                    return Err(DslError::DimensionMismatch {
                        what: format!("g{idx}"),
                        expected: n,
                        got: exprs.len(),
                    });
                }
                g[idx - 1] = Some(exprs);
            }
            other => {
                return Err(DslError::Invalid {
                    line: stmt.line,
                    message: format!("unknown declaration `{other}`"),
                })
            }
        }
    }

    let f = f.ok_or_else(|| DslError::Missing("f".to_string()))?;
    let mut g_fields = Vec::with_capacity(m);
    for (k, field) in g.into_iter().enumerate() {
        g_fields.push(field.ok_or_else(|| DslError::Missing(format!("g{}", k + 1)))?);
    }
    if l > 0 && !v_declared {
        return Err(DslError::Missing("V".to_string()));
    }

    // Analytic Jacobians of the g fields over the n+m extended slots.
    let g_jac = Some(
        g_fields
            .iter()
            .map(|field| {
                field
                    .iter()
                    .map(|e| (0..n + m).map(|c| e.derivative(c)).collect())
                    .collect()
            })
            .collect(),
    );

    Ok(ControlAffineSystem { n, m, l, f, g: g_fields, u_set, v_set, g_jac })
}

// ---------------------------------------------------------------------------
// Lie brackets and hypothesis audit
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("non-finite field or Jacobian value at the requested point")]
    NonFinite,
}

/// Lie bracket `[g_a, g_b] = Dg_b g_a - Dg_a g_b` of the extended impulse
/// fields at `p`. The trailing `m` components vanish identically.
pub fn lie_bracket(
    sys: &ControlAffineSystem,
    alpha: usize,
    beta: usize,
    p: &[f64],
    mode: JacobianMode,
) -> Result<Vec<f64>, EvalError> {
    let dim = sys.n() + sys.m();
    let mut ga = vec![0.0; dim];
    let mut gb = vec![0.0; dim];
    sys.extended_g(alpha, p, &mut ga);
    sys.extended_g(beta, p, &mut gb);
    let ja = sys.extended_g_jacobian(alpha, p, mode);
    let jb = sys.extended_g_jacobian(beta, p, mode);
    if !(all_finite(&ga) && all_finite(&gb) && all_finite(&ja.data) && all_finite(&jb.data)) {
        return Err(EvalError::NonFinite);
    }
    let t1 = jb.mul_vec(&ga);
    let t2 = ja.mul_vec(&gb);
    Ok(t1.iter().zip(&t2).map(|(a, b)| a - b).collect())
}

/// Sampling box in the extended `(x, u)` space.
#[derive(Debug, Clone)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn symmetric(dim: usize, radius: f64) -> Self {
        SampleBox { lo: vec![-radius; dim], hi: vec![radius; dim] }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BracketSample {
    pub alpha: usize,
    pub beta: usize,
    pub point: Vec<f64>,
    pub norm: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub pass: bool,
    pub tol: f64,
    pub detail: String,
}

/// Outcome of the numerical audit of the standing assumptions.
#[derive(Debug, Clone, serde::Serialize)]
pub struct HypothesisReport {
    /// Largest raw bracket norm over all sampled points and pairs.
    pub max_bracket_norm: f64,
    /// Largest bracket norm scaled by `1 + |p|^2`, compared against the
    /// tolerance.
    pub max_bracket_scaled: f64,
    pub worst_bracket: Option<BracketSample>,
    /// The worst few sampled brackets, largest norm first.
    pub bracket_samples: Vec<BracketSample>,
    /// Fitted sublinear-growth constants for the drift and impulse fields.
    pub growth_m: f64,
    pub growth_n: f64,
    /// Crude secant Lipschitz estimate for the extended fields.
    pub lipschitz_estimate: f64,
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn pass(&self, name: &str) -> Option<bool> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.pass)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub const DEFAULT_TOL_BRACKET: f64 = 1e-6;

/// Sample `n_samples` quasi-random points in `sample_box`, evaluate all
/// pairwise brackets, and fit the growth constants. The commutativity check
/// passes when every bracket norm stays below `tol_bracket * (1 + |p|^2)`.
pub fn check_hypotheses(
    sys: &ControlAffineSystem,
    sample_box: &SampleBox,
    n_samples: usize,
    tol_bracket: f64,
) -> HypothesisReport {
    assert!(n_samples >= 1);
    let dim = sys.n() + sys.m();
    assert_eq!(sample_box.lo.len(), dim);
    let mode = if sys.has_analytic_jacobians() {
        JacobianMode::Analytic
    } else {
        JacobianMode::finite_difference()
    };

    let points: Vec<Vec<f64>> = (0..n_samples)
        .map(|i| halton_point(i, &sample_box.lo, &sample_box.hi))
        .collect();
    let v_samples = sys.v_set.samples(3);

    let mut max_norm = 0.0f64;
    let mut max_scaled = 0.0f64;
    let mut samples: Vec<BracketSample> = Vec::new();
    let mut bracket_failed = false;
    for p in &points {
        let scale = 1.0 + norm2(p).powi(2);
        for alpha in 0..sys.m() {
            for beta in (alpha + 1)..sys.m() {
                match lie_bracket(sys, alpha, beta, p, mode) {
                    Ok(br) => {
                        let norm = norm2(&br);
                        max_norm = max_norm.max(norm);
                        max_scaled = max_scaled.max(norm / scale);
                        samples.push(BracketSample {
                            alpha: alpha + 1,
                            beta: beta + 1,
                            point: p.clone(),
                            norm,
                        });
                    }
                    Err(_) => bracket_failed = true,
                }
            }
        }
    }
    samples.sort_by(|a, b| b.norm.partial_cmp(&a.norm).unwrap());
    samples.truncate(8);
    let worst = samples.first().cloned();

    // Least-squares fits of |field| <= C (1 + |p|) through the origin.
    let mut num_f = 0.0;
    let mut den_f = 0.0;
    let mut num_g = 0.0;
    let mut den_g = 0.0;
    let mut buf = vec![0.0; dim];
    let mut lipschitz = 0.0f64;
    let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    for p in &points {
        let r = 1.0 + norm2(p);
        let mut f_norm_max = 0.0f64;
        for v in &v_samples {
            sys.extended_f(p, v, &mut buf);
            f_norm_max = f_norm_max.max(norm2(&buf));
        }
        num_f += f_norm_max * r;
        den_f += r * r;
        let mut g_norm_max = 0.0f64;
        let mut g_all = Vec::with_capacity(sys.m() * dim);
        for alpha in 0..sys.m() {
            sys.extended_g(alpha, p, &mut buf);
            g_norm_max = g_norm_max.max(norm2(&buf));
            g_all.extend_from_slice(&buf);
        }
        num_g += g_norm_max * r;
        den_g += r * r;

        sys.extended_f(p, &v_samples[0], &mut buf);
        let f_here = buf.clone();
        if let Some((q, fq, gq)) = &prev {
            let d = crate::util::dist2(p, q);
            if d > 1e-12 {
                lipschitz = lipschitz.max(crate::util::dist2(&f_here, fq) / d);
                for alpha in 0..sys.m() {
                    let a = &g_all[alpha * dim..(alpha + 1) * dim];
                    let b = &gq[alpha * dim..(alpha + 1) * dim];
                    lipschitz = lipschitz.max(crate::util::dist2(a, b) / d);
                }
            }
        }
        prev = Some((p.clone(), f_here, g_all));
    }
    let growth_m = if den_f > 0.0 { num_f / den_f } else { 0.0 };
    let growth_n = if den_g > 0.0 { num_g / den_g } else { 0.0 };

    let commutativity_pass = !bracket_failed && max_scaled <= tol_bracket;
    let checks = vec![
        HypothesisCheck {
            name: "commutativity".to_string(),
            pass: commutativity_pass,
            tol: tol_bracket,
            detail: if bracket_failed {
                "bracket evaluation produced non-finite values".to_string()
            } else {
                format!("max scaled bracket norm {max_scaled:.3e}")
            },
        },
        HypothesisCheck {
            name: "growth".to_string(),
            pass: growth_m.is_finite() && growth_n.is_finite(),
            tol: f64::INFINITY,
            detail: format!("fitted M = {growth_m:.3e}, N = {growth_n:.3e}"),
        },
        // Reported only: the global-Lipschitz condition on the impulse
        // fields cannot be certified from samples.
        HypothesisCheck {
            name: "g_lipschitz".to_string(),
            pass: lipschitz.is_finite(),
            tol: f64::INFINITY,
            detail: format!("secant estimate {lipschitz:.3e} on the sampled box"),
        },
    ];

    HypothesisReport {
        max_bracket_norm: max_norm,
        max_bracket_scaled: max_scaled,
        worst_bracket: worst,
        bracket_samples: samples,
        growth_m,
        growth_n,
        lipschitz_estimate: lipschitz,
        checks,
    }
}

/// Convenience alias used across modules.
pub type SharedSystem = Arc<ControlAffineSystem>;
