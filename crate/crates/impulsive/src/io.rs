//! File formats: control files (JSON), space-time control files (JSON),
//! problem files (JSON) and trajectory export (CSV).
//!
//! CSV floats are printed with 17 significant digits and a `.` decimal
//! separator so that re-parsing reproduces the exact binary value.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Scope};
use crate::mayer::{ControlClass, MayerProblem, Parameterization};
use crate::signal::{ControlSignal, Piece, PieceFn, SignalError, SignalKind, Trajectory};
use crate::spacetime::{SpaceTimeControl, StNode};
use crate::sysmodel::{parse_system, DslError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("system: {0}")]
    Dsl(#[from] DslError),
    #[error("signal: {0}")]
    Signal(#[from] SignalError),
    #[error("expression: {0}")]
    Expr(#[from] expr::ParseError),
    #[error("invalid file: {0}")]
    Invalid(String),
}

/// 17-significant-digit float rendering (round-trip exact for f64).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

// ---------------------------------------------------------------------------
// Signals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PieceDto {
    pub t0: f64,
    pub t1: f64,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub start: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub slope: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exprs: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalDto {
    pub pieces: Vec<PieceDto>,
    pub end_value: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub start_value: Option<Vec<f64>>,
    #[serde(default)]
    pub ac: bool,
}

impl SignalDto {
    pub fn from_signal(sig: &ControlSignal) -> Self {
        let scope = Scope::time();
        let pieces = sig
            .pieces
            .iter()
            .map(|p| match &p.f {
                PieceFn::Constant(v) => PieceDto {
                    t0: p.t0,
                    t1: p.t1,
                    kind: "constant".to_string(),
                    values: Some(v.clone()),
                    start: None,
                    slope: None,
                    exprs: None,
                },
                PieceFn::Affine { start, slope } => PieceDto {
                    t0: p.t0,
                    t1: p.t1,
                    kind: "affine".to_string(),
                    values: None,
                    start: Some(start.clone()),
                    slope: Some(slope.clone()),
                    exprs: None,
                },
                PieceFn::Expr(es) => PieceDto {
                    t0: p.t0,
                    t1: p.t1,
                    kind: "expression".to_string(),
                    values: None,
                    start: None,
                    slope: None,
                    exprs: Some(es.iter().map(|e| e.pretty(&scope)).collect()),
                },
            })
            .collect();
        SignalDto {
            pieces,
            end_value: sig.end_value.clone(),
            start_value: sig.start_value.clone(),
            ac: sig.is_ac(),
        }
    }

    pub fn to_signal(&self) -> Result<ControlSignal, IoError> {
        let scope = Scope::time();
        let mut pieces = Vec::with_capacity(self.pieces.len());
        for p in &self.pieces {
            let f = match p.kind.as_str() {
                "constant" => PieceFn::Constant(
                    p.values
                        .clone()
                        .ok_or_else(|| IoError::Invalid("constant piece needs `values`".into()))?,
                ),
                "affine" => PieceFn::Affine {
                    start: p
                        .start
                        .clone()
                        .ok_or_else(|| IoError::Invalid("affine piece needs `start`".into()))?,
                    slope: p
                        .slope
                        .clone()
                        .ok_or_else(|| IoError::Invalid("affine piece needs `slope`".into()))?,
                },
                "expression" => {
                    let srcs = p
                        .exprs
                        .clone()
                        .ok_or_else(|| IoError::Invalid("expression piece needs `exprs`".into()))?;
                    let mut es = Vec::with_capacity(srcs.len());
                    for s in &srcs {
                        es.push(expr::parse_scalar(s, &scope, 1, 1)?);
                    }
                    PieceFn::Expr(es)
                }
                other => {
                    return Err(IoError::Invalid(format!(
                        "unknown piece kind `{other}` (use constant | affine | expression)"
                    )))
                }
            };
            pieces.push(Piece { t0: p.t0, t1: p.t1, f });
        }
        let kind = if self.ac { SignalKind::Ac } else { SignalKind::PiecewiseDefined };
        let mut sig = ControlSignal::new(pieces, self.end_value.clone(), kind)?;
        if let Some(sv) = &self.start_value {
            sig = sig.with_start_value(sv.clone());
        }
        Ok(sig)
    }
}

/// Control file: the impulsive control plus an optional ordinary control.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlFileDto {
    pub u: SignalDto,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub v: Option<SignalDto>,
}

impl ControlFileDto {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn signals(&self, l: usize) -> Result<(ControlSignal, ControlSignal), IoError> {
        let u = self.u.to_signal()?;
        let v = match &self.v {
            Some(dto) => dto.to_signal()?,
            None => {
                if l > 0 {
                    return Err(IoError::Invalid(
                        "system has an ordinary control but the file declares no v".into(),
                    ));
                }
                ControlSignal::constant(u.a, u.b, vec![])
            }
        };
        if v.a != u.a || v.b != u.b {
            return Err(IoError::Invalid("u and v must share the horizon".into()));
        }
        Ok((u, v))
    }
}

// ---------------------------------------------------------------------------
// Space-time controls
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceTimeDto {
    pub a: f64,
    pub b: f64,
    pub k: f64,
    pub nodes: Vec<StNode>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub v: Option<SignalDto>,
}

impl SpaceTimeDto {
    pub fn from_control(stc: &SpaceTimeControl) -> Self {
        SpaceTimeDto {
            a: stc.a,
            b: stc.b,
            k: stc.k_budget,
            nodes: stc.nodes.clone(),
            v: if stc.v.dim() == 0 { None } else { Some(SignalDto::from_signal(&stc.v)) },
        }
    }

    pub fn to_control(&self) -> Result<SpaceTimeControl, IoError> {
        let v = match &self.v {
            Some(dto) => dto.to_signal()?,
            None => ControlSignal::constant(0.0, 1.0, vec![]),
        };
        Ok(SpaceTimeControl {
            a: self.a,
            b: self.b,
            k_budget: self.k,
            nodes: self.nodes.clone(),
            v,
        })
    }
}

// ---------------------------------------------------------------------------
// Problems
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemDto {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub system_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub system_dsl: Option<String>,
    pub psi: String,
    pub x0: Vec<f64>,
    pub u0: Vec<f64>,
    pub horizon: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub budget: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub u_pieces: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub v_pieces: Option<usize>,
}

/// A loaded problem: the Mayer data plus the search defaults carried by the
/// file.
pub struct LoadedProblem {
    pub problem: MayerProblem,
    pub class: ControlClass,
    pub k: Option<f64>,
    pub budget: usize,
    pub seed: u64,
    pub param: Parameterization,
}

pub fn load_problem(path: &Path) -> Result<LoadedProblem, IoError> {
    let dto: ProblemDto = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let dsl = match (&dto.system_dsl, &dto.system_file) {
        (Some(text), _) => text.clone(),
        (None, Some(rel)) => {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            std::fs::read_to_string(base.join(rel))?
        }
        (None, None) => {
            return Err(IoError::Invalid(
                "problem needs `system_dsl` or `system_file`".into(),
            ))
        }
    };
    let sys = std::sync::Arc::new(parse_system(&dsl)?);
    let scope = Scope::state_control(sys.n(), sys.m());
    let psi = expr::parse_scalar(&dto.psi, &scope, 1, 1)?;
    if dto.x0.len() != sys.n() || dto.u0.len() != sys.m() {
        return Err(IoError::Invalid("x0 / u0 dimensions do not match the system".into()));
    }
    let class = match dto.class.as_deref() {
        None => ControlClass::L1,
        Some(s) => ControlClass::parse(s)
            .ok_or_else(|| IoError::Invalid(format!("unknown control class `{s}`")))?,
    };
    let k = dto.k;
    if class.needs_k() && k.is_none() {
        return Err(IoError::Invalid(format!(
            "class {} needs a variation budget `k`",
            class.name()
        )));
    }
    let problem = MayerProblem {
        sys,
        psi,
        x0: dto.x0.clone(),
        u0: dto.u0.clone(),
        a: dto.horizon[0],
        b: dto.horizon[1],
    };
    let param = Parameterization {
        class,
        u_pieces: dto.u_pieces.unwrap_or(8),
        v_pieces: dto.v_pieces.unwrap_or(4),
        k,
    };
    Ok(LoadedProblem {
        problem,
        class,
        k,
        budget: dto.budget.unwrap_or(10_000),
        seed: dto.seed.unwrap_or(0),
        param,
    })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Serialize a decoded control.
pub fn decoded_control_json(control: &crate::mayer::DecodedControl) -> serde_json::Value {
    match control {
        crate::mayer::DecodedControl::TimeDomain { u, v } => serde_json::json!({
            "kind": "time_domain",
            "u": SignalDto::from_signal(u),
            "v": SignalDto::from_signal(v),
        }),
        crate::mayer::DecodedControl::SpaceTime(stc) => serde_json::json!({
            "kind": "space_time",
            "control": SpaceTimeDto::from_control(stc),
        }),
    }
}

/// Parse a decoded control back from its JSON form.
pub fn decoded_control_from_json(
    value: &serde_json::Value,
) -> Result<crate::mayer::DecodedControl, IoError> {
    let kind = value
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| IoError::Invalid("decoded control needs a `kind`".into()))?;
    match kind {
        "time_domain" => {
            let u: SignalDto = serde_json::from_value(
                value.get("u").cloned().ok_or_else(|| IoError::Invalid("missing u".into()))?,
            )?;
            let v: SignalDto = serde_json::from_value(
                value.get("v").cloned().ok_or_else(|| IoError::Invalid("missing v".into()))?,
            )?;
            Ok(crate::mayer::DecodedControl::TimeDomain {
                u: u.to_signal()?,
                v: v.to_signal()?,
            })
        }
        "space_time" => {
            let dto: SpaceTimeDto = serde_json::from_value(
                value
                    .get("control")
                    .cloned()
                    .ok_or_else(|| IoError::Invalid("missing control".into()))?,
            )?;
            Ok(crate::mayer::DecodedControl::SpaceTime(dto.to_control()?))
        }
        other => Err(IoError::Invalid(format!("unknown decoded-control kind `{other}`"))),
    }
}

/// Full JSON form of a value report (control serialized through the DTOs).
pub fn value_report_json(report: &crate::mayer::ValueReport) -> serde_json::Value {
    serde_json::json!({
        "class": report.class.name(),
        "k": report.k,
        "best_value": report.best_value,
        "recheck_value": report.recheck_value,
        "best_theta": report.best_theta,
        "best_control": decoded_control_json(&report.best_control),
        "evals": report.evals,
        "failures": report.failures,
        "seed": report.seed,
        "trace": report.trace,
    })
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

/// Trajectory CSV: columns `t, side, x1..xn, u1..um`. Regular samples leave
/// `side` empty; at declared jumps two rows are written, flagged `L` and
/// `R`, holding both one-sided values.
pub fn write_trajectory_csv<W: Write>(
    traj: &Trajectory,
    u_signal: Option<&ControlSignal>,
    n: usize,
    m: usize,
    out: &mut W,
) -> Result<(), IoError> {
    let mut header = vec!["t".to_string(), "side".to_string()];
    for i in 1..=n {
        header.push(format!("x{i}"));
    }
    for i in 1..=m {
        header.push(format!("u{i}"));
    }
    writeln!(out, "{}", header.join(","))?;
    let write_row = |out: &mut W, t: f64, side: &str, x: &[f64], u: &[f64]| -> std::io::Result<()> {
        let mut cells = vec![fmt_f64(t), side.to_string()];
        cells.extend(x.iter().map(|v| fmt_f64(*v)));
        cells.extend(u.iter().map(|v| fmt_f64(*v)));
        writeln!(out, "{}", cells.join(","))
    };
    for (i, &t) in traj.times.iter().enumerate() {
        let u_right = traj.controls.get(i).cloned().unwrap_or_default();
        if let Some(j) = traj.jumps.iter().find(|j| j.index == i) {
            let u_left = u_signal
                .map(|sig| if t > sig.a { sig.left_limit(t) } else { sig.value(t) })
                .unwrap_or_else(|| u_right.clone());
            write_row(out, t, "L", &j.left_state, &u_left)?;
            write_row(out, t, "R", &traj.states[i], &u_right)?;
        } else {
            write_row(out, t, "", &traj.states[i], &u_right)?;
        }
    }
    Ok(())
}

/// Point-cloud CSV: `x1..xn, u1..um, K, seed` per row (`K` empty for the
/// unconstrained classes).
pub fn write_cloud_csv<W: Write>(
    points: &[Vec<f64>],
    n: usize,
    m: usize,
    k: Option<f64>,
    seed: u64,
    out: &mut W,
) -> Result<(), IoError> {
    let mut header = Vec::new();
    for i in 1..=n {
        header.push(format!("x{i}"));
    }
    for i in 1..=m {
        header.push(format!("u{i}"));
    }
    header.push("K".to_string());
    header.push("seed".to_string());
    writeln!(out, "{}", header.join(","))?;
    let k_cell = k.map(fmt_f64).unwrap_or_default();
    for p in points {
        let mut cells: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
        cells.push(k_cell.clone());
        cells.push(seed.to_string());
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn signal_json_round_trip() {
        let sig = presets::alternating_control(6);
        let dto = SignalDto::from_signal(&sig);
        let text = serde_json::to_string(&dto).unwrap();
        let back: SignalDto = serde_json::from_str(&text).unwrap();
        let sig2 = back.to_signal().unwrap();
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            assert_eq!(sig.value(t), sig2.value(t));
        }
    }

    #[test]
    fn expression_piece_round_trip() {
        let scope = Scope::time();
        let e = expr::parse_scalar("sin(3 * t) / 2", &scope, 1, 1).unwrap();
        let sig = ControlSignal::new(
            vec![Piece { t0: 0.0, t1: 1.0, f: PieceFn::Expr(vec![e]) }],
            vec![(3.0f64).sin() / 2.0],
            SignalKind::PiecewiseDefined,
        )
        .unwrap();
        let dto = SignalDto::from_signal(&sig);
        let sig2 = dto.to_signal().unwrap();
        assert_eq!(sig.value(0.37), sig2.value(0.37));
    }

    #[test]
    fn csv_flags_jump_rows() {
        use crate::flowbox::FlowBoxChart;
        use crate::solver::pd_solution;
        use std::sync::Arc;
        let chart = FlowBoxChart::new(Arc::new(presets::toy_system()));
        let u = presets::alternating_control(4);
        let v = presets::toy_ordinary_control();
        let traj = pd_solution(&chart, &[1.0], &u, &v, &[0.0, 0.25, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, Some(&u), 1, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,side,x1,u1\n"));
        assert!(text.contains(",L,"));
        assert!(text.contains(",R,"));
    }
}
