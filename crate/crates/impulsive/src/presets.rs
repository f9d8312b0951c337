//! Small stock of systems and controls used by tests, benchmarks and the
//! bundled command-line examples.

use crate::signal::{ControlSignal, Piece, PieceFn, SignalKind};
use crate::sysmodel::{parse_system, ControlAffineSystem};

/// Scalar bilinear system `x' = x v + x u'` on `[0, 1]` with `U = [-1, 1]`
/// and `V = {0, 1}`.
pub fn toy_system() -> ControlAffineSystem {
    parse_system(TOY_DSL).unwrap()
}

pub const TOY_DSL: &str = "n = 1; m = 1; l = 1\nf = x1 * v1\ng1 = x1\nU = box(-1, 1)\nV = set{0, 1}\n";

/// Pure translation: `x' = u'`, no drift, no ordinary control.
pub fn translation_system() -> ControlAffineSystem {
    parse_system(TRANSLATION_DSL).unwrap()
}

pub const TRANSLATION_DSL: &str = "n = 1; m = 1; l = 0\nf = 0\ng1 = 1\nU = box(-1, 1)\n";

/// Two-state oscillator whose velocity is kicked proportionally to the
/// position: `x1' = x2`, `x2' = -x1 + v + x1 u'`.
pub fn mechanical_system() -> ControlAffineSystem {
    parse_system(MECHANICAL_DSL).unwrap()
}

pub const MECHANICAL_DSL: &str =
    "n = 2; m = 1; l = 1\nf = (x2, -x1 + v1)\ng1 = (0, x1)\nU = box(-1, 1)\nV = box(-0.5, 0.5)\n";

/// A pair of impulse fields that fails the commutativity audit:
/// `[g1, g2] = (1, 0, 0, 0)` everywhere.
pub fn noncommuting_system() -> ControlAffineSystem {
    parse_system(NONCOMMUTING_DSL).unwrap()
}

pub const NONCOMMUTING_DSL: &str =
    "n = 2; m = 2; l = 0\nf = (0, 0)\ng1 = (1, 0)\ng2 = (x1, 0)\nU = box(-1, -1, 1, 1)\n";

/// Two commuting scalar impulse channels: `x' = x (u1' + u2')`.
pub fn two_impulse_system() -> ControlAffineSystem {
    parse_system(TWO_IMPULSE_DSL).unwrap()
}

pub const TWO_IMPULSE_DSL: &str =
    "n = 1; m = 2; l = 0\nf = 0\ng1 = x1\ng2 = x1\nU = box(-2, -2, 2, 2)\n";

/// The ordinary control paired with the alternating example: `v = 1` on
/// `[0, 1/2)` and `0` afterwards.
pub fn toy_ordinary_control() -> ControlSignal {
    ControlSignal::new(
        vec![
            Piece { t0: 0.0, t1: 0.5, f: PieceFn::Constant(vec![1.0]) },
            Piece { t0: 0.5, t1: 1.0, f: PieceFn::Constant(vec![0.0]) },
        ],
        vec![0.0],
        SignalKind::PiecewiseDefined,
    )
    .unwrap()
}

/// The alternating-sign control with infinitely many jumps, truncated at
/// `k_max`: value `(-1)^{k+1}` on `[1 - 1/k, 1 - 1/(k+1))` for
/// `k = 1 .. k_max - 1`, the same pattern value on the merged tail
/// `[1 - 1/k_max, 1)`, and the explicit terminal value `0`.
pub fn alternating_control(k_max: u32) -> ControlSignal {
    assert!(k_max >= 2);
    let mut pieces = Vec::new();
    for k in 1..k_max {
        let t0 = (k - 1) as f64 / k as f64;
        let t1 = k as f64 / (k + 1) as f64;
        let val = if k % 2 == 1 { 1.0 } else { -1.0 };
        pieces.push(Piece { t0, t1, f: PieceFn::Constant(vec![val]) });
    }
    let tail_val = if k_max % 2 == 1 { 1.0 } else { -1.0 };
    pieces.push(Piece {
        t0: (k_max - 1) as f64 / k_max as f64,
        t1: 1.0,
        f: PieceFn::Constant(vec![tail_val]),
    });
    let mut sig =
        ControlSignal::new(pieces, vec![0.0], SignalKind::PiecewiseDefined).unwrap();
    sig.truncation_level = Some(k_max);
    sig
}

/// Reference solution of the toy system driven by [`alternating_control`]
/// and [`toy_ordinary_control`]: `x0 e^t` before `1/2`, then
/// `x0 e^{1/2} e^{u(t) - 1}` on the alternating pieces, and
/// `x0 e^{-1/2}` at `t = 1`. Returns `None` inside the truncated tail
/// `[1 - 1/k_max, 1)`, where the truncation departs from the full family.
pub fn alternating_closed_form(x0: f64, t: f64, k_max: u32) -> Option<f64> {
    if t >= 1.0 {
        return Some(x0 * (-0.5f64).exp());
    }
    if t < 0.5 {
        return Some(x0 * t.exp());
    }
    if t >= 1.0 - 1.0 / k_max as f64 {
        return None;
    }
    let k = (1.0 / (1.0 - t) + 1e-9).floor() as u32;
    let u_val = if k % 2 == 1 { 1.0 } else { -1.0 };
    Some(x0 * 0.5f64.exp() * (u_val - 1.0f64).exp())
}
