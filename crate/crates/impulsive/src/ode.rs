//! Adaptive Dormand-Prince 5(4) integrator.
//!
//! One explicit embedded pair is enough for everything in this crate: the
//! right-hand sides are smooth between control breakpoints and the callers
//! integrate piece by piece. The step controller is the classic I-controller
//! with the usual 0.9 safety factor and step-ratio clamps.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OdeError {
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("exceeded {max_steps} steps at t = {t}")]
    MaxSteps { t: f64, max_steps: usize },
    #[error("trajectory escaped radius {radius} at t = {t}")]
    Escape { t: f64, radius: f64 },
}

#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub max_steps: usize,
    /// Abort when |y| exceeds this radius (guards against blow-up).
    pub escape_radius: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-10,
            h_init: None,
            max_steps: 1_000_000,
            escape_radius: None,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions { rtol: tol, atol: tol, ..Default::default() }
    }
}

// Dormand-Prince coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate `y' = f(t, y)` from `t0` to `t1` (forward) and return `y(t1)`.
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<f64>, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    assert!(t1 >= t0, "integrate only runs forward in its own variable");
    let dim = y0.len();
    let mut y = y0.to_vec();
    if t1 == t0 || dim == 0 {
        return Ok(y);
    }
    let span = t1 - t0;
    let mut t = t0;
    let mut h = opts.h_init.unwrap_or(span / 16.0).min(span);
    let h_floor = span * 1e-14;
    let mut k = vec![vec![0.0; dim]; 7];
    let mut ytmp = vec![0.0; dim];
    let mut y5 = vec![0.0; dim];

    f(t, &y, &mut k[0]);
    let mut steps = 0usize;
    while t < t1 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(OdeError::MaxSteps { t, max_steps: opts.max_steps });
        }
        if h < h_floor {
            return Err(OdeError::StepUnderflow { t });
        }
        if t + h > t1 {
            h = t1 - t;
        }

        for s in 1..7 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s][j];
                    if a != 0.0 {
                        acc += a * kj[i];
                    }
                }
                ytmp[i] = y[i] + h * acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            f(t + C[s] * h, &ytmp, &mut tail[0]);
        }

        let mut err = 0.0f64;
        for i in 0..dim {
            let mut acc5 = 0.0;
            let mut acc4 = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc5 += B5[j] * kj[i];
                acc4 += B4[j] * kj[i];
            }
            y5[i] = y[i] + h * acc5;
            let e = h * (acc5 - acc4);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            err = err.max((e / sc).abs());
        }

        if !err.is_finite() {
            return Err(OdeError::NonFinite { t });
        }

        if err <= 1.0 {
            t += h;
            y.copy_from_slice(&y5);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(OdeError::NonFinite { t });
            }
            if let Some(r) = opts.escape_radius {
                if crate::util::norm2(&y) > r {
                    return Err(OdeError::Escape { t, radius: r });
                }
            }
            // FSAL: stage 7 was evaluated at (t+h, y5).
            k.swap(0, 6);
            let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).min(5.0) };
            h *= grow.max(0.2);
        } else {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let y = integrate(
            |_t, y, dy| dy[0] = y[0],
            0.0,
            1.0,
            &[1.0],
            &OdeOptions::with_tol(1e-12),
        )
        .unwrap();
        assert!((y[0] - 1.0f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let opts = OdeOptions::with_tol(1e-11);
        let y = integrate(
            |_t, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            20.0,
            &[1.0, 0.0],
            &opts,
        )
        .unwrap();
        let expect = (20.0f64.cos(), -20.0f64.sin());
        assert!((y[0] - expect.0).abs() < 1e-8);
        assert!((y[1] - expect.1).abs() < 1e-8);
    }

    #[test]
    fn time_dependent_rhs() {
        // y' = 3 t^2 -> y(2) = 8
        let y = integrate(
            |t, _y, dy| dy[0] = 3.0 * t * t,
            0.0,
            2.0,
            &[0.0],
            &OdeOptions::with_tol(1e-12),
        )
        .unwrap();
        assert!((y[0] - 8.0).abs() < 1e-9);
    }

    #[test]
    fn escape_detected() {
        let err = integrate(
            |_t, y, dy| dy[0] = y[0] * y[0],
            0.0,
            3.0,
            &[1.0],
            &OdeOptions { escape_radius: Some(1e3), ..OdeOptions::with_tol(1e-8) },
        )
        .unwrap_err();
        assert!(matches!(err, OdeError::Escape { .. } | OdeError::StepUnderflow { .. }));
    }

    #[test]
    fn zero_span_is_identity() {
        let y = integrate(|_, _, dy| dy[0] = 1.0, 2.0, 2.0, &[7.0], &OdeOptions::default())
            .unwrap();
        assert_eq!(y, vec![7.0]);
    }
}
