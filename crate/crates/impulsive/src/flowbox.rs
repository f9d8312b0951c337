//! The flow-box coordinate change.
//!
//! With commuting extended impulse fields, the time-1 maps
//! `T_c = exp(c_a g_a)` form a commutative group. The chart
//! `phi(x, z) = (phi_pr(x, z), z)` with `phi_pr(x, z) = Pr(T_{-z}(x, z))`
//! straightens every `g_a` into the coordinate field `e_{n+a}` and leaves a
//! drift whose trailing `m` components vanish, so the control system reduces
//! to an ordinary ODE driven by the control value itself.

use std::sync::Arc;

use thiserror::Error;

use crate::ode::{self, OdeError, OdeOptions};
use crate::sysmodel::{ControlAffineSystem, JacobianMode};
use crate::util::{norm2, Mat};

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("flow integration failed: {0}")]
    Flow(#[from] OdeError),
    #[error("flow-box structure violated: residual norm {residual:.3e} exceeds {tol:.3e}")]
    FlowBoxViolation { residual: f64, tol: f64 },
}

/// How the chart Jacobian is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChartJacobian {
    /// Central differences on `phi` with step `h_rel * (1 + |p_j|)`.
    FiniteDifference { h_rel: f64 },
    /// Integrate the variational equations along the straightening flow.
    Variational,
}

#[derive(Debug, Clone)]
pub struct FlowBoxChart {
    pub sys: Arc<ControlAffineSystem>,
    pub ode: OdeOptions,
    pub jac: ChartJacobian,
    /// Tolerance on the straightened-field residual.
    pub tol_push: f64,
}

pub const DEFAULT_TOL_PUSH: f64 = 1e-5;

/// Time-`t` flow of an autonomous field given as a closure.
pub fn exp_flow<F>(field: F, t: f64, p: &[f64], opts: &OdeOptions) -> Result<Vec<f64>, OdeError>
where
    F: Fn(&[f64], &mut [f64]),
{
    if t >= 0.0 {
        ode::integrate(|_, y, dy| field(y, dy), 0.0, t, p, opts)
    } else {
        // Reverse time by flipping the field.
        ode::integrate(
            |_, y, dy| {
                field(y, dy);
                for d in dy.iter_mut() {
                    *d = -*d;
                }
            },
            0.0,
            -t,
            p,
            opts,
        )
    }
}

impl FlowBoxChart {
    pub fn new(sys: Arc<ControlAffineSystem>) -> Self {
        FlowBoxChart {
            sys,
            ode: OdeOptions {
                escape_radius: Some(1e6),
                ..OdeOptions::with_tol(1e-10)
            },
            jac: ChartJacobian::FiniteDifference { h_rel: JacobianMode::DEFAULT_H_REL },
            tol_push: DEFAULT_TOL_PUSH,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.ode.rtol = tol;
        self.ode.atol = tol;
        self
    }

    pub fn with_variational_jacobian(mut self) -> Self {
        self.jac = ChartJacobian::Variational;
        self
    }

    /// Working-box guard: flows wandering past `10 * radius` abort.
    pub fn with_working_radius(mut self, radius: f64) -> Self {
        self.ode.escape_radius = Some(10.0 * radius);
        self
    }

    fn dim(&self) -> usize {
        self.sys.n() + self.sys.m()
    }

    /// `T_c(p)`: time-1 flow of the constant-coefficient impulse field
    /// `sum_a c_a g_a` from `p`.
    fn group_flow(&self, coeffs: &[f64], p: &[f64]) -> Result<Vec<f64>, ChartError> {
        if coeffs.iter().all(|c| *c == 0.0) {
            return Ok(p.to_vec());
        }
        let m = self.sys.m();
        let mut buf = vec![0.0; self.dim()];
        let out = ode::integrate(
            |_, y, dy| {
                dy.fill(0.0);
                for (alpha, &c) in coeffs.iter().enumerate().take(m) {
                    if c != 0.0 {
                        self.sys.extended_g(alpha, y, &mut buf);
                        for (o, b) in dy.iter_mut().zip(&buf) {
                            *o += c * b;
                        }
                    }
                }
            },
            0.0,
            1.0,
            p,
            &self.ode,
        )?;
        Ok(out)
    }

    /// First factor of the chart: `phi_pr(x, z) = Pr(T_{-z}(x, z))`.
    pub fn phi_pr(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>, ChartError> {
        let n = self.sys.n();
        let mut p = Vec::with_capacity(self.dim());
        p.extend_from_slice(x);
        p.extend_from_slice(z);
        let coeffs: Vec<f64> = z.iter().map(|c| -c).collect();
        let end = self.group_flow(&coeffs, &p)?;
        Ok(end[..n].to_vec())
    }

    /// Full chart `phi(x, z) = (phi_pr(x, z), z)`.
    pub fn phi(&self, x: &[f64], z: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ChartError> {
        Ok((self.phi_pr(x, z)?, z.to_vec()))
    }

    /// Inverse chart `phi^{-1}(xi, zeta) = (phi_pr(xi, -zeta), zeta)`.
    pub fn phi_inverse(&self, xi: &[f64], zeta: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ChartError> {
        let minus: Vec<f64> = zeta.iter().map(|c| -c).collect();
        Ok((self.phi_pr(xi, &minus)?, zeta.to_vec()))
    }

    /// Jacobian of `phi` at `(x, z)`, shape `(n+m) x (n+m)`.
    pub fn d_phi(&self, x: &[f64], z: &[f64]) -> Result<Mat, ChartError> {
        match self.jac {
            ChartJacobian::FiniteDifference { h_rel } => self.d_phi_fd(x, z, h_rel),
            ChartJacobian::Variational => self.d_phi_variational(x, z),
        }
    }

    fn d_phi_fd(&self, x: &[f64], z: &[f64], h_rel: f64) -> Result<Mat, ChartError> {
        let n = self.sys.n();
        let m = self.sys.m();
        let dim = n + m;
        let mut jac = Mat::zeros(dim, dim);
        let mut p = Vec::with_capacity(dim);
        p.extend_from_slice(x);
        p.extend_from_slice(z);
        for c in 0..dim {
            let h = h_rel * (1.0 + p[c].abs());
            let mut plus = p.clone();
            plus[c] += h;
            let mut minus = p.clone();
            minus[c] -= h;
            let fp = self.phi_pr(&plus[..n], &plus[n..])?;
            let fm = self.phi_pr(&minus[..n], &minus[n..])?;
            for r in 0..n {
                jac.set(r, c, (fp[r] - fm[r]) / (2.0 * h));
            }
        }
        for a in 0..m {
            jac.set(n + a, n + a, 1.0);
        }
        Ok(jac)
    }

    /// Variational route: flow the state together with its sensitivity to
    /// the start point and to the (frozen) coefficient vector. The chart
    /// derivative combines both because the coefficients are `-z`.
    fn d_phi_variational(&self, x: &[f64], z: &[f64]) -> Result<Mat, ChartError> {
        let n = self.sys.n();
        let m = self.sys.m();
        let dim = n + m;
        let coeffs: Vec<f64> = z.iter().map(|c| -c).collect();

        // State layout: y (dim), M (dim x dim, row-major), S (dim x m).
        let total = dim + dim * dim + dim * m;
        let mut y0 = vec![0.0; total];
        y0[..n].copy_from_slice(x);
        y0[n..dim].copy_from_slice(z);
        for i in 0..dim {
            y0[dim + i * dim + i] = 1.0;
        }

        let sys = &self.sys;
        let jac_mode = if sys.has_analytic_jacobians() {
            JacobianMode::Analytic
        } else {
            JacobianMode::finite_difference()
        };
        // Note: even for z = 0 the coefficient sensitivity S is nonzero
        // (it integrates to g_b(p)), so the flow always runs.
        let mut gbuf = vec![0.0; dim];
        let mut dh = Mat::zeros(dim, dim);
        let mut ja = Mat::zeros(dim, dim);
        let end = {
            ode::integrate(
                |_, state, dstate| {
                    let y = &state[..dim];
                    // dh = sum_a c_a Dg_a(y), dense (dim x dim).
                    dh.data.fill(0.0);
                    for (alpha, &c) in coeffs.iter().enumerate() {
                        if c != 0.0 {
                            sys.extended_g_jacobian_into(alpha, y, jac_mode, &mut ja);
                            for (d, j) in dh.data.iter_mut().zip(&ja.data) {
                                *d += c * j;
                            }
                        }
                    }
                    // y' = h(y)
                    dstate[..dim].fill(0.0);
                    for (alpha, &c) in coeffs.iter().enumerate() {
                        if c != 0.0 {
                            sys.extended_g(alpha, y, &mut gbuf);
                            for (o, b) in dstate[..dim].iter_mut().zip(&gbuf) {
                                *o += c * b;
                            }
                        }
                    }
                    // M' = dh M
                    for col in 0..dim {
                        for r in 0..dim {
                            let mut acc = 0.0;
                            for k in 0..dim {
                                acc += dh.get(r, k) * state[dim + k * dim + col];
                            }
                            dstate[dim + r * dim + col] = acc;
                        }
                    }
                    // S' = dh S + g_b(y) per column b
                    let s_off = dim + dim * dim;
                    for b in 0..m {
                        sys.extended_g(b, y, &mut gbuf);
                        for r in 0..dim {
                            let mut acc = gbuf[r];
                            for k in 0..dim {
                                acc += dh.get(r, k) * state[s_off + k * m + b];
                            }
                            dstate[s_off + r * m + b] = acc;
                        }
                    }
                },
                0.0,
                1.0,
                &y0,
                &self.ode,
            )?
        };

        // D(T_{-z}(x,z)) = M - S d(z)/d(x,z) with coefficients c = -z:
        // columns 0..n come from M alone, column n+b gets -S_b.
        let s_off = dim + dim * dim;
        let mut dphi = Mat::zeros(dim, dim);
        for r in 0..n {
            for c in 0..dim {
                let mut val = end[dim + r * dim + c];
                if c >= n {
                    let b = c - n;
                    val -= end[s_off + r * m + b];
                }
                dphi.set(r, c, val);
            }
        }
        for a in 0..m {
            dphi.set(n + a, n + a, 1.0);
        }
        Ok(dphi)
    }

    /// Reduced drift: apply `D phi` to the extended drift at
    /// `phi^{-1}(xi, zeta)` and return the leading `n` components. The
    /// trailing components vanish by the chart's block structure.
    pub fn pushforward_drift(
        &self,
        xi: &[f64],
        zeta: &[f64],
        v: &[f64],
    ) -> Result<Vec<f64>, ChartError> {
        let n = self.sys.n();
        let dim = self.dim();
        let (x, z) = self.phi_inverse(xi, zeta)?;
        let jac = self.d_phi(&x, &z)?;
        let mut p = Vec::with_capacity(dim);
        p.extend_from_slice(&x);
        p.extend_from_slice(&z);
        let mut f_ext = vec![0.0; dim];
        self.sys.extended_f(&p, v, &mut f_ext);
        let pushed = jac.mul_vec(&f_ext);
        let residual = norm2(&pushed[n..]);
        if residual > self.tol_push {
            return Err(ChartError::FlowBoxViolation { residual, tol: self.tol_push });
        }
        Ok(pushed[..n].to_vec())
    }

    /// Test oracle: `D phi . g_a` at `phi^{-1}(xi, zeta)`; should equal the
    /// unit vector `e_{n+a}` up to the chart tolerance.
    pub fn pushforward_impulse(
        &self,
        xi: &[f64],
        zeta: &[f64],
        alpha: usize,
    ) -> Result<Vec<f64>, ChartError> {
        let dim = self.dim();
        let (x, z) = self.phi_inverse(xi, zeta)?;
        let jac = self.d_phi(&x, &z)?;
        let mut p = Vec::with_capacity(dim);
        p.extend_from_slice(&x);
        p.extend_from_slice(&z);
        let mut g_ext = vec![0.0; dim];
        self.sys.extended_g(alpha, &p, &mut g_ext);
        Ok(jac.mul_vec(&g_ext))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::halton_point;
    use crate::sysmodel::parse_system;

    fn toy_chart() -> FlowBoxChart {
        let sys = Arc::new(
            parse_system("n=1; m=1; l=1\nf = x1 * v1\ng1 = x1\nU = box(-1,1)\nV = set{0,1}\n")
                .unwrap(),
        );
        FlowBoxChart::new(sys).with_variational_jacobian()
    }

    fn translation_chart() -> FlowBoxChart {
        let sys = Arc::new(parse_system("n=1; m=1; l=0\nf = 0\ng1 = 1\n").unwrap());
        FlowBoxChart::new(sys)
    }

    #[test]
    fn exp_flow_closed_forms() {
        let opts = OdeOptions::with_tol(1e-12);
        // Zero field fixes every point.
        let y = exp_flow(|_, dy| dy.fill(0.0), 1.0, &[0.3, -0.7], &opts).unwrap();
        assert_eq!(y, vec![0.3, -0.7]);
        // Constant field translates.
        let y = exp_flow(
            |_, dy| {
                dy[0] = 1.0;
                dy[1] = 0.0;
            },
            1.0,
            &[0.0, 0.0],
            &opts,
        )
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12 && y[1].abs() < 1e-12);
        // h(x,z) = (-zbar x, -zbar) from (x, zbar) lands on (x e^{-zbar}, 0).
        let (x, zbar) = (1.7, 0.8);
        let y = exp_flow(
            |p, dy| {
                dy[0] = -zbar * p[0];
                dy[1] = -zbar;
            },
            1.0,
            &[x, zbar],
            &opts,
        )
        .unwrap();
        assert!((y[0] - x * (-zbar).exp()).abs() < 1e-10);
        assert!(y[1].abs() < 1e-10);
    }

    #[test]
    fn toy_chart_closed_form() {
        let chart = toy_chart();
        for i in 0..20 {
            let p = halton_point(i, &[-2.0, -1.0], &[2.0, 1.0]);
            let (x, z) = (p[0], p[1]);
            let (xi, zeta) = chart.phi(&[x], &[z]).unwrap();
            assert!((xi[0] - x * (-z).exp()).abs() < 1e-9, "phi closed form");
            assert_eq!(zeta[0], z);
            let (xb, zb) = chart.phi_inverse(&xi, &zeta).unwrap();
            assert!((xb[0] - x).abs() < 1e-8, "round trip");
            assert_eq!(zb[0], z);
            // Inverse closed form.
            assert!((xb[0] - xi[0] * z.exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn chart_at_zero_is_identity() {
        let chart = toy_chart();
        let (xi, zeta) = chart.phi(&[1.3], &[0.0]).unwrap();
        assert_eq!(xi, vec![1.3]);
        assert_eq!(zeta, vec![0.0]);
    }

    #[test]
    fn translation_chart_is_shift() {
        let chart = translation_chart();
        let (xi, _) = chart.phi(&[2.0], &[0.7]).unwrap();
        // g = (1, e1): T_{-z} moves x by -z.
        assert!((xi[0] - (2.0 - 0.7)).abs() < 1e-10);
        let f = chart.pushforward_drift(&xi, &[0.7], &[]).unwrap();
        assert!(f[0].abs() < 1e-10, "zero drift stays zero");
    }

    #[test]
    fn toy_reduced_drift() {
        let chart = toy_chart();
        for i in 0..10 {
            let p = halton_point(i, &[-1.5, -1.0], &[1.5, 1.0]);
            let f = chart.pushforward_drift(&[p[0]], &[p[1]], &[1.0]).unwrap();
            assert!((f[0] - p[0]).abs() < 1e-7, "F(xi, zeta, 1) = xi, got {}", f[0]);
            let f0 = chart.pushforward_drift(&[p[0]], &[p[1]], &[0.0]).unwrap();
            assert!(f0[0].abs() < 1e-9);
        }
    }

    #[test]
    fn toy_impulse_straightened() {
        let chart = toy_chart();
        let g = chart.pushforward_impulse(&[1.0], &[0.0], 0).unwrap();
        assert!((g[0] - 0.0).abs() < 1e-7 && (g[1] - 1.0).abs() < 1e-10);
        for i in 0..20 {
            let p = halton_point(i, &[-2.0, -1.0], &[2.0, 1.0]);
            let g = chart.pushforward_impulse(&[p[0]], &[p[1]], 0).unwrap();
            assert!(g[0].abs() < 1e-6 && (g[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_impulse_fields_give_identity_chart() {
        // g = 0: the extended fields translate only the z block, the chart
        // is the identity on x, and the reduced drift is the drift itself.
        let sys = Arc::new(parse_system("n=1; m=1; l=0\nf = sin(x1)\ng1 = 0\n").unwrap());
        let chart = FlowBoxChart::new(sys).with_variational_jacobian();
        let (xi, zeta) = chart.phi(&[0.7], &[0.4]).unwrap();
        assert!((xi[0] - 0.7).abs() < 1e-12);
        assert_eq!(zeta, vec![0.4]);
        let f = chart.pushforward_drift(&[0.7], &[0.4], &[]).unwrap();
        assert!((f[0] - 0.7f64.sin()).abs() < 1e-10);
        let g = chart.pushforward_impulse(&[0.7], &[0.4], 0).unwrap();
        assert!(g[0].abs() < 1e-10 && (g[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn flow_escape_reported() {
        // Quadratic drift blows up in finite time; the guard reports it.
        let sys = Arc::new(parse_system("n=1; m=1; l=0\nf = x1 ^ 2\ng1 = 1\n").unwrap());
        let chart = FlowBoxChart::new(sys).with_working_radius(10.0);
        let err = crate::solver::pd_solution(
            &chart,
            &[5.0],
            &crate::signal::ControlSignal::constant(0.0, 2.0, vec![0.0]),
            &crate::signal::ControlSignal::constant(0.0, 2.0, vec![]),
            &[0.0, 2.0],
        )
        .unwrap_err();
        let text = format!("{err}");
        assert!(
            text.contains("escaped") || text.contains("underflow") || text.contains("non-finite"),
            "{text}"
        );
    }

    #[test]
    fn fd_and_variational_jacobians_agree() {
        let sys = Arc::new(
            parse_system("n=2; m=1; l=1\nf = (x2, -x1 + v1)\ng1 = (0, x1)\nV = box(-1, 1)\n")
                .unwrap(),
        );
        let fd = FlowBoxChart::new(sys.clone()).with_tol(1e-12);
        let vr = FlowBoxChart::new(sys).with_tol(1e-12).with_variational_jacobian();
        let (x, z) = (vec![0.7, -0.3], vec![0.4]);
        let jf = fd.d_phi(&x, &z).unwrap();
        let jv = vr.d_phi(&x, &z).unwrap();
        for (a, b) in jf.data.iter().zip(&jv.data) {
            assert!((a - b).abs() < 1e-5, "fd {a} vs variational {b}");
        }
    }
}
