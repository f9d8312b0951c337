//! Compactified Hamiltonian and the grid solver for the
//! variation-budgeted value function `W(t, x, u, k)`.
//!
//! The pre-Hamiltonian is linear in the speeds `(w0, w)` on the simplex
//! `{w0 >= 0, w0 + sum_a |w_a| <= 1}` (1-norm on `w`), so its supremum sits
//! at an extreme point: rest, pure drift, or a single impulse direction.
//! The grid solver mirrors that structure as a semi-Lagrangian scheme: a
//! drift step that interpolates the next time slice along `x + dt f`, and a
//! within-slice impulse relaxation that steps one `u` grid cell at a time
//! while consuming the same amount of variation budget `k`.

use rayon::prelude::*;
use thiserror::Error;

use crate::mayer::MayerProblem;
use crate::sysmodel::ControlAffineSystem;

#[derive(Debug, Error)]
pub enum HjbError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("impulse relaxation did not converge in slice {slice} after {iters} iterations")]
    NonConvergent { slice: usize, iters: usize },
}

/// Costate of the compactified Hamiltonian.
#[derive(Debug, Clone)]
pub struct Costate {
    pub p_t: f64,
    pub p_x: Vec<f64>,
    pub p_u: Vec<f64>,
    pub p_k: f64,
}

/// The pre-Hamiltonian
/// `(p_t + p_x . f) w0 + sum_a (p_x . g_a + p_{u_a}) w_a + p_k sum_a |w_a|`.
/// `t` and `k` do not enter the autonomous fields; they stay in the
/// signature because the costate lives over the full `(t, x, u, k)` space.
#[allow(clippy::too_many_arguments)]
pub fn pre_hamiltonian(
    sys: &ControlAffineSystem,
    _t: f64,
    x: &[f64],
    u: &[f64],
    _k: f64,
    p: &Costate,
    w0: f64,
    w: &[f64],
    v: &[f64],
) -> f64 {
    debug_assert!(w0 >= 0.0);
    let n = sys.n();
    let mut fbuf = vec![0.0; n];
    sys.f_tilde(x, u, v, &mut fbuf);
    let a: f64 = p.p_t + p.p_x.iter().zip(&fbuf).map(|(p, f)| p * f).sum::<f64>();
    let mut val = a * w0;
    let mut gbuf = vec![0.0; n];
    for (alpha, &wa) in w.iter().enumerate() {
        if wa != 0.0 {
            sys.g_tilde(alpha, x, u, &mut gbuf);
            let b: f64 =
                p.p_x.iter().zip(&gbuf).map(|(p, g)| p * g).sum::<f64>() + p.p_u[alpha];
            val += b * wa;
        }
    }
    val += p.p_k * w.iter().map(|wa| wa.abs()).sum::<f64>();
    val
}

/// A maximizer of the pre-Hamiltonian over the speed simplex and `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianArgmax {
    pub w0: f64,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

/// Supremum of the pre-Hamiltonian over `{w0 + |w|_1 <= 1, w0 >= 0}` and
/// the sampled ordinary-control set: the max of `0`, `A(v)` and
/// `+-B_a(v) + p_k` over the extreme points. Ties break toward rest, then
/// drift, then lower impulse index with the positive sign, then the earlier
/// `v` sample.
pub fn hamiltonian(
    sys: &ControlAffineSystem,
    t: f64,
    x: &[f64],
    u: &[f64],
    k: f64,
    p: &Costate,
    v_per_axis: usize,
) -> (f64, HamiltonianArgmax) {
    let _ = (t, k);
    let n = sys.n();
    let m = sys.m();
    let v_samples = sys.v_set.samples(v_per_axis);
    let mut fbuf = vec![0.0; n];
    let mut gbuf = vec![0.0; n];

    let mut best = 0.0f64;
    let mut arg = HamiltonianArgmax { w0: 0.0, w: vec![0.0; m], v: v_samples[0].clone() };
    for v in &v_samples {
        sys.f_tilde(x, u, v, &mut fbuf);
        let a: f64 = p.p_t + p.p_x.iter().zip(&fbuf).map(|(p, f)| p * f).sum::<f64>();
        if a > best {
            best = a;
            arg = HamiltonianArgmax { w0: 1.0, w: vec![0.0; m], v: v.clone() };
        }
        for alpha in 0..m {
            sys.g_tilde(alpha, x, u, &mut gbuf);
            let b: f64 =
                p.p_x.iter().zip(&gbuf).map(|(p, g)| p * g).sum::<f64>() + p.p_u[alpha];
            for sgn in [1.0, -1.0] {
                let cand = sgn * b + p.p_k;
                if cand > best {
                    best = cand;
                    let mut w = vec![0.0; m];
                    w[alpha] = sgn;
                    arg = HamiltonianArgmax { w0: 0.0, w, v: v.clone() };
                }
            }
        }
    }
    (best, arg)
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub nx: Vec<usize>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub nu: Vec<usize>,
    pub nt: usize,
    /// Ordinary-control samples per axis (boxes only; finite sets are
    /// enumerated).
    pub v_per_axis: usize,
    pub tol_sweep: f64,
    pub max_relax_iters: usize,
}

impl GridSpec {
    pub fn uniform(
        x_lo: Vec<f64>,
        x_hi: Vec<f64>,
        nx_per_axis: usize,
        u_lo: Vec<f64>,
        u_hi: Vec<f64>,
        nu_per_axis: usize,
        nt: usize,
    ) -> Self {
        let nx = vec![nx_per_axis; x_lo.len()];
        let nu = vec![nu_per_axis; u_lo.len()];
        GridSpec {
            x_lo,
            x_hi,
            nx,
            u_lo,
            u_hi,
            nu,
            nt,
            v_per_axis: 3,
            tol_sweep: 1e-10,
            max_relax_iters: 10_000,
        }
    }

    /// Double the resolution of every axis (step halves; counts 2n-1).
    pub fn refined(&self) -> Self {
        GridSpec {
            x_lo: self.x_lo.clone(),
            x_hi: self.x_hi.clone(),
            nx: self.nx.iter().map(|n| 2 * n - 1).collect(),
            u_lo: self.u_lo.clone(),
            u_hi: self.u_hi.clone(),
            nu: self.nu.iter().map(|n| 2 * n - 1).collect(),
            nt: 2 * self.nt - 1,
            v_per_axis: self.v_per_axis,
            tol_sweep: self.tol_sweep,
            max_relax_iters: self.max_relax_iters,
        }
    }
}

struct Axis {
    lo: f64,
    step: f64,
    count: usize,
}

impl Axis {
    fn at(&self, i: usize) -> f64 {
        self.lo + self.step * i as f64
    }
}

/// Geometry shared by the sweep and the exported grid.
struct Geom {
    x_axes: Vec<Axis>,
    u_axes: Vec<Axis>,
    nxt: usize,
    nut: usize,
    nk: usize,
    dk: f64,
    dt: f64,
    nt: usize,
}

impl Geom {
    fn build(problem: &MayerProblem, k_cap: f64, spec: &GridSpec) -> Result<Geom, HjbError> {
        let n = problem.sys.n();
        let m = problem.sys.m();
        if spec.x_lo.len() != n || spec.u_lo.len() != m {
            return Err(HjbError::Invalid("grid axes do not match the system dims".into()));
        }
        if spec.nx.iter().chain(&spec.nu).any(|&c| c < 2) || spec.nt < 2 {
            return Err(HjbError::Invalid("every grid axis needs at least two nodes".into()));
        }
        let x_axes: Vec<Axis> = (0..n)
            .map(|i| Axis {
                lo: spec.x_lo[i],
                step: (spec.x_hi[i] - spec.x_lo[i]) / (spec.nx[i] - 1) as f64,
                count: spec.nx[i],
            })
            .collect();
        let u_axes: Vec<Axis> = (0..m)
            .map(|i| Axis {
                lo: spec.u_lo[i],
                step: (spec.u_hi[i] - spec.u_lo[i]) / (spec.nu[i] - 1) as f64,
                count: spec.nu[i],
            })
            .collect();
        let du = u_axes[0].step;
        for ax in &u_axes {
            if (ax.step - du).abs() > 1e-12 * du.abs() {
                return Err(HjbError::Invalid(
                    "the impulse step couples the k axis to the u axes; all u axes must share one spacing"
                        .into(),
                ));
            }
        }
        if k_cap < 0.0 {
            return Err(HjbError::Invalid("variation cap must be nonnegative".into()));
        }
        let nk = (k_cap / du + 1e-9).floor() as usize + 1;
        let nxt = x_axes.iter().map(|a| a.count).product();
        let nut = u_axes.iter().map(|a| a.count).product();
        Ok(Geom {
            x_axes,
            u_axes,
            nxt,
            nut,
            nk,
            dk: du,
            dt: (problem.b - problem.a) / (spec.nt - 1) as f64,
            nt: spec.nt,
        })
    }

    fn slice_len(&self) -> usize {
        self.nxt * self.nut * self.nk
    }

    #[inline]
    fn node_index(&self, x_lex: usize, u_lex: usize, k_idx: usize) -> usize {
        (x_lex * self.nut + u_lex) * self.nk + k_idx
    }

    fn x_point(&self, mut lex: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.x_axes.len()];
        for (i, ax) in self.x_axes.iter().enumerate().rev() {
            out[i] = ax.at(lex % ax.count);
            lex /= ax.count;
        }
        out
    }

    fn u_point(&self, mut lex: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.u_axes.len()];
        for (i, ax) in self.u_axes.iter().enumerate().rev() {
            out[i] = ax.at(lex % ax.count);
            lex /= ax.count;
        }
        out
    }

    fn u_lex_components(&self, mut lex: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.u_axes.len()];
        for (i, ax) in self.u_axes.iter().enumerate().rev() {
            out[i] = lex % ax.count;
            lex /= ax.count;
        }
        out
    }

    fn u_lex_from_components(&self, comps: &[usize]) -> usize {
        let mut lex = 0usize;
        for (c, ax) in comps.iter().zip(&self.u_axes) {
            lex = lex * ax.count + c;
        }
        lex
    }

    /// Multilinear interpolation stencil over the x axes, clamped to the
    /// box. Returns (corner x-lex, weight) pairs and whether clamping was
    /// needed.
    fn x_stencil(&self, point: &[f64]) -> (Vec<(usize, f64)>, bool) {
        let nd = self.x_axes.len();
        let mut base = vec![0usize; nd];
        let mut frac = vec![0.0f64; nd];
        let mut clamped = false;
        for (i, ax) in self.x_axes.iter().enumerate() {
            let mut c = (point[i] - ax.lo) / ax.step;
            if c < 0.0 {
                c = 0.0;
                clamped = true;
            }
            let max_c = (ax.count - 1) as f64;
            if c > max_c {
                c = max_c;
                clamped = true;
            }
            let f = c.floor().min(max_c - 1.0).max(0.0);
            base[i] = f as usize;
            frac[i] = (c - f).clamp(0.0, 1.0);
        }
        let corners = 1usize << nd;
        let mut out = Vec::with_capacity(corners);
        for mask in 0..corners {
            let mut w = 1.0f64;
            let mut lex = 0usize;
            for i in 0..nd {
                let hi = (mask >> i) & 1 == 1;
                w *= if hi { frac[i] } else { 1.0 - frac[i] };
                let idx = base[i] + if hi { 1 } else { 0 };
                lex = lex * self.x_axes[i].count + idx.min(self.x_axes[i].count - 1);
            }
            if w != 0.0 {
                out.push((lex, w));
            }
        }
        (out, clamped)
    }
}

/// Value grid with axes and the full `[t][x][u][k]` sample array.
pub struct ValueGrid {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub nx: Vec<usize>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub nu: Vec<usize>,
    pub nt: usize,
    pub nk: usize,
    pub a: f64,
    pub b: f64,
    pub k_cap: f64,
    pub values: Vec<f64>,
}

impl ValueGrid {
    fn slice_len(&self) -> usize {
        let nxt: usize = self.nx.iter().product();
        let nut: usize = self.nu.iter().product();
        nxt * nut * self.nk
    }

    pub fn value(&self, t_idx: usize, x_lex: usize, u_lex: usize, k_idx: usize) -> f64 {
        let nut: usize = self.nu.iter().product();
        self.values[t_idx * self.slice_len() + (x_lex * nut + u_lex) * self.nk + k_idx]
    }

    /// Binary export: little-endian, header then `[t][x][u][k]` f64 values.
    ///
    /// Header: magic `IMPWGRID`, u32 version (1), u32 n, u32 m, u32 nt,
    /// u32 nk, f64 a, f64 b, f64 k_cap, then per x axis (f64 lo, f64 hi,
    /// u32 count) and per u axis the same.
    pub fn write_binary<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(b"IMPWGRID")?;
        for v in [1u32, self.nx.len() as u32, self.nu.len() as u32, self.nt as u32, self.nk as u32]
        {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in [self.a, self.b, self.k_cap] {
            out.write_all(&v.to_le_bytes())?;
        }
        for i in 0..self.nx.len() {
            out.write_all(&self.x_lo[i].to_le_bytes())?;
            out.write_all(&self.x_hi[i].to_le_bytes())?;
            out.write_all(&(self.nx[i] as u32).to_le_bytes())?;
        }
        for i in 0..self.nu.len() {
            out.write_all(&self.u_lo[i].to_le_bytes())?;
            out.write_all(&self.u_hi[i].to_le_bytes())?;
            out.write_all(&(self.nu[i] as u32).to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// CSV slice at fixed time and budget indices: `x1..xn,u1..um,w`.
    pub fn write_slice_csv<W: std::io::Write>(
        &self,
        t_idx: usize,
        k_idx: usize,
        out: &mut W,
    ) -> std::io::Result<()> {
        let n = self.nx.len();
        let m = self.nu.len();
        let mut header = Vec::new();
        for i in 1..=n {
            header.push(format!("x{i}"));
        }
        for i in 1..=m {
            header.push(format!("u{i}"));
        }
        header.push("w".to_string());
        writeln!(out, "{}", header.join(","))?;
        let nxt: usize = self.nx.iter().product();
        let nut: usize = self.nu.iter().product();
        let point = |mut lex: usize, lo: &[f64], hi: &[f64], counts: &[usize]| -> Vec<f64> {
            let mut out = vec![0.0; counts.len()];
            for i in (0..counts.len()).rev() {
                let step = (hi[i] - lo[i]) / (counts[i] - 1) as f64;
                out[i] = lo[i] + step * (lex % counts[i]) as f64;
                lex /= counts[i];
            }
            out
        };
        for x_lex in 0..nxt {
            let xp = point(x_lex, &self.x_lo, &self.x_hi, &self.nx);
            for u_lex in 0..nut {
                let up = point(u_lex, &self.u_lo, &self.u_hi, &self.nu);
                let mut cells: Vec<String> =
                    xp.iter().chain(up.iter()).map(|v| crate::io::fmt_f64(*v)).collect();
                cells.push(crate::io::fmt_f64(self.value(t_idx, x_lex, u_lex, k_idx)));
                writeln!(out, "{}", cells.join(","))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct SweepStats {
    pub relax_iters_total: usize,
    pub max_relax_iters_in_slice: usize,
    pub clamped_lookups: usize,
    pub monotone_in_k_ok: bool,
    pub relax_monotone_ok: bool,
}

struct Stencil {
    corners: Vec<(usize, f64)>,
}

/// Streaming backward sweep. Calls `sink(t_idx, slice)` for every time
/// index from `nt - 1` down to `0`; the terminal slice passed to the sink
/// is the raw cost (terminal impulses enter the recursion but not the
/// stored terminal condition). Returns the `t = a` slice and statistics.
fn sweep<F>(
    problem: &MayerProblem,
    k_cap: f64,
    spec: &GridSpec,
    mut sink: F,
) -> Result<(Geom, Vec<f64>, SweepStats), HjbError>
where
    F: FnMut(usize, &[f64]),
{
    let geom = Geom::build(problem, k_cap, spec)?;
    let sys = &problem.sys;
    let n = sys.n();
    let m = sys.m();
    let v_samples = sys.v_set.samples(spec.v_per_axis);
    let nv = v_samples.len();
    let mut stats = SweepStats { monotone_in_k_ok: true, relax_monotone_ok: true, ..Default::default() };

    // Cached node coordinates.
    let x_points: Vec<Vec<f64>> = (0..geom.nxt).map(|lex| geom.x_point(lex)).collect();
    let u_points: Vec<Vec<f64>> = (0..geom.nut).map(|lex| geom.u_point(lex)).collect();

    // Terminal cost per (x, u).
    let psi: Vec<f64> = (0..geom.nxt * geom.nut)
        .map(|i| problem.cost(&x_points[i / geom.nut], &u_points[i % geom.nut]))
        .collect();

    // Drift stencils, time-independent: (x, u, v) -> interp at x + dt f.
    let mut fbuf = vec![0.0; n];
    let mut drift: Vec<Stencil> = Vec::with_capacity(geom.nxt * geom.nut * nv);
    let mut clamped = 0usize;
    for x_lex in 0..geom.nxt {
        for u_lex in 0..geom.nut {
            for v in &v_samples {
                sys.f_tilde(&x_points[x_lex], &u_points[u_lex], v, &mut fbuf);
                let target: Vec<f64> = x_points[x_lex]
                    .iter()
                    .zip(&fbuf)
                    .map(|(x, f)| x + geom.dt * f)
                    .collect();
                let (corners, cl) = geom.x_stencil(&target);
                if cl {
                    clamped += 1;
                }
                drift.push(Stencil { corners });
            }
        }
    }

    // Impulse stencils: (x, u, alpha, sigma) -> (target u lex, interp at
    // x + du sigma g_a), or None when the move leaves the u box.
    let mut gbuf = vec![0.0; n];
    let mut impulse: Vec<Option<(usize, Stencil)>> =
        Vec::with_capacity(geom.nxt * geom.nut * m * 2);
    for x_lex in 0..geom.nxt {
        for u_lex in 0..geom.nut {
            let u_comps = geom.u_lex_components(u_lex);
            for alpha in 0..m {
                for (si, sgn) in [1.0f64, -1.0].iter().enumerate() {
                    let _ = si;
                    let mut comps = u_comps.clone();
                    let ok = if *sgn > 0.0 {
                        if comps[alpha] + 1 < geom.u_axes[alpha].count {
                            comps[alpha] += 1;
                            true
                        } else {
                            false
                        }
                    } else if comps[alpha] > 0 {
                        comps[alpha] -= 1;
                        true
                    } else {
                        false
                    };
                    if !ok {
                        impulse.push(None);
                        continue;
                    }
                    sys.g_tilde(alpha, &x_points[x_lex], &u_points[u_lex], &mut gbuf);
                    let target: Vec<f64> = x_points[x_lex]
                        .iter()
                        .zip(&gbuf)
                        .map(|(x, g)| x + geom.dk * sgn * g)
                        .collect();
                    let (corners, cl) = geom.x_stencil(&target);
                    if cl {
                        clamped += 1;
                    }
                    impulse.push(Some((geom.u_lex_from_components(&comps), Stencil { corners })));
                }
            }
        }
    }
    stats.clamped_lookups = clamped;

    let slice_len = geom.slice_len();
    let relax = |slice: &mut Vec<f64>,
                 stats: &mut SweepStats,
                 slice_no: usize|
     -> Result<(), HjbError> {
        let mut iters = 0usize;
        loop {
            iters += 1;
            if iters > spec.max_relax_iters {
                return Err(HjbError::NonConvergent { slice: slice_no, iters });
            }
            let old = slice.clone();
            let max_change: f64 = slice
                .par_iter_mut()
                .enumerate()
                .map(|(idx, w)| {
                    let k_idx = idx % geom.nk;
                    if k_idx + 1 >= geom.nk {
                        return 0.0;
                    }
                    let xu = idx / geom.nk;
                    let (x_lex, u_lex) = (xu / geom.nut, xu % geom.nut);
                    let mut best = *w;
                    let base = (x_lex * geom.nut + u_lex) * m * 2;
                    for j in 0..m * 2 {
                        if let Some((u_target, st)) = &impulse[base + j] {
                            let mut val = 0.0;
                            for (corner, wt) in &st.corners {
                                val += wt
                                    * old[(corner * geom.nut + u_target) * geom.nk + k_idx + 1];
                            }
                            if val < best {
                                best = val;
                            }
                        }
                    }
                    let change = *w - best;
                    *w = best;
                    change
                })
                .reduce(|| 0.0, f64::max);
            if max_change < 0.0 {
                stats.relax_monotone_ok = false;
            }
            if max_change <= spec.tol_sweep {
                break;
            }
        }
        stats.relax_iters_total += iters;
        stats.max_relax_iters_in_slice = stats.max_relax_iters_in_slice.max(iters);
        Ok(())
    };

    let check_k_monotone = |slice: &[f64], stats: &mut SweepStats| {
        let ok = (0..geom.nxt * geom.nut).into_par_iter().all(|xu| {
            (0..geom.nk - 1)
                .all(|k| slice[xu * geom.nk + k] <= slice[xu * geom.nk + k + 1] + 1e-9)
        });
        if !ok {
            stats.monotone_in_k_ok = false;
        }
    };

    // Terminal slice: psi replicated over k, reported raw, then relaxed to
    // seed the recursion (jumps at the final time are admissible).
    let mut terminal = vec![0.0f64; slice_len];
    for xu in 0..geom.nxt * geom.nut {
        for k_idx in 0..geom.nk {
            terminal[xu * geom.nk + k_idx] = psi[xu];
        }
    }
    sink(geom.nt - 1, &terminal);
    relax(&mut terminal, &mut stats, geom.nt - 1)?;
    check_k_monotone(&terminal, &mut stats);

    let mut next = terminal;
    let mut current = vec![0.0f64; slice_len];
    for t_idx in (0..geom.nt - 1).rev() {
        current
            .par_iter_mut()
            .enumerate()
            .for_each(|(idx, w)| {
                let k_idx = idx % geom.nk;
                let xu = idx / geom.nk;
                let base = xu * nv;
                let mut best = f64::INFINITY;
                for vi in 0..nv {
                    let mut val = 0.0;
                    for (corner, wt) in &drift[base + vi].corners {
                        let u_lex = xu % geom.nut;
                        val += wt * next[(corner * geom.nut + u_lex) * geom.nk + k_idx];
                    }
                    if val < best {
                        best = val;
                    }
                }
                *w = best;
            });
        relax(&mut current, &mut stats, t_idx)?;
        check_k_monotone(&current, &mut stats);
        sink(t_idx, &current);
        std::mem::swap(&mut next, &mut current);
    }
    Ok((geom, next, stats))
}

/// Solve the grid boundary-value problem and keep every time slice.
pub fn solve_w(
    problem: &MayerProblem,
    k_cap: f64,
    spec: &GridSpec,
) -> Result<(ValueGrid, SweepStats), HjbError> {
    let geom_probe = Geom::build(problem, k_cap, spec)?;
    let slice_len = geom_probe.slice_len();
    let mut values = vec![0.0f64; spec.nt * slice_len];
    let (geom, _, stats) = sweep(problem, k_cap, spec, |t_idx, slice| {
        values[t_idx * slice_len..(t_idx + 1) * slice_len].copy_from_slice(slice);
    })?;
    Ok((
        ValueGrid {
            x_lo: spec.x_lo.clone(),
            x_hi: spec.x_hi.clone(),
            nx: spec.nx.clone(),
            u_lo: spec.u_lo.clone(),
            u_hi: spec.u_hi.clone(),
            nu: spec.nu.clone(),
            nt: spec.nt,
            nk: geom.nk,
            a: problem.a,
            b: problem.b,
            k_cap,
            values,
        },
        stats,
    ))
}

/// Value at `(t = a, x, u, k = 0)` by multilinear interpolation over the
/// initial slice, without storing the full grid.
pub fn w_at_initial(
    problem: &MayerProblem,
    k_cap: f64,
    spec: &GridSpec,
    x: &[f64],
    u: &[f64],
) -> Result<(f64, SweepStats), HjbError> {
    let (geom, slice, stats) = sweep(problem, k_cap, spec, |_, _| {})?;
    // Interpolate over x and u; k = 0 is a grid plane.
    let (x_st, _) = geom.x_stencil(x);
    // u stencil via the same machinery on the u axes.
    let nd = geom.u_axes.len();
    let mut base = vec![0usize; nd];
    let mut frac = vec![0.0f64; nd];
    for (i, ax) in geom.u_axes.iter().enumerate() {
        let c = ((u[i] - ax.lo) / ax.step).clamp(0.0, (ax.count - 1) as f64);
        let f = c.floor().min((ax.count - 2) as f64).max(0.0);
        base[i] = f as usize;
        frac[i] = (c - f).clamp(0.0, 1.0);
    }
    let mut val = 0.0;
    for mask in 0..(1usize << nd) {
        let mut w = 1.0;
        let mut comps = vec![0usize; nd];
        for i in 0..nd {
            let hi = (mask >> i) & 1 == 1;
            w *= if hi { frac[i] } else { 1.0 - frac[i] };
            comps[i] = (base[i] + if hi { 1 } else { 0 }).min(geom.u_axes[i].count - 1);
        }
        if w == 0.0 {
            continue;
        }
        let u_lex = geom.u_lex_from_components(&comps);
        for (x_corner, xw) in &x_st {
            val += w * xw * slice[geom.node_index(*x_corner, u_lex, 0)];
        }
    }
    Ok((val, stats))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CrossValReport {
    pub w_values: Vec<f64>,
    pub v_hat: f64,
    pub diffs: Vec<f64>,
    pub shrinking: bool,
    pub final_diff: f64,
}

/// Compare the grid value `W(a, x0, u0, 0)` with the direct search estimate
/// of the budget-`K` value over several grid refinements.
pub fn crossvalidate_w(
    problem: &MayerProblem,
    k_cap: f64,
    base: &GridSpec,
    levels: usize,
    search: &crate::mayer::SearchOptions,
) -> Result<CrossValReport, HjbError> {
    let param =
        crate::mayer::Parameterization::new(crate::mayer::ControlClass::UK, Some(k_cap));
    let v_hat = crate::mayer::estimate_value(problem, &param, search)
        .map_err(|e| HjbError::Invalid(format!("search failed: {e}")))?
        .best_value;
    let mut spec = base.clone();
    let mut w_values = Vec::new();
    let mut diffs = Vec::new();
    for _ in 0..levels {
        let (w, _) = w_at_initial(problem, k_cap, &spec, &problem.x0, &problem.u0)?;
        w_values.push(w);
        diffs.push((w - v_hat).abs());
        spec = spec.refined();
    }
    let shrinking = diffs.windows(2).all(|d| d[1] <= d[0] + 1e-12);
    Ok(CrossValReport {
        final_diff: *diffs.last().unwrap(),
        w_values,
        v_hat,
        diffs,
        shrinking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_scalar, Scope};
    use crate::presets;
    use std::sync::Arc;

    fn toy_problem() -> MayerProblem {
        MayerProblem {
            sys: Arc::new(presets::toy_system()),
            psi: parse_scalar("x1 ^ 2", &Scope::state_control(1, 1), 1, 1).unwrap(),
            x0: vec![1.0],
            u0: vec![1.0],
            a: 0.0,
            b: 1.0,
        }
    }

    #[test]
    fn pre_hamiltonian_hand_values() {
        let sys = presets::translation_system();
        // n = m = 1, f = 0, g = 1: with p_x = 1, w = 1, w0 = 0 the value is 1.
        let p = Costate { p_t: 0.0, p_x: vec![1.0], p_u: vec![0.0], p_k: 0.0 };
        let val = pre_hamiltonian(&sys, 0.0, &[0.3], &[0.1], 0.0, &p, 0.0, &[1.0], &[]);
        assert_eq!(val, 1.0);
        let zero = Costate { p_t: 0.0, p_x: vec![0.0], p_u: vec![0.0], p_k: 0.0 };
        let val = pre_hamiltonian(&sys, 0.0, &[0.3], &[0.1], 0.0, &zero, 0.7, &[0.2], &[]);
        assert_eq!(val, 0.0);
        // Toy drift term: p_x f = 1 * (x v) at x = 1, v = 1.
        let toy = presets::toy_system();
        let p = Costate { p_t: 0.0, p_x: vec![1.0], p_u: vec![0.0], p_k: 0.0 };
        let val = pre_hamiltonian(&toy, 0.0, &[1.0], &[0.0], 0.0, &p, 1.0, &[0.0], &[1.0]);
        assert_eq!(val, 1.0);
    }

    #[test]
    fn hamiltonian_extreme_points() {
        let sys = presets::translation_system();
        let zero = Costate { p_t: 0.0, p_x: vec![0.0], p_u: vec![0.0], p_k: 0.0 };
        let (v, arg) = hamiltonian(&sys, 0.0, &[0.0], &[0.0], 0.0, &zero, 3);
        assert_eq!(v, 0.0);
        assert_eq!(arg.w0, 0.0);
        assert!(arg.w.iter().all(|w| *w == 0.0));
        // A = 2 via p_t = 2, all B = 0: drift wins.
        let p = Costate { p_t: 2.0, p_x: vec![0.0], p_u: vec![0.0], p_k: 0.0 };
        let (v, arg) = hamiltonian(&sys, 0.0, &[0.0], &[0.0], 0.0, &p, 3);
        assert_eq!(v, 2.0);
        assert_eq!(arg.w0, 1.0);
        // A = 0, B = 1, p_k = -3: impulse candidate is negative, rest wins.
        let p = Costate { p_t: 0.0, p_x: vec![1.0], p_u: vec![0.0], p_k: -3.0 };
        let (v, arg) = hamiltonian(&sys, 0.0, &[0.0], &[0.0], 0.0, &p, 3);
        assert_eq!(v, 0.0);
        assert_eq!(arg.w0, 0.0);
    }

    #[test]
    fn hamiltonian_matches_brute_force_two_channels() {
        let sys = presets::two_impulse_system();
        let mut rng = crate::rng::stream(9, 33);
        for _ in 0..10 {
            let p = Costate {
                p_t: crate::rng::uniform_in(&mut rng, &[-2.0], &[2.0])[0],
                p_x: crate::rng::uniform_in(&mut rng, &[-2.0], &[2.0]),
                p_u: crate::rng::uniform_in(&mut rng, &[-2.0, -2.0], &[2.0, 2.0]),
                p_k: crate::rng::uniform_in(&mut rng, &[-2.0], &[2.0])[0],
            };
            let x = crate::rng::uniform_in(&mut rng, &[-1.5], &[1.5]);
            let u = crate::rng::uniform_in(&mut rng, &[-1.0, -1.0], &[1.0, 1.0]);
            let (h, _) = hamiltonian(&sys, 0.0, &x, &u, 0.0, &p, 1);
            // Dense grid over {w0 >= 0, w0 + |w1| + |w2| <= 1}, vertices
            // included.
            let mut brute = f64::NEG_INFINITY;
            let g = 20;
            for i0 in 0..=g {
                let w0 = i0 as f64 / g as f64;
                let rest = 1.0 - w0;
                for i1 in 0..=g {
                    let w1 = -rest + 2.0 * rest * i1 as f64 / g as f64;
                    let r2 = rest - w1.abs();
                    for i2 in 0..=g {
                        let w2 = -r2 + 2.0 * r2 * i2 as f64 / g as f64;
                        let val =
                            pre_hamiltonian(&sys, 0.0, &x, &u, 0.0, &p, w0, &[w1, w2], &[]);
                        if val > brute {
                            brute = val;
                        }
                    }
                }
            }
            assert!((h - brute).abs() <= 1e-9, "H {h} vs brute {brute}");
        }
    }

    #[test]
    fn hamiltonian_positive_homogeneity() {
        let sys = presets::toy_system();
        let mut rng = crate::rng::stream(5, 31);
        for _ in 0..100 {
            let p = Costate {
                p_t: crate::rng::uniform_in(&mut rng, &[-2.0], &[2.0])[0],
                p_x: crate::rng::uniform_in(&mut rng, &[-2.0], &[2.0]),
                p_u: crate::rng::uniform_in(&mut rng, &[-2.0], &[2.0]),
                p_k: crate::rng::uniform_in(&mut rng, &[-2.0], &[2.0])[0],
            };
            let x = crate::rng::uniform_in(&mut rng, &[-1.5], &[1.5]);
            let u = crate::rng::uniform_in(&mut rng, &[-1.0], &[1.0]);
            let (h1, _) = hamiltonian(&sys, 0.0, &x, &u, 0.0, &p, 3);
            for lambda in [2.0, 10.0] {
                let ps = Costate {
                    p_t: lambda * p.p_t,
                    p_x: p.p_x.iter().map(|v| lambda * v).collect(),
                    p_u: p.p_u.iter().map(|v| lambda * v).collect(),
                    p_k: lambda * p.p_k,
                };
                let (hl, _) = hamiltonian(&sys, 0.0, &x, &u, 0.0, &ps, 3);
                assert!((hl - lambda * h1).abs() <= 1e-12 * (1.0 + hl.abs()));
            }
        }
    }

    #[test]
    fn constant_cost_gives_constant_grid() {
        let mut p = toy_problem();
        p.psi = parse_scalar("2.5", &Scope::state_control(1, 1), 1, 1).unwrap();
        let spec = GridSpec::uniform(vec![0.0], vec![3.0], 11, vec![-1.0], vec![1.0], 11, 6);
        let (grid, stats) = solve_w(&p, 1.0, &spec).unwrap();
        assert!(stats.monotone_in_k_ok);
        for v in &grid.values {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn no_dynamics_keeps_state_cost() {
        // f = 0, g = 0 and a cost independent of u: impulses move u but not
        // x, so W(t, x, u, k) = psi(x) on the nose.
        let sys = Arc::new(
            crate::sysmodel::parse_system("n=1;m=1;l=0\nf = 0\ng1 = 0\nU = box(-1, 1)\n")
                .unwrap(),
        );
        let p = MayerProblem {
            sys,
            psi: parse_scalar("x1 ^ 2", &Scope::state_control(1, 1), 1, 1).unwrap(),
            x0: vec![0.5],
            u0: vec![0.0],
            a: 0.0,
            b: 1.0,
        };
        let spec = GridSpec::uniform(vec![-1.0], vec![1.0], 11, vec![-1.0], vec![1.0], 11, 6);
        let (grid, _) = solve_w(&p, 1.0, &spec).unwrap();
        for x_idx in 0..11 {
            let x = -1.0 + 0.2 * x_idx as f64;
            for u_idx in 0..11 {
                for k_idx in 0..grid.nk {
                    let w = grid.value(0, x_idx, u_idx, k_idx);
                    assert!((w - x * x).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn budget_limited_u_steering() {
        // f = 0, g = 0, psi = u^2: only u moves (freely in direction, one
        // du of budget per du of motion), so W(t, u, k) =
        // (max(0, |u| - (K - k)))^2, exactly on grid nodes.
        let sys = Arc::new(
            crate::sysmodel::parse_system("n=1;m=1;l=0\nf = 0\ng1 = 0\nU = box(-1, 1)\n")
                .unwrap(),
        );
        let p = MayerProblem {
            sys,
            psi: parse_scalar("u1 ^ 2", &Scope::state_control(1, 1), 1, 1).unwrap(),
            x0: vec![0.0],
            u0: vec![1.0],
            a: 0.0,
            b: 1.0,
        };
        let k_cap = 0.5;
        let spec = GridSpec::uniform(vec![-1.0], vec![1.0], 5, vec![-1.0], vec![1.0], 21, 4);
        let (grid, stats) = solve_w(&p, k_cap, &spec).unwrap();
        assert!(stats.monotone_in_k_ok);
        for u_idx in 0..21 {
            let u = -1.0 + 0.1 * u_idx as f64;
            for k_idx in 0..grid.nk {
                let k = 0.1 * k_idx as f64;
                let expect = (u.abs() - (k_cap - k)).max(0.0).powi(2);
                let got = grid.value(0, 2, u_idx, k_idx);
                assert!(
                    (got - expect).abs() < 1e-9,
                    "u = {u}, k = {k}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn toy_grid_value_near_closed_form() {
        let p = toy_problem();
        let spec = GridSpec::uniform(vec![0.0], vec![3.0], 41, vec![-1.0], vec![1.0], 41, 51);
        let (w, stats) = w_at_initial(&p, 2.0, &spec, &[1.0], &[1.0]).unwrap();
        assert!(stats.monotone_in_k_ok);
        assert!(stats.relax_monotone_ok);
        let expect = (-4.0f64).exp();
        assert!((w - expect).abs() < 2e-2, "w = {w}, expect {expect}");
    }

    #[test]
    fn terminal_slice_stores_raw_cost() {
        let p = toy_problem();
        let spec = GridSpec::uniform(vec![0.0], vec![2.0], 9, vec![-1.0], vec![1.0], 9, 4);
        let (grid, _) = solve_w(&p, 1.0, &spec).unwrap();
        for x_idx in 0..9 {
            let x = 0.25 * x_idx as f64;
            for u_idx in 0..9 {
                for k_idx in 0..grid.nk {
                    let w = grid.value(grid.nt - 1, x_idx, u_idx, k_idx);
                    assert!((w - x * x).abs() < 1e-14);
                }
            }
        }
    }
}
