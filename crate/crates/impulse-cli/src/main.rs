//! `impulse` — reproducible experiments on impulsive control systems.
//!
//! Subcommands: `check`, `simulate`, `study`, `optimize`, `hjb`, `reach`.
//! Every run is driven by a single 64-bit seed and writes a manifest next
//! to its outputs. Exit codes: 0 success, 1 failed contract or runtime
//! failure, 2 malformed input.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use impulsive::flowbox::FlowBoxChart;
use impulsive::io::{self, fmt_f64, ControlFileDto};
use impulsive::mayer::{self, ControlClass, Parameterization, SearchOptions};
use impulsive::signal::ControlSignal;
use impulsive::solver;
use impulsive::spacetime;
use impulsive::sysmodel::{check_hypotheses, parse_system, SampleBox};
use impulsive::util::linspace;
use manifest::ManifestBuilder;

#[derive(Parser)]
#[command(name = "impulse", version, about = "Impulsive control system toolkit")]
struct Cli {
    /// Seed for every random draw (overrides the problem file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Integration tolerance (absolute and relative).
    #[arg(long, global = true)]
    ode_tol: Option<f64>,
    /// Directory for outputs and manifests.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads (default: IMPULSE_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a system file and audit commutativity and growth numerically.
    Check {
        system: PathBuf,
        /// Half-width of the sampling box in the extended state space.
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Scaled bracket tolerance.
        #[arg(long, default_value_t = 1e-6)]
        tol_bracket: f64,
    },
    /// Simulate a control file and export the trajectory as CSV.
    Simulate {
        system: PathBuf,
        control: PathBuf,
        /// Initial state, comma separated.
        #[arg(long)]
        x0: String,
        /// `pd` (pointwise-defined) or `direct` (embedded integration,
        /// absolutely continuous controls only).
        #[arg(long, default_value = "pd")]
        method: String,
        #[arg(long, default_value_t = 201)]
        samples: usize,
    },
    /// Convergence and consistency studies.
    Study {
        #[command(subcommand)]
        kind: StudyCmd,
    },
    /// Estimate value functions by derivative-free search.
    Optimize {
        problem: PathBuf,
        /// Run the proper-extension experiment instead of a single class.
        #[arg(long)]
        extension: bool,
        /// Variation budgets for the extension experiment.
        #[arg(long, default_value = "0.5,1,2,4")]
        k_list: String,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Solve the budget-constrained value function on a grid and
    /// cross-validate against direct search.
    Hjb {
        problem: PathBuf,
        /// Variation cap (defaults to the problem's `k`).
        #[arg(long)]
        k: Option<f64>,
        #[arg(long, default_value_t = 41)]
        nx: usize,
        #[arg(long, default_value_t = 41)]
        nu: usize,
        #[arg(long, default_value_t = 51)]
        nt: usize,
        /// State box, comma separated (defaults to x0 +- 2(1 + |x0|)).
        #[arg(long)]
        x_lo: Option<String>,
        #[arg(long)]
        x_hi: Option<String>,
        /// Grid refinement levels for the cross-validation trend.
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long)]
        budget: Option<usize>,
        /// Time index of the exported CSV slice.
        #[arg(long, default_value_t = 0)]
        slice_t: usize,
        /// Budget index of the exported CSV slice.
        #[arg(long, default_value_t = 0)]
        slice_k: usize,
    },
    /// Sample reachable sets and report one-sided Hausdorff distances.
    Reach {
        problem: PathBuf,
        /// Control classes, comma separated (ac, l1, ac_k, u_k, u_k_plus).
        #[arg(long, default_value = "l1,ac")]
        classes: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
}

#[derive(Subcommand)]
enum StudyCmd {
    /// Classical solutions along AC approximants converge to the pointwise
    /// solution.
    Pdlimit {
        system: PathBuf,
        control: PathBuf,
        #[arg(long)]
        x0: String,
        /// Probe time (defaults to the horizon end).
        #[arg(long)]
        t_star: Option<f64>,
        #[arg(long, default_value_t = 1)]
        k_min: u32,
        #[arg(long, default_value_t = 9)]
        k_max: u32,
        #[arg(long, default_value_t = 1e-4)]
        final_tol: f64,
        #[arg(long, default_value_t = 0.9)]
        slope_min: f64,
    },
    /// Strictly increasing reparameterizations approximate bridged ones.
    Density {
        system: PathBuf,
        control: PathBuf,
        #[arg(long)]
        x0: String,
        #[arg(long, default_value_t = 3)]
        slope_from: i32,
        #[arg(long, default_value_t = 10)]
        slope_to: i32,
        #[arg(long, default_value_t = 1e-4)]
        final_tol: f64,
        #[arg(long, default_value_t = 0.9)]
        slope_min: f64,
    },
    /// Pointwise solution vs rectilinear graph completion.
    Equivalence {
        system: PathBuf,
        control: PathBuf,
        #[arg(long)]
        x0: String,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Empirical continuous-dependence constant.
    Lipschitz {
        system: PathBuf,
        /// Optional control file providing the ordinary control.
        control: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = -1.0)]
        k_lo: f64,
        #[arg(long, default_value_t = 1.0)]
        k_hi: f64,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
    },
}

struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn input(msg: impl Into<String>) -> Self {
        CliError { code: 2, msg: msg.into() }
    }

    fn run(msg: impl Into<String>) -> Self {
        CliError { code: 1, msg: msg.into() }
    }
}

impl From<impulsive::sysmodel::DslError> for CliError {
    fn from(e: impulsive::sysmodel::DslError) -> Self {
        CliError::input(format!("system parse error: {e}"))
    }
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        CliError::input(format!("{e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::run(format!("io: {e}"))
    }
}

impl From<solver::SolveError> for CliError {
    fn from(e: solver::SolveError) -> Self {
        CliError::run(format!("simulation failed: {e}"))
    }
}

impl From<spacetime::SpaceTimeError> for CliError {
    fn from(e: spacetime::SpaceTimeError) -> Self {
        CliError::run(format!("{e}"))
    }
}

impl From<mayer::SearchError> for CliError {
    fn from(e: mayer::SearchError) -> Self {
        CliError::run(format!("search failed: {e}"))
    }
}

impl From<impulsive::hjb::HjbError> for CliError {
    fn from(e: impulsive::hjb::HjbError) -> Self {
        CliError::run(format!("{e}"))
    }
}

fn parse_vec(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::input(format!("invalid {what}: `{}`", s.trim())))
        })
        .collect()
}

fn read_system(path: &Path) -> Result<impulsive::sysmodel::ControlAffineSystem, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_system(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value).map_err(|e| CliError::run(e.to_string()))?)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("IMPULSE_THREADS").ok().and_then(|s| s.parse().ok()));
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Err(e) = std::fs::create_dir_all(&cli.out_dir) {
        eprintln!("error: cannot create out dir: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out_dir = cli.out_dir.clone();
    match cli.cmd {
        Cmd::Check { system, radius, samples, tol_bracket } => {
            let seed = cli.seed.unwrap_or(0);
            let ode_tol = cli.ode_tol.unwrap_or(1e-10);
            let mut mb = ManifestBuilder::new("check", seed, ode_tol);
            mb.input(&system);
            mb.tolerance("tol_bracket", tol_bracket);
            let sys = read_system(&system)?;
            let dim = sys.n() + sys.m();
            let report =
                check_hypotheses(&sys, &SampleBox::symmetric(dim, radius), samples, tol_bracket);
            let report_path = out_dir.join("check_report.json");
            write_json(&report_path, &report)?;
            mb.output(&report_path);
            mb.write(&out_dir)?;
            println!("system: n = {}, m = {}, l = {}", sys.n(), sys.m(), sys.l());
            for c in &report.checks {
                println!(
                    "  {:>14}: {}  ({})",
                    c.name,
                    if c.pass { "pass" } else { "FAIL" },
                    c.detail
                );
            }
            if !report.all_pass() {
                if let Some(w) = &report.worst_bracket {
                    return Err(CliError::run(format!(
                        "commutativity fails: [g{}, g{}] has norm {:.3e} at {:?}",
                        w.alpha, w.beta, w.norm, w.point
                    )));
                }
                return Err(CliError::run("hypothesis check failed".to_string()));
            }
            Ok(())
        }

        Cmd::Simulate { system, control, x0, method, samples } => {
            let seed = cli.seed.unwrap_or(0);
            let ode_tol = cli.ode_tol.unwrap_or(1e-10);
            let mut mb = ManifestBuilder::new("simulate", seed, ode_tol);
            mb.input(&system);
            mb.input(&control);
            let sys = Arc::new(read_system(&system)?);
            let dto = ControlFileDto::load(&control)?;
            let (u, v) = dto.signals(sys.l())?;
            let x0 = parse_vec(&x0, "x0")?;
            if x0.len() != sys.n() {
                return Err(CliError::input(format!(
                    "x0 has length {}, system needs {}",
                    x0.len(),
                    sys.n()
                )));
            }
            let chart = FlowBoxChart::new(sys.clone())
                .with_variational_jacobian()
                .with_tol(ode_tol);
            let grid = linspace(u.a, u.b, samples.max(2));
            let traj = match method.as_str() {
                "pd" => solver::pd_solution(&chart, &x0, &u, &v, &grid)?,
                "direct" => solver::project_state(
                    &solver::solve_original_ac(&chart, &x0, &u, &v, &grid)?,
                    sys.n(),
                ),
                other => {
                    return Err(CliError::input(format!(
                        "unknown method `{other}` (use pd | direct)"
                    )))
                }
            };
            let csv_path = out_dir.join("trajectory.csv");
            let mut buf = Vec::new();
            io::write_trajectory_csv(&traj, Some(&u), sys.n(), sys.m(), &mut buf)?;
            std::fs::write(&csv_path, buf)?;
            mb.output(&csv_path);
            mb.write(&out_dir)?;
            let term = traj.terminal();
            println!(
                "simulated {} nodes, {} jumps; x(b) = [{}]",
                traj.times.len(),
                traj.jumps.len(),
                term.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")
            );
            Ok(())
        }

        Cmd::Study { kind } => run_study(kind, &cli.seed, &cli.ode_tol, &out_dir),

        Cmd::Optimize { problem, extension, k_list, budget } => {
            let loaded = io::load_problem(&problem)?;
            let seed = cli.seed.unwrap_or(loaded.seed);
            let budget = budget.unwrap_or(loaded.budget);
            let ode_tol = cli.ode_tol.unwrap_or(1e-8);
            let mut mb = ManifestBuilder::new("optimize", seed, ode_tol);
            mb.input(&problem);
            mb.tolerance("tol_value", mayer::DEFAULT_TOL_VALUE);
            let mut opts = SearchOptions::new(budget, seed);
            opts.ode_tol = ode_tol;
            if extension {
                let ks = parse_vec(&k_list, "k value")?;
                let rep = mayer::proper_extension_check(
                    &loaded.problem,
                    loaded.param.u_pieces,
                    loaded.param.v_pieces,
                    &ks,
                    &opts,
                    mayer::DEFAULT_TOL_VALUE,
                )?;
                println!("V_ac  = {:.6e}", rep.v_ac);
                println!("V_l1  = {:.6e}   (gap {:.2e}, ok = {})", rep.v_l1, rep.ac_l1_gap, rep.ac_l1_ok);
                for (k, v) in rep.k_list.iter().zip(&rep.v_k) {
                    println!("V_bv[K = {k}] = {v:.6e}");
                }
                println!(
                    "monotone = {}, limit gap = {:.2e} (ok = {})",
                    rep.monotone_ok, rep.limit_gap, rep.limit_ok
                );
                let path = out_dir.join("extension_report.json");
                write_json(&path, &rep)?;
                mb.output(&path);
                mb.write(&out_dir)?;
            } else {
                let rep = mayer::estimate_value(&loaded.problem, &loaded.param, &opts)?;
                println!(
                    "class {}: value = {:.8e} after {} evaluations ({} failed)",
                    rep.class.name(),
                    rep.best_value,
                    rep.evals,
                    rep.failures
                );
                let path = out_dir.join("value_report.json");
                write_json(&path, &io::value_report_json(&rep))?;
                mb.output(&path);
                let trace_path = out_dir.join("value_trace.csv");
                let mut buf = String::from("eval,value\n");
                for t in &rep.trace {
                    buf.push_str(&format!("{},{}\n", t.eval, fmt_f64(t.value)));
                }
                std::fs::write(&trace_path, buf)?;
                mb.output(&trace_path);
                mb.write(&out_dir)?;
            }
            Ok(())
        }

        Cmd::Hjb {
            problem,
            k,
            nx,
            nu,
            nt,
            x_lo,
            x_hi,
            levels,
            budget,
            slice_t,
            slice_k,
        } => {
            let loaded = io::load_problem(&problem)?;
            let seed = cli.seed.unwrap_or(loaded.seed);
            let ode_tol = cli.ode_tol.unwrap_or(1e-8);
            let k_cap = k
                .or(loaded.k)
                .ok_or_else(|| CliError::input("hjb needs a variation cap (--k or problem.k)"))?;
            let mut mb = ManifestBuilder::new("hjb", seed, ode_tol);
            mb.input(&problem);
            let sys = &loaded.problem.sys;
            let x_lo = match x_lo {
                Some(s) => parse_vec(&s, "x_lo")?,
                None => loaded.problem.x0.iter().map(|x| x - 2.0 * (1.0 + x.abs())).collect(),
            };
            let x_hi = match x_hi {
                Some(s) => parse_vec(&s, "x_hi")?,
                None => loaded.problem.x0.iter().map(|x| x + 2.0 * (1.0 + x.abs())).collect(),
            };
            let (u_lo, u_hi) = match &sys.u_set {
                impulsive::sysmodel::ImpulseDomain::Box { lo, hi } => (lo.clone(), hi.clone()),
                _ => {
                    return Err(CliError::input(
                        "hjb needs a box impulse domain to build the u grid",
                    ))
                }
            };
            let spec = impulsive::hjb::GridSpec::uniform(x_lo, x_hi, nx, u_lo, u_hi, nu, nt);
            let (grid, stats) = impulsive::hjb::solve_w(&loaded.problem, k_cap, &spec)?;
            let bin_path = out_dir.join("value_grid.bin");
            let mut f = std::fs::File::create(&bin_path)?;
            grid.write_binary(&mut f)?;
            mb.output(&bin_path);
            if slice_t >= grid.nt || slice_k >= grid.nk {
                return Err(CliError::input("slice indices outside the grid"));
            }
            let slice_path = out_dir.join("value_slice.csv");
            let mut buf = Vec::new();
            grid.write_slice_csv(slice_t, slice_k, &mut buf)?;
            std::fs::write(&slice_path, buf)?;
            mb.output(&slice_path);
            let mut opts = SearchOptions::new(budget.unwrap_or(loaded.budget), seed);
            opts.ode_tol = ode_tol;
            let cross =
                impulsive::hjb::crossvalidate_w(&loaded.problem, k_cap, &spec, levels, &opts)?;
            println!(
                "grid {}x{} nodes, {} slices, relax iters total {}",
                grid.nt,
                grid.values.len() / grid.nt,
                grid.nt,
                stats.relax_iters_total
            );
            for (i, (w, d)) in cross.w_values.iter().zip(&cross.diffs).enumerate() {
                println!("level {i}: W(a, x0, u0, 0) = {w:.6e}, |W - V| = {d:.3e}");
            }
            println!(
                "search value {:.6e}; shrinking = {}, final diff = {:.3e}",
                cross.v_hat, cross.shrinking, cross.final_diff
            );
            let path = out_dir.join("hjb_crossval.json");
            write_json(&path, &cross)?;
            mb.output(&path);
            mb.write(&out_dir)?;
            Ok(())
        }

        Cmd::Reach { problem, classes, n } => {
            let loaded = io::load_problem(&problem)?;
            let seed = cli.seed.unwrap_or(loaded.seed);
            let ode_tol = cli.ode_tol.unwrap_or(1e-8);
            let mut mb = ManifestBuilder::new("reach", seed, ode_tol);
            mb.input(&problem);
            let mut clouds = Vec::new();
            for name in classes.split(',') {
                let class = ControlClass::parse(name.trim())
                    .ok_or_else(|| CliError::input(format!("unknown class `{name}`")))?;
                if class.needs_k() && loaded.k.is_none() {
                    return Err(CliError::input(format!(
                        "class {} needs `k` in the problem file",
                        class.name()
                    )));
                }
                let param = Parameterization::new(class, loaded.k);
                let cloud = mayer::sample_reachable(&loaded.problem, &param, n, seed, ode_tol)?;
                let path = out_dir.join(format!("cloud_{}.csv", class.name()));
                let mut buf = Vec::new();
                io::write_cloud_csv(
                    &cloud.points,
                    loaded.problem.sys.n(),
                    loaded.problem.sys.m(),
                    if class.needs_k() { loaded.k } else { None },
                    seed,
                    &mut buf,
                )?;
                std::fs::write(&path, buf)?;
                mb.output(&path);
                println!(
                    "class {}: {} points ({} failed), nn spacing {:.4e}",
                    class.name(),
                    cloud.points.len(),
                    cloud.failures,
                    mayer::nn_spacing(&cloud.points)
                );
                clouds.push((class.name().to_string(), cloud.points));
            }
            // Pairwise one-sided Hausdorff table.
            let table_path = out_dir.join("hausdorff.csv");
            let mut buf = String::from("from,to,distance\n");
            for (na, pa) in &clouds {
                for (nb, pb) in &clouds {
                    if na != nb {
                        let (d, _) = mayer::hausdorff_distance(pa, pb);
                        buf.push_str(&format!("{na},{nb},{}\n", fmt_f64(d)));
                        println!("d({na} -> {nb}) = {d:.4e}");
                    }
                }
            }
            std::fs::write(&table_path, buf)?;
            mb.output(&table_path);
            mb.write(&out_dir)?;
            Ok(())
        }
    }
}

fn run_study(
    kind: StudyCmd,
    seed: &Option<u64>,
    ode_tol: &Option<f64>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let ode_tol = ode_tol.unwrap_or(1e-10);
    let seed = seed.unwrap_or(0);
    match kind {
        StudyCmd::Pdlimit {
            system,
            control,
            x0,
            t_star,
            k_min,
            k_max,
            final_tol,
            slope_min,
        } => {
            let mut mb = ManifestBuilder::new("study_pdlimit", seed, ode_tol);
            mb.input(&system);
            mb.input(&control);
            mb.tolerance("final_tol", final_tol);
            mb.tolerance("slope_min", slope_min);
            let sys = Arc::new(read_system(&system)?);
            let (u, v) = ControlFileDto::load(&control)?.signals(sys.l())?;
            let x0 = parse_vec(&x0, "x0")?;
            let chart =
                FlowBoxChart::new(sys).with_variational_jacobian().with_tol(ode_tol);
            let t_star = t_star.unwrap_or(u.b);
            let ks: Vec<u32> = (k_min..=k_max).collect();
            let rep = solver::pd_limit_study(&chart, &x0, &u, &v, t_star, &ks)?;
            let csv = out_dir.join("pdlimit.csv");
            let mut buf = String::from("k,u_l1,x_l1,t_star_err\n");
            for i in 0..rep.ks.len() {
                buf.push_str(&format!(
                    "{},{},{},{}\n",
                    rep.ks[i],
                    fmt_f64(rep.u_l1[i]),
                    fmt_f64(rep.x_l1[i]),
                    fmt_f64(rep.t_star_err[i])
                ));
            }
            std::fs::write(&csv, buf)?;
            mb.output(&csv);
            let json = out_dir.join("pdlimit_report.json");
            write_json(&json, &rep)?;
            mb.output(&json);
            mb.write(out_dir)?;
            let final_l1 = *rep.x_l1.last().unwrap();
            let slope = rep.slope.unwrap_or(0.0);
            println!(
                "pd limit: final L1 error {final_l1:.3e}, slope {slope:.3}, monotone = {}",
                rep.monotone_l1
            );
            if !(rep.monotone_l1 && final_l1 <= final_tol && slope >= slope_min) {
                return Err(CliError::run("pd-limit contract failed".to_string()));
            }
            Ok(())
        }

        StudyCmd::Density {
            system,
            control,
            x0,
            slope_from,
            slope_to,
            final_tol,
            slope_min,
        } => {
            let mut mb = ManifestBuilder::new("study_density", seed, ode_tol);
            mb.input(&system);
            mb.input(&control);
            mb.tolerance("final_tol", final_tol);
            mb.tolerance("slope_min", slope_min);
            let sys = Arc::new(read_system(&system)?);
            let (u, v) = ControlFileDto::load(&control)?.signals(sys.l())?;
            let x0 = parse_vec(&x0, "x0")?;
            let stc = spacetime::rectilinear_completion(&u, &v)?;
            let slopes: Vec<f64> =
                (slope_from..=slope_to).map(|j| (u.b - u.a) * 0.5f64.powi(j)).collect();
            let rep = spacetime::density_study(
                &sys,
                &x0,
                &stc,
                &slopes,
                &impulsive::ode::OdeOptions::with_tol(ode_tol),
            )?;
            let csv = out_dir.join("density.csv");
            let mut buf = String::from("min_slope,sup_distance,terminal_distance\n");
            for i in 0..rep.min_slopes.len() {
                buf.push_str(&format!(
                    "{},{},{}\n",
                    fmt_f64(rep.min_slopes[i]),
                    fmt_f64(rep.sup_distances[i]),
                    fmt_f64(rep.terminal_distances[i])
                ));
            }
            std::fs::write(&csv, buf)?;
            mb.output(&csv);
            let json = out_dir.join("density_report.json");
            write_json(&json, &rep)?;
            mb.output(&json);
            mb.write(out_dir)?;
            let final_d = *rep.sup_distances.last().unwrap();
            let slope = rep.slope.unwrap_or(0.0);
            println!("density: final distance {final_d:.3e}, slope {slope:.3}");
            if !(final_d <= final_tol && slope >= slope_min) {
                return Err(CliError::run("density contract failed".to_string()));
            }
            Ok(())
        }

        StudyCmd::Equivalence { system, control, x0, tol } => {
            let mut mb = ManifestBuilder::new("study_equivalence", seed, ode_tol);
            mb.input(&system);
            mb.input(&control);
            mb.tolerance("tol_equiv", tol);
            let sys = Arc::new(read_system(&system)?);
            let (u, v) = ControlFileDto::load(&control)?.signals(sys.l())?;
            let x0 = parse_vec(&x0, "x0")?;
            let chart =
                FlowBoxChart::new(sys).with_variational_jacobian().with_tol(ode_tol);
            let dev = spacetime::equivalence_pd_vs_spacetime(&chart, &x0, &u, &v)?;
            println!("equivalence deviation: {dev:.3e} (tolerance {tol:.1e})");
            let json = out_dir.join("equivalence_report.json");
            write_json(&json, &serde_json::json!({ "deviation": dev, "tol": tol }))?;
            mb.output(&json);
            mb.write(out_dir)?;
            if dev > tol {
                return Err(CliError::run(format!(
                    "equivalence deviation {dev:.3e} exceeds {tol:.1e}"
                )));
            }
            Ok(())
        }

        StudyCmd::Lipschitz { system, control, r, k_lo, k_hi, pairs } => {
            let mut mb = ManifestBuilder::new("study_lipschitz", seed, ode_tol);
            mb.input(&system);
            let sys = Arc::new(read_system(&system)?);
            let v = match &control {
                Some(path) => {
                    mb.input(path);
                    ControlFileDto::load(path)?.signals(sys.l())?.1
                }
                None => {
                    if sys.l() > 0 {
                        return Err(CliError::input(
                            "system has an ordinary control; provide a control file for v",
                        ));
                    }
                    ControlSignal::constant(0.0, 1.0, vec![])
                }
            };
            let m = sys.m();
            let chart =
                FlowBoxChart::new(sys).with_variational_jacobian().with_tol(ode_tol);
            let lo = vec![k_lo; m];
            let hi = vec![k_hi; m];
            let rep1 =
                solver::lipschitz_dependence_probe(&chart, r, (&lo, &hi), pairs, &v, seed)?;
            let rep2 = solver::lipschitz_dependence_probe(
                &chart,
                r,
                (&lo, &hi),
                2 * pairs,
                &v,
                seed,
            )?;
            let change = (rep2.max_ratio - rep1.max_ratio).abs() / rep1.max_ratio.max(1e-12);
            println!(
                "lipschitz ratio: {:.4} at {} pairs, {:.4} at {} pairs (change {:.1}%)",
                rep1.max_ratio,
                rep1.pairs,
                rep2.max_ratio,
                rep2.pairs,
                100.0 * change
            );
            let json = out_dir.join("lipschitz_report.json");
            write_json(
                &json,
                &serde_json::json!({
                    "ratio": rep1.max_ratio,
                    "ratio_doubled": rep2.max_ratio,
                    "relative_change": change,
                    "skipped": rep1.skipped + rep2.skipped,
                }),
            )?;
            mb.output(&json);
            mb.write(out_dir)?;
            if !(rep1.max_ratio.is_finite() && change < 0.5) {
                return Err(CliError::run("lipschitz probe unstable".to_string()));
            }
            Ok(())
        }
    }
}
