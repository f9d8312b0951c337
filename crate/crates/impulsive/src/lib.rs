//! Simulation and optimization toolkit for control systems that are affine
//! in the time derivative of the control.
//!
//! The systems have the form
//!
//! ```text
//! x' = f(x, u, v) + sum_a g_a(x, u) u_a',    x(a) = x0, u(a) = u0,
//! ```
//!
//! where `v` is a bounded ordinary control and the impulsive control `u` is
//! merely integrable: it may jump, and may even have unbounded variation.
//! Under pairwise commutativity of the extended impulse fields the crate
//! provides:
//!
//! * [`sysmodel`] — a small declaration language for the fields, plus a
//!   numerical audit of the standing assumptions (commutativity, growth);
//! * [`flowbox`] — the coordinate change that straightens the impulse
//!   fields, reducing the dynamics to an ordinary ODE;
//! * [`solver`] — Carathéodory and pointwise-defined solutions, and the
//!   limit studies that justify them;
//! * [`spacetime`] — graph completions of bounded-variation controls and
//!   the reparameterized space-time system;
//! * [`mayer`] — terminal-cost value estimation over the control classes
//!   and reachable-set sampling;
//! * [`hjb`] — the compactified Hamiltonian and a grid solver for the
//!   variation-budgeted value function.
//!
//! Everything is deterministic: a single 64-bit seed drives all sampling
//! through per-purpose counter streams ([`rng`]).

pub mod expr;
pub mod flowbox;
pub mod hjb;
pub mod io;
pub mod mayer;
pub mod ode;
pub mod presets;
pub mod rng;
pub mod signal;
pub mod solver;
pub mod spacetime;
pub mod sysmodel;
pub mod util;
