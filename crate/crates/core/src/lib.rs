//! Degenerate parabolic complex Monge-Ampère flows on flat complex tori.
//!
//! The crate solves
//!
//! ```text
//! (ω_t + dd^c φ_t)ⁿ = e^{φ̇_t + F(t, x, φ_t)} g dV
//! ```
//!
//! on `Cⁿ/(Z + iZ)ⁿ` for `n ∈ {1, 2}` by implicit Euler in time and a finite-difference
//! complex Hessian in space, then checks the solutions against explicit a priori bounds,
//! barriers, comparison and stability statements.
//!
//! - [`grid`]: the periodic lattice, fields, complex Hessian and linear solves.
//! - [`forms`], [`data`]: the background family `ω_t`, the nonlinearity `F` and the density `g`.
//! - [`elliptic`], [`parabolic`]: the Newton solvers.
//! - [`estimates`], [`comparison`]: verification of bounds and orderings along trajectories.
//! - [`scenarios`]: packaged long-time experiments.
//! - [`config`], [`report`], [`run`]: the run configuration format, the output files and
//!   the subcommands of the `cmaflow` binary.
//!
//! ```no_run
//! use cmaflow::config::RunConfig;
//! use cmaflow::parabolic::run_flow;
//!
//! let cfg = RunConfig::parse_str("grid.N = 32\nF.kind = linear\nF.slope = 1\nflow.T = 1\nflow.K = 32\n")?
//!     .build()?;
//! let traj = run_flow(&cfg)?;
//! println!("sup |φ_T| = {}", traj.last().sup_norm());
//! # Ok::<(), cmaflow::Error>(())
//! ```

// `!(x > 0.0)` is the NaN-rejecting form of these checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comparison;
pub mod config;
pub mod data;
pub mod elliptic;
pub mod error;
pub mod estimates;
pub mod forms;
pub mod grid;
pub mod linsolve;
pub mod parabolic;
pub mod report;
pub mod run;
pub mod scenarios;

pub use error::{Error, Result};
