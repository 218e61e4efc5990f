//! The a priori estimate rows for a degenerate flow: klt density, `F = 0`, affine family.

use std::f64::consts::PI;

use cmaflow::data::{make_klt_density, Nonlinearity};
use cmaflow::estimates::{estimate_suite, monotone_zone_margin};
use cmaflow::forms::KahlerFamily;
use cmaflow::grid::{make_grid, Herm, ScalarField};
use cmaflow::parabolic::{run_flow, FlowConfig};

fn main() -> cmaflow::Result<()> {
    let grid = make_grid(1, 32)?;
    let g = make_klt_density(&grid, &[[0.25, 0.5, 0.0, 0.0]], &[-0.3])?;
    let cfg = FlowConfig::new(
        grid.clone(),
        KahlerFamily::affine(Herm::One(1.0), Herm::One(0.5), 1.0)?,
        Nonlinearity::zero(1.0),
        g,
        ScalarField::from_fn(&grid, |x| 0.05 * (2.0 * PI * x[0]).sin()),
        1.0,
        64,
    );
    let traj = run_flow(&cfg)?;
    let (_, rep) = estimate_suite(&traj, &cfg, 1e-6)?;

    println!("C0 = {:.4}  C1 = {:.4}  C2 = {:.4e}  C2 (1/t form) = {:.4e}", rep.c0, rep.c1, rep.c2, rep.c2_over_t);
    for row in &rep.rows {
        println!(
            "{:<40} const {:>11.4e}  margin {:>11.4e}  {}",
            row.name,
            row.constant,
            row.margin,
            if row.pass { "ok" } else { "FAIL" }
        );
    }
    let (m, k, _) = monotone_zone_margin(&traj, 1, rep.c1);
    println!("monotone zone: smallest increment {m:.3e} at node {k}");
    Ok(())
}
