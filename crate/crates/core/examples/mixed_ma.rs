//! Pointwise mixed Monge–Ampère inequalities on an `n = 2` lattice, and the concavity of the
//! energy along a segment.

use std::f64::consts::PI;

use cmaflow::comparison::mixed_inequality_margin;
use cmaflow::estimates::{energy, mixed_ma};
use cmaflow::grid::{background_plus_hessian, make_grid, Herm, HermitianField, ScalarField};

fn main() -> cmaflow::Result<()> {
    let grid = make_grid(2, 8)?;
    let u1 = ScalarField::from_fn(&grid, |x| 0.004 * (2.0 * PI * (x[0] + x[2])).cos());
    let u2 = ScalarField::from_fn(&grid, |x| 0.003 * (2.0 * PI * (x[1] - x[3])).sin());
    let s1 = background_plus_hessian(&grid, Herm::identity(2), &u1);
    let s2 = background_plus_hessian(&grid, Herm::diag2(2.0, 0.5), &u2);

    let log_mu = ScalarField::zeros(&grid);
    let f1 = s1.det().map(f64::ln);
    let f2 = s2.det().map(f64::ln);
    for alpha in [0.25, 0.5, 0.75] {
        let m = mixed_inequality_margin(&s1, &f1, &s2, &f2, &log_mu, alpha)?;
        println!("alpha = {alpha}: min log margin {:.4e}", m.min());
    }
    let mixed = mixed_ma(&grid, &[s1.clone(), s2.clone()])?;
    println!("integral of S1 ∧ S2: {:.10}", grid.integrate(&mixed));

    let omega = HermitianField::constant(&grid, Herm::identity(2));
    for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let phi = u1.zip_map(&u2, |a, b| (1.0 - s) * a + s * b);
        println!("E((1-s)u1 + s u2) at s = {s}: {:.6e}", energy(&grid, &phi, &omega)?);
    }
    Ok(())
}
