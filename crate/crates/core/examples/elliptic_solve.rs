//! Solve `(ω + dd^c ρ)ⁿ = e^c g` on the torus for a klt density and print what the
//! bordered Newton iteration found.

use cmaflow::data::make_klt_density;
use cmaflow::elliptic::{solve_elliptic_ma, NewtonOptions, Normalization};
use cmaflow::grid::{make_grid, Herm, HermitianField};

fn main() -> cmaflow::Result<()> {
    let grid = make_grid(1, 64)?;
    // a conic singularity of angle 2π(1 − 0.4) at the centre
    let g = make_klt_density(&grid, &[[0.5, 0.5, 0.0, 0.0]], &[-0.4])?;
    let omega = HermitianField::constant(&grid, Herm::One(1.0));
    let sol = solve_elliptic_ma(&grid, &omega, &g.g, Normalization::SupZero, NewtonOptions::with_tol(1e-11))?;

    println!("N = {}, klt exponent -0.4", grid.res());
    println!("c         = {:.12}", sol.c);
    println!("newton    = {} iterations, residual {:.2e}", sol.newton_iterations, sol.residual);
    println!("min eig   = {:.4}", sol.min_eig);
    println!("osc rho   = {:.6}", sol.rho.max() - sol.rho.min());
    Ok(())
}
