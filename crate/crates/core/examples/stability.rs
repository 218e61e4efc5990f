//! Stability under density perturbation: `g_j = max(g, 2^{-j})` for a klt density `g`.

use cmaflow::scenarios::{density_floor_case, klt_stability_preset, run_stability_experiment};

fn main() -> cmaflow::Result<()> {
    let base = klt_stability_preset(32, 64, 1.0, 1.0)?;
    let case = density_floor_case(&base, &[1, 2, 3, 4, 5, 6]);
    let rep = run_stability_experiment(&case, 0.1, 1e-9)?;

    println!("{:>3} {:>12} {:>12}", "j", "sup gap", "L1 gap");
    for ((j, s), l) in rep.js.iter().zip(&rep.sup_gaps).zip(&rep.l1_gaps) {
        println!("{j:>3} {s:>12.4e} {l:>12.4e}");
    }
    println!("fit: sup gap <= {:.3} * (L1 gap)^{:.3}; monotone = {}", rep.b_fit, rep.alpha, rep.monotone);
    // a larger density gives a smaller potential, so sup (phi - phi_j) is the nontrivial side
    for (b, j) in rep.bounds.iter().skip(1).step_by(2).zip(&rep.js) {
        println!("j = {j}: sup (phi - phi_j) = {:.4e} <= bound {:.4e}", b.observed, b.bound);
    }
    Ok(())
}
