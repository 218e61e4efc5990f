//! Structural checks on a few families of forms.

use cmaflow::forms::{verify_family_assumptions, KahlerFamily};
use cmaflow::grid::Herm;
use num_complex::Complex64;

fn main() -> cmaflow::Result<()> {
    let chi0 = Herm::Two {
        a: 2.0,
        d: 1.5,
        b: Complex64::new(0.2, -0.1),
    };
    let families = [
        ("constant", KahlerFamily::constant(Herm::identity(2), 1.0)?),
        ("affine", KahlerFamily::affine(Herm::identity(2), Herm::diag2(0.5, 0.25), 1.0)?),
        ("nkrf", KahlerFamily::nkrf(chi0, Herm::identity(2), 5.0)?),
    ];
    for (name, fam) in &families {
        let samples: Vec<f64> = (0..=50).map(|k| fam.horizon * k as f64 / 50.0).collect();
        let rep = verify_family_assumptions(fam, &samples)?;
        println!(
            "{name:<9} A = {:.3}  margins: lower {:.3e}  upper {:.3e}  d/dt {:.3e} / {:.3e}  d2/dt2 {:.3e}  -> {}",
            fam.a,
            rep.lower_bound,
            rep.upper_bound,
            rep.derivative_below,
            rep.derivative_above,
            rep.second_derivative,
            if rep.passes(1e-12) { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
