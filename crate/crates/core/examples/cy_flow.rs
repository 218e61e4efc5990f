//! The Calabi–Yau case `F = 0`: the flow converges to the normalized solution of the
//! elliptic equation.

use std::f64::consts::PI;

use cmaflow::scenarios::{cy_preset, run_cy_flow, CyOptions};

fn main() -> cmaflow::Result<()> {
    let cfg = cy_preset(1, 32, 128, 10.0, |x| 0.1 * (2.0 * PI * x[0]).sin())?;
    let r = run_cy_flow(&cfg, &CyOptions::default())?;

    let step = (r.distance.len() / 10).max(1);
    for row in r.distance.iter().step_by(step) {
        println!("t = {:>8.4}  sup|phi_t - phi_KE| = {:.4e}", row.t, row.dist);
    }
    println!("log-distance slope over [{}, {}]: {:.4}", r.window.0, r.window.1, r.rate);
    for c in &r.checks {
        println!("{:<24} {:>11.4e} <= {:>9.2e}  {}", c.name, c.value, c.threshold, if c.pass { "ok" } else { "FAIL" });
    }
    for (k, v) in &r.info {
        println!("{k}: {v:.6e}");
    }
    Ok(())
}
