//! Classify trajectories and check orderings: static shifts of the twisted Kähler–Einstein
//! potential bracket the flow, and a time-mollified copy of the flow stays below it.

use std::f64::consts::PI;

use cmaflow::comparison::{
    class_tolerance, classify, compare, initial_defect, mollify_time, required_b, sample_trajectory, CompareOptions,
    MollifyParams,
};
use cmaflow::data::{Density, Nonlinearity};
use cmaflow::elliptic::{solve_twisted_ma, NewtonOptions};
use cmaflow::forms::KahlerFamily;
use cmaflow::grid::{make_grid, Herm, ScalarField};
use cmaflow::parabolic::{run_flow, FlowConfig, Trajectory};

fn main() -> cmaflow::Result<()> {
    let grid = make_grid(1, 32)?;
    let g = ScalarField::from_fn(&grid, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).cos());
    let phi0 = ScalarField::from_fn(&grid, |x| 0.08 * (2.0 * PI * x[1]).sin());
    let cfg = FlowConfig::new(
        grid.clone(),
        KahlerFamily::constant(Herm::One(1.0), 2.0)?,
        Nonlinearity::linear(1.0, 0.0, 2.0),
        Density::tabulated(&grid, g.clone(), 2.0)?,
        phi0.clone(),
        2.0,
        64,
    );
    let flow = run_flow(&cfg)?;
    let tol = class_tolerance(&cfg);

    let ke = solve_twisted_ma(&grid, Herm::One(1.0), &g, 1.0, NewtonOptions::with_tol(1e-12))?.rho;
    let c = phi0.zip_map(&ke, |a, b| (a - b).abs()).max();
    let shifted = |s: f64| {
        let ke = ke.clone();
        sample_trajectory(&grid, &flow.times, move |_, i| ke.values[i] + s)
    };
    let (below, above) = (shifted(-c), shifted(c));
    for (name, t) in [("KE - C", &below), ("flow", &flow), ("KE + C", &above)] {
        let cl = classify(t, &cfg, tol)?;
        println!("{name:<8} {:?}  sub margin {:.2e}  super margin {:.2e}", cl.kind, cl.sub_margin, cl.super_margin);
    }
    for (name, sub, sup) in [("KE - C <= flow", &below, &flow), ("flow <= KE + C", &flow, &above)] {
        let rep = compare(sub, sup, &cfg, CompareOptions::for_run(&cfg, sup))?;
        println!("{name}: min gap {:.4e} (pass = {})", rep.min_gap, rep.pass);
    }

    let mut params = MollifyParams::for_run(&cfg, 0.1, 0.0)?;
    params.b = required_b(&flow, &cfg, &params, tol)?;
    let m = mollify_time(&flow, &params)?;
    let d = initial_defect(&m, &flow).max(0.0);
    let m = Trajectory::from_slices(m.times.clone(), m.phi.iter().map(|p| p.add_scalar(-d)).collect())?;
    let sup = Trajectory::from_slices(flow.times[..m.times.len()].to_vec(), flow.phi[..m.times.len()].to_vec())?;
    let rep = compare(&m, &sup, &cfg, CompareOptions::for_run(&cfg, &sup))?;
    println!("mollified (eps = 0.1, B = {:.3}, shift {d:.3e}) <= flow: min gap {:.4e} (pass = {})", params.b, rep.min_gap, rep.pass);
    Ok(())
}
