//! Drive a run from configuration text, the same way the command-line tool does.

use cmaflow::config::RunConfig;
use cmaflow::parabolic::run_flow;

const CONFIG: &str = "
grid.n = 2
grid.N = 8
family.kind = affine
family.chi = [0.5, 0.5, 0, 0]
F.kind = linear
F.slope = 1
phi0.kind = cos
phi0.amplitude = 0.02
phi0.axis = 2
flow.T = 1
flow.K = 32
";

fn main() -> cmaflow::Result<()> {
    let rc = RunConfig::parse_with(CONFIG, &["newton=1e-11".to_string()], None)?;
    print!("{}", rc.emit());
    let cfg = rc.build()?;
    let traj = run_flow(&cfg)?;
    let last = traj.last();
    println!("phi_T in [{:.6}, {:.6}], mean {:.6}", last.min(), last.max(), last.mean());
    Ok(())
}
