//! Invariance transforms of the nonlinearity: translation by `C(t)` and the scaling that
//! makes a quasi-monotone `F` nondecreasing in `r`.

use cmaflow::data::{monotonizing_horizon, monotonizing_scale, transform_scale, transform_translate, Nonlinearity, TimeFunction};

fn main() -> cmaflow::Result<()> {
    // F(t, r) = −r + t, quasi-monotone with λ_F = 1
    let f = Nonlinearity::custom("t - r", |t, _, r| t - r, |_, _, _| -1.0, 1.0, 2.0, 0.0, 1.0, 10.0);
    println!("F: lambda_F = {}, increasing margin {:.3}", f.lambda_f, f.increasing_margin(None));

    let c = TimeFunction::polynomial(&[0.0, 0.5]);
    let shifted = transform_translate(&f, &c);
    println!("translated by 0.5 t: F(0.5, 0, 1) = {:.6}", shifted.eval(0.5, 0, 1.0)?);
    let back = transform_translate(&shifted, &TimeFunction::polynomial(&[0.0, -0.5]));
    println!("and back:            F(0.5, 0, 1) = {:.6}", back.eval(0.5, 0, 1.0)?);

    let lambda = f.lambda_f;
    let scaled = transform_scale(&f, &monotonizing_scale(lambda), 1)?;
    println!(
        "scaled by 1 - {lambda} s: horizon {:.4} (expected {:.4}), increasing margin {:.3e}",
        scaled.t_max,
        monotonizing_horizon(lambda, f.t_max),
        scaled.increasing_margin(None)
    );
    Ok(())
}
