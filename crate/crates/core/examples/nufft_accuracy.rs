//! Gridding NUFFT against the direct DFT across kernel widths and
//! oversampling factors, plus the adjoint inner-product identity.
//!
//! cargo run --release --example nufft_accuracy

use propeller_lab::nufft::{direct_dft, GridPlan};
use propeller_lab::rng::stream_rng;
use propeller_lab::trajectory::gen_propeller;
use propeller_lab::{Image, C64};
use rand::Rng;

fn main() -> propeller_lab::Result<()> {
    let n = 32;
    let traj = gen_propeller(n, 12, 8, 1, 0)?;
    let mut rng = stream_rng(1, &[]);
    let x = Image::from_shape_fn((n, n), |_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let exact = direct_dft(traj.coords(), x.view());
    let scale = exact.iter().map(|v| v.norm()).fold(0.0, f64::max);

    println!("{:>6} {:>6} {:>14} {:>14}", "ovs", "width", "max rel err", "adjointness");
    for ovs in [1.5, 2.0] {
        for width in 3..=7 {
            let plan = GridPlan::new(traj.coords(), n, ovs, width)?;
            let fx = plan.forward(x.view())?;
            let err = fx.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
            let y: Vec<C64> = (0..plan.len())
                .map(|_| C64::new(rng.random::<f64>(), rng.random::<f64>()))
                .collect();
            let lhs: C64 = fx.iter().zip(&y).map(|(a, b)| a.conj() * b).sum();
            let aty = plan.adjoint(&y, None)?;
            let rhs: C64 = x.iter().zip(aty.iter()).map(|(a, b)| a.conj() * b).sum();
            println!("{ovs:>6.1} {width:>6} {err:>14.3e} {:>14.3e}", (lhs - rhs).norm() / lhs.norm());
        }
    }
    Ok(())
}
