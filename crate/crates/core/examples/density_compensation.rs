//! Pipe–Menon density compensation on the desk trajectory: convergence
//! of the weights and the point-spread function they produce.
//!
//! cargo run --release --example density_compensation -- [out_dir]

use std::path::PathBuf;

use propeller_lab::harness::render::write_magnitude_pgm;
use propeller_lab::nufft::GridPlan;
use propeller_lab::trajectory::{density_comp, BladeTrajectory, PropellerSpec};
use propeller_lab::{Image, C64};

fn main() -> propeller_lab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/density_compensation".into()));
    std::fs::create_dir_all(&out).expect("create output directory");

    let traj = BladeTrajectory::from_spec(&PropellerSpec::new(64, 18, 8, 1, 0))?;
    let plan = GridPlan::new(traj.coords(), 64, 2.0, 6)?;
    let mut point = Image::zeros((64, 64));
    point[[32, 32]] = C64::new(1.0, 0.0);
    let k = plan.forward(point.view())?;

    for iters in [1, 3, 10, 30] {
        let w = density_comp(&traj, &plan, iters)?;
        let psf = plan.adjoint(&k, Some(&w.weights))?;
        let peak = psf[[32, 32]].norm();
        let side = psf.iter().map(|v| v.norm()).filter(|&v| v < peak).fold(0.0, f64::max);
        println!(
            "{iters:>3} iterations: peak {peak:.4}, largest side lobe {:.2}% of peak",
            100.0 * side / peak
        );
        if iters == 10 {
            write_magnitude_pgm(&out.join("psf.pgm"), &psf)?;
        }
    }
    println!("wrote {}", out.join("psf.pgm").display());
    Ok(())
}
