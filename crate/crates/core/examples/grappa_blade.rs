//! GRAPPA on the in-blade R=2 pattern: per-blade k-space error against the
//! fully sampled blades, and the reconstructed image.
//!
//! cargo run --release --example grappa_blade -- [out_dir]

use std::path::PathBuf;

use ndarray::Axis;
use propeller_lab::config::ReconConfig;
use propeller_lab::grappa::{grappa_dataset, GrappaConfig};
use propeller_lab::harness::render::write_magnitude_pgm;
use propeller_lab::harness::{nrmse, recon_grappa_pipeline};
use propeller_lab::phantom::{make_coil_maps, make_phantom, simulate_kspace, CoilProfile, PhantomSpec};
use propeller_lab::trajectory::{BladeTrajectory, PropellerSpec};

fn main() -> propeller_lab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/grappa_blade".into()));
    std::fs::create_dir_all(&out).expect("create output directory");

    let truth = make_phantom(&PhantomSpec::shepp_logan(64))?;
    let maps = make_coil_maps(8, 64, CoilProfile::GaussianRing)?;
    for (lines, acs) in [(8, 4), (16, 6), (24, 6)] {
        let r2 = simulate_kspace(
            &truth,
            &maps,
            &BladeTrajectory::from_spec(&PropellerSpec::new(64, 18, lines, 2, acs))?,
        )?;
        let r1 = simulate_kspace(
            &truth,
            &maps,
            &BladeTrajectory::from_spec(&PropellerSpec::new(64, 18, lines, 1, 0))?,
        )?;
        let filled = grappa_dataset(&r2, &GrappaConfig::default())?;
        let errs: Vec<f64> = (0..r2.blades())
            .map(|b| {
                let f = filled.samples().index_axis(Axis(0), b);
                let t = r1.samples().index_axis(Axis(0), b);
                let e: f64 = f.iter().zip(t.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
                (e / t.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
            })
            .collect();
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        println!("{lines:>2} lines, {acs} ACS: worst blade NRMSE {worst:.4}");
        if lines == 8 {
            let img = recon_grappa_pipeline(&r2, &ReconConfig::default())?;
            println!("   desk image NRMSE vs truth {:.4}", nrmse(&img, &truth)?);
            write_magnitude_pgm(&out.join("grappa_desk.pgm"), &img)?;
        }
    }
    Ok(())
}
