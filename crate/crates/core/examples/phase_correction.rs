//! Per-blade constant phase errors: estimation, removal, and what happens
//! to the image without correction.
//!
//! cargo run --release --example phase_correction

use propeller_lab::config::ReconConfig;
use propeller_lab::harness::{nrmse, recon_grappa_pipeline};
use propeller_lab::phantom::{apply_blade_phase, make_coil_maps, make_phantom, simulate_kspace, CoilProfile, PhantomSpec};
use propeller_lab::phasecorr::{correct_blades, dc_phase_spread};
use propeller_lab::trajectory::{BladeTrajectory, PropellerSpec};

fn main() -> propeller_lab::Result<()> {
    let truth = make_phantom(&PhantomSpec::randomized(64, 2))?;
    let maps = make_coil_maps(8, 64, CoilProfile::GaussianRing)?;
    let ds = simulate_kspace(&truth, &maps, &BladeTrajectory::from_spec(&PropellerSpec::desk())?)?;
    let injected: Vec<f64> = (0..ds.blades()).map(|b| 2.5 * ((b as f64) * 1.7).sin()).collect();
    let corrupted = apply_blade_phase(&ds, &injected)?;

    let fixed = correct_blades(&corrupted)?;
    println!(
        "DC phase spread: corrupted {:.3} rad, corrected {:.2e} rad",
        dc_phase_spread(&corrupted)?,
        dc_phase_spread(&fixed.dataset)?
    );

    let on = ReconConfig::default();
    let off = ReconConfig {
        phase_correction: false,
        ..ReconConfig::default()
    };
    let reference = recon_grappa_pipeline(&ds, &on)?;
    println!("image NRMSE vs uncorrupted recon:");
    println!(
        "  without correction {:.4}",
        nrmse(&recon_grappa_pipeline(&corrupted, &off)?, &reference)?
    );
    println!(
        "  with correction    {:.2e}",
        nrmse(&recon_grappa_pipeline(&corrupted, &on)?, &reference)?
    );
    Ok(())
}
