//! Reference reconstruction pipelines.

use crate::coiltools::{estimate_covariance, walsh_combine, Whitener};
use crate::config::ReconConfig;
use crate::datamodel::{CoilImages, Image, KSpaceDataset};
use crate::error::Result;
use crate::grappa::grappa_dataset;
use crate::mppca::figure2_pipeline;
use crate::nufft::GridPlan;
use crate::phantom::NoiseCovariance;
use crate::phasecorr::correct_blades;
use crate::sslrecon::{infer, prepare_input, UnrolledModel};
use crate::trajectory::density_comp_masked;
use crate::C64;

/// Noise covariance from the dataset's prescan, identity without one.
pub fn dataset_covariance(ds: &KSpaceDataset) -> Result<NoiseCovariance> {
    match &ds.prescan {
        Some(p) => estimate_covariance(p),
        None => Ok(NoiseCovariance::identity(ds.coils())),
    }
}

pub fn trajectory_plan(ds: &KSpaceDataset, cfg: &ReconConfig) -> Result<GridPlan> {
    let traj = ds.trajectory()?;
    GridPlan::with_config(traj.coords(), traj.matrix(), &cfg.nufft)
}

/// Density-compensated adjoint NUFFT of every coil over the dataset's
/// acquired samples.
pub fn gridded_coil_images(ds: &KSpaceDataset, plan: &GridPlan, cfg: &ReconConfig) -> Result<CoilImages> {
    let w = density_comp_masked(plan, &ds.mask_flat(), cfg.dc_iterations)?;
    plan.adjoint_coils(&ds.coil_vectors(), Some(&w.weights))
}

/// Zero every pixel farther than `N/2` from the image centre.
pub fn apply_fov_mask(image: &mut Image) {
    let n = image.nrows();
    let c = (n / 2) as f64;
    let r2 = c * c;
    for ((y, x), v) in image.indexed_iter_mut() {
        let dy = y as f64 - c;
        let dx = x as f64 - c;
        if dy * dy + dx * dx > r2 {
            *v = C64::new(0.0, 0.0);
        }
    }
}

fn is_zero(ds: &KSpaceDataset) -> bool {
    ds.samples().iter().all(|v| v.norm() == 0.0)
}

/// Whiten, per-blade GRAPPA, unwhiten, phase correction, gridding of every
/// coil and Walsh combination.
pub fn recon_grappa_pipeline(ds: &KSpaceDataset, cfg: &ReconConfig) -> Result<Image> {
    cfg.validate()?;
    let n = ds.traj.matrix;
    if is_zero(ds) {
        return Ok(Image::zeros((n, n)));
    }
    let whitener = Whitener::new(&dataset_covariance(ds)?)?;
    let filled = grappa_dataset(&whitener.whiten_dataset(ds)?, &cfg.grappa)?;
    let mut filled = whitener.unwhiten_dataset(&filled)?;
    if cfg.phase_correction {
        filled = correct_blades(&filled)?.dataset;
    }
    let plan = trajectory_plan(&filled, cfg)?;
    let images = gridded_coil_images(&filled, &plan, cfg)?;
    let mut image = walsh_combine(&images, cfg.walsh_block)?;
    if cfg.fov_mask {
        apply_fov_mask(&mut image);
    }
    Ok(image)
}

/// Blade-wise MPPCA denoising ahead of the GRAPPA pipeline.
pub fn recon_mppca_pipeline(ds: &KSpaceDataset, cfg: &ReconConfig) -> Result<Image> {
    cfg.validate()?;
    if is_zero(ds) {
        let n = ds.traj.matrix;
        return Ok(Image::zeros((n, n)));
    }
    let denoised = figure2_pipeline(ds, &dataset_covariance(ds)?, &cfg.mppca)?;
    recon_grappa_pipeline(&denoised, cfg)
}

/// Trained unrolled network on every acquired sample.
pub fn recon_ssl_pipeline(model: &UnrolledModel, ds: &KSpaceDataset, cfg: &ReconConfig) -> Result<Image> {
    let n = ds.traj.matrix;
    if is_zero(ds) {
        return Ok(Image::zeros((n, n)));
    }
    let mut image = infer(model, &prepare_input(ds, cfg)?)?;
    if cfg.fov_mask {
        apply_fov_mask(&mut image);
    }
    Ok(image)
}
