//! Seeded simulation scenarios: phantom, coils, noise and blade phases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ReconConfig;
use crate::datamodel::{AcquisitionMeta, Image, KSpaceDataset};
use crate::error::Result;
use crate::nufft::GridPlan;
use crate::phantom::{
    add_noise, apply_blade_phase, make_coil_maps, make_noise_prescan, make_phantom, simulate_kspace, CoilMaps, CoilProfile,
    NoiseCovariance, PhantomSpec,
};
use crate::rng::{derive_seed, stream_rng};
use crate::trajectory::{density_comp_masked, BladeTrajectory, PropellerSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub traj: PropellerSpec,
    pub coils: usize,
    /// Image-domain noise standard deviation of the density-compensated
    /// adjoint, as a fraction of its peak magnitude.
    pub noise_fraction: f64,
    /// Neighbour correlation of the coil noise covariance.
    pub noise_rho: f64,
    pub prescan_samples: usize,
    /// Largest per-blade constant phase error, radians.
    pub blade_phase: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            traj: PropellerSpec::desk(),
            coils: 8,
            noise_fraction: 0.15,
            noise_rho: 0.3,
            prescan_samples: 4000,
            blade_phase: std::f64::consts::PI,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub truth: Image,
    pub maps: CoilMaps,
    pub psi: NoiseCovariance,
    /// Noiseless and phase-consistent.
    pub clean: KSpaceDataset,
    /// Noisy, phase-corrupted, with a noise prescan.
    pub noisy: KSpaceDataset,
    pub sigma: f64,
    pub blade_phases: Vec<f64>,
}

/// k-space noise level giving an image-domain standard deviation of
/// `fraction × peak` in the density-compensated adjoint of `clean`.
pub fn noise_sigma_for(clean: &KSpaceDataset, maps: &CoilMaps, fraction: f64, cfg: &ReconConfig) -> Result<f64> {
    let traj = clean.trajectory()?;
    let plan = GridPlan::with_config(traj.coords(), traj.matrix(), &cfg.nufft)?;
    let w = density_comp_masked(&plan, &clean.mask_flat(), cfg.dc_iterations)?;
    let images = plan.adjoint_coils(&clean.coil_vectors(), Some(&w.weights))?;
    let peak = maps.combine(&images).iter().map(|v| v.norm()).fold(0.0, f64::max);
    let energy = w.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(fraction * peak / energy)
}

pub fn make_scenario(spec: &ScenarioSpec, cfg: &ReconConfig) -> Result<Scenario> {
    let traj = BladeTrajectory::from_spec(&spec.traj)?;
    let n = spec.traj.matrix;
    let truth = make_phantom(&PhantomSpec::randomized(n, derive_seed(spec.seed, &[1])))?;
    let maps = make_coil_maps(spec.coils, n, CoilProfile::GaussianRing)?;
    let mut clean = simulate_kspace(&truth, &maps, &traj)?;
    clean.meta = AcquisitionMeta::lung_t2_propeller();
    let psi = NoiseCovariance::correlated(spec.coils, spec.noise_rho, derive_seed(spec.seed, &[2]))?;
    let sigma = noise_sigma_for(&clean, &maps, spec.noise_fraction, cfg)?;
    let mut rng = stream_rng(spec.seed, &[3]);
    let blade_phases: Vec<f64> = (0..clean.blades())
        .map(|_| spec.blade_phase * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let mut noisy = add_noise(
        &apply_blade_phase(&clean, &blade_phases)?,
        &psi,
        sigma,
        derive_seed(spec.seed, &[4]),
    )?;
    let prescan_psi = NoiseCovariance::new(psi.psi.map(|v| v * sigma * sigma))?;
    noisy.prescan = Some(make_noise_prescan(
        &prescan_psi,
        spec.prescan_samples,
        derive_seed(spec.seed, &[5]),
    )?);
    Ok(Scenario {
        truth,
        maps,
        psi,
        clean,
        noisy,
        sigma,
        blade_phases,
    })
}
