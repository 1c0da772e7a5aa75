use std::f64::consts::PI;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use propeller_lab::coiltools::rss_combine;
use propeller_lab::nufft::GridPlan;
use propeller_lab::phantom::{
    add_noise, apply_blade_phase, make_coil_maps, make_phantom, simulate_kspace, CoilProfile, NoiseCovariance, PhantomSpec,
};
use propeller_lab::phasecorr::{correct_blades, dc_phase_spread};
use propeller_lab::rng::stream_rng;
use propeller_lab::trajectory::{density_comp, gen_propeller, BladeTrajectory, PropellerSpec};
use propeller_lab::{KSpaceDataset, C64};

fn desk_dataset(nblades: usize, seed: u64) -> KSpaceDataset {
    let truth = make_phantom(&PhantomSpec::randomized(32, seed)).unwrap();
    let maps = make_coil_maps(4, 32, CoilProfile::GaussianRing).unwrap();
    let traj = BladeTrajectory::from_spec(&PropellerSpec::new(32, nblades, 8, 2, 4)).unwrap();
    simulate_kspace(&truth, &maps, &traj).unwrap()
}

fn max_rel(a: &KSpaceDataset, b: &KSpaceDataset) -> f64 {
    let scale = b.samples().iter().map(|v| v.norm()).fold(0.0, f64::max);
    a.samples().iter().zip(b.samples()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max) / scale
}

/// Density-compensated gridding per coil, combined by root-sum-of-squares.
fn gridded_rss(ds: &KSpaceDataset) -> Array2<f64> {
    let traj = ds.trajectory().unwrap();
    let plan = GridPlan::new(traj.coords(), traj.matrix(), 2.0, 6).unwrap();
    let w = density_comp(&traj, &plan, 10).unwrap();
    let coils = plan.adjoint_coils(&ds.coil_vectors(), Some(&w.weights)).unwrap();
    rss_combine(&coils)
}

fn random_phases(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, &[9]);
    (0..n).map(|_| rng.random::<f64>() * 2.0 * PI - PI).collect()
}

#[test]
fn consistent_data_passes_through() {
    let ds = desk_dataset(6, 1);
    let out = correct_blades(&ds).unwrap();
    assert!(max_rel(&out.dataset, &ds) < 1e-6);
    assert!(out.phases.iter().all(|p| p.abs() < 1e-6), "{:?}", out.phases);
}

#[test]
fn constant_offsets_are_removed() {
    let ds = desk_dataset(8, 2);
    let corrupted = apply_blade_phase(&ds, &random_phases(8, 2)).unwrap();
    assert!(dc_phase_spread(&corrupted).unwrap() > 0.1);
    let fixed = correct_blades(&corrupted).unwrap().dataset;
    let spread = dc_phase_spread(&fixed).unwrap();
    assert!(spread < 1e-3, "residual DC spread {spread:e}");
}

#[test]
fn noisy_offsets_are_removed() {
    let ds = desk_dataset(8, 3);
    let peak = ds.samples().iter().map(|v| v.norm()).fold(0.0, f64::max);
    let noisy = add_noise(&ds, &NoiseCovariance::identity(4), 0.01 * peak, 3).unwrap();
    let phases = random_phases(8, 3);
    let fixed = correct_blades(&apply_blade_phase(&noisy, &phases).unwrap()).unwrap().dataset;
    let reference = correct_blades(&noisy).unwrap().dataset;
    // Both follow the same iteration up to one global phase.
    let a = gridded_rss(&fixed);
    let b = gridded_rss(&reference);
    let scale = b.iter().cloned().fold(0.0, f64::max);
    let err = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6 * scale, "{err:e}");
}

#[test]
fn single_blade_correction_is_a_global_phase() {
    let traj = gen_propeller(32, 1, 8, 1, 0).unwrap();
    let truth = make_phantom(&PhantomSpec::randomized(32, 4)).unwrap();
    let maps = make_coil_maps(3, 32, CoilProfile::GaussianRing).unwrap();
    let ds = apply_blade_phase(&simulate_kspace(&truth, &maps, &traj).unwrap(), &[1.2]).unwrap();
    let out = correct_blades(&ds).unwrap();
    let ratio = out.dataset.samples()[[0, 0, 4, 16]] / ds.samples()[[0, 0, 4, 16]];
    for (a, b) in out.dataset.samples().iter().zip(ds.samples()) {
        assert!((a - b * ratio).norm() < 1e-12 * b.norm().max(1.0));
    }
    let a = gridded_rss(&out.dataset);
    let b = gridded_rss(&ds);
    let err = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10 * b.iter().cloned().fold(0.0, f64::max));
}

#[test]
fn missing_centre_is_empty_selection() {
    let ds = desk_dataset(2, 5);
    let (spec, samples, mut mask, prescan, meta) = ds.into_parts();
    let mut samples = samples;
    mask[[1, 4, 16]] = false;
    for c in 0..4 {
        samples[[1, c, 4, 16]] = C64::default();
    }
    let holed = KSpaceDataset::new(spec, samples, mask, prescan, meta).unwrap();
    assert!(matches!(correct_blades(&holed), Err(propeller_lab::Error::EmptySelection(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn correction_is_idempotent(seed in 0u64..1000) {
        let ds = desk_dataset(6, seed);
        let corrupted = apply_blade_phase(&ds, &random_phases(6, seed)).unwrap();
        let once = correct_blades(&corrupted).unwrap().dataset;
        let twice = correct_blades(&once).unwrap().dataset;
        prop_assert!(max_rel(&twice, &once) < 1e-6);
    }

    #[test]
    fn combined_magnitude_ignores_blade_phases(seed in 0u64..1000) {
        let ds = desk_dataset(6, seed);
        let clean = gridded_rss(&correct_blades(&ds).unwrap().dataset);
        let corrupted = apply_blade_phase(&ds, &random_phases(6, seed)).unwrap();
        let fixed = gridded_rss(&correct_blades(&corrupted).unwrap().dataset);
        let scale = clean.iter().cloned().fold(0.0, f64::max);
        let err = fixed.iter().zip(&clean).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-6 * scale, "{:e}", err / scale);
    }
}

#[test]
fn phases_vector_matches_blades() {
    let ds = desk_dataset(5, 6);
    assert_eq!(correct_blades(&ds).unwrap().phases.len(), 5);
}
