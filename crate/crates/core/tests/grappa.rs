use ndarray::{s, Array3, Axis};
use proptest::prelude::*;
use rand::Rng;

use propeller_lab::grappa::{calibrate, grappa_dataset, synthesize, GrappaConfig, KernelGeometry};
use propeller_lab::linalg::CMatrix;
use propeller_lab::phantom::{make_coil_maps, make_phantom, simulate_kspace, CoilProfile, PhantomSpec};
use propeller_lab::rng::stream_rng;
use propeller_lab::trajectory::{BladePattern, BladeTrajectory, PropellerSpec};
use propeller_lab::C64;

fn crandn(rng: &mut impl Rng) -> C64 {
    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
}

const GEOM: KernelGeometry = KernelGeometry { source_lines: 2, taps: 5 };

/// Block whose every line is a sum of `modes` separable exponentials
/// `a[c,m]·z_m^line·w_m^x` with unit-modulus `z`, `w`. Any such block obeys a
/// shift-invariant GRAPPA kernel once the number of modes equals the number
/// of kernel sources per target.
fn exponential_block(coils: usize, lines: usize, readout: usize, modes: usize, seed: u64) -> Array3<C64> {
    let mut rng = stream_rng(seed, &[]);
    let z: Vec<C64> = (0..modes)
        .map(|_| C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
        .collect();
    let w: Vec<C64> = (0..modes)
        .map(|_| C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
        .collect();
    let a: Vec<C64> = (0..coils * modes).map(|_| crandn(&mut rng)).collect();
    Array3::from_shape_fn((coils, lines, readout), |(c, l, x)| {
        (0..modes)
            .map(|m| a[c * modes + m] * z[m].powu(l as u32) * w[m].powu(x as u32))
            .sum()
    })
}

fn max_rel(a: &[C64], b: &[C64]) -> f64 {
    let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max) / scale
}

#[test]
fn known_kernel_is_recovered_from_synthesized_acs() {
    let (coils, readout) = (3, 40);
    let cols = coils * GEOM.sources_per_coil();
    let mut rng = stream_rng(5, &[]);
    let truth = CMatrix::from_fn(cols, coils, |_, _| crandn(&mut rng));
    // Lines 0 and 2 are random sources; line 1 is the kernel applied to
    // them wherever the full 5-tap neighbourhood exists.
    let mut acs = Array3::from_shape_fn((coils, 3, readout), |_| crandn(&mut rng));
    for x in 2..readout - 2 {
        let mut src = Vec::with_capacity(cols);
        for c in 0..coils {
            for line in [0, 2] {
                for d in 0..5 {
                    src.push(acs[[c, line, x + d - 2]]);
                }
            }
        }
        for c in 0..coils {
            acs[[c, 1, x]] = (0..cols).map(|i| truth[(i, c)] * src[i]).sum();
        }
    }
    let k = calibrate(acs.view(), 2, GEOM, 0.0).unwrap();
    let err = (&k.weights[0] - &truth).iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(err < 1e-8, "kernel error {err:e}");
}

#[test]
fn kernel_consistent_blade_is_recovered_exactly() {
    let (coils, lines, readout) = (4, 9, 48);
    let modes = coils * GEOM.sources_per_coil();
    let full = exponential_block(coils, lines, readout, modes, 11);
    // Lattice lines 0,2,…,8 plus ACS 2..6; gaps 1 and 7 have both sources.
    let acs_lines = 2..7;
    let pattern = BladePattern {
        r: 2,
        phase: 0,
        acquired: (0..lines).map(|l| l % 2 == 0 || acs_lines.contains(&l)).collect(),
        acs: (0..lines).map(|l| acs_lines.contains(&l)).collect(),
    };
    let k = calibrate(full.slice(s![.., 2..7, ..]), 2, GEOM, 0.0).unwrap();
    let mut blade = full.clone();
    for l in [1, 7] {
        blade.slice_mut(s![.., l, ..]).fill(C64::default());
    }
    let filled = synthesize(blade.view(), &pattern, &k).unwrap();
    for l in [1, 7] {
        let got: Vec<C64> = filled.slice(s![.., l, 2..readout - 2]).iter().copied().collect();
        let want: Vec<C64> = full.slice(s![.., l, 2..readout - 2]).iter().copied().collect();
        let err = max_rel(&got, &want);
        assert!(err < 1e-10, "line {l}: relative error {err:e}");
    }
    for l in (0..lines).filter(|&l| pattern.acquired[l]) {
        assert_eq!(filled.index_axis(Axis(1), l), blade.index_axis(Axis(1), l));
    }
}

/// Per-blade, per-line squared error of R=2 GRAPPA against the fully
/// sampled simulation, each normalized by the blade energy.
fn line_errors(lines: usize, acs: usize, seed: u64) -> Vec<Vec<f64>> {
    let truth = make_phantom(&PhantomSpec::randomized(64, seed)).unwrap();
    let maps = make_coil_maps(8, 64, CoilProfile::GaussianRing).unwrap();
    let r2 = BladeTrajectory::from_spec(&PropellerSpec::new(64, 18, lines, 2, acs)).unwrap();
    let r1 = BladeTrajectory::from_spec(&PropellerSpec::new(64, 18, lines, 1, 0)).unwrap();
    let under = simulate_kspace(&truth, &maps, &r2).unwrap();
    let full = simulate_kspace(&truth, &maps, &r1).unwrap();
    let filled = grappa_dataset(&under, &GrappaConfig::default()).unwrap();
    (0..under.blades())
        .map(|b| {
            let f = filled.samples().index_axis(Axis(0), b);
            let t = full.samples().index_axis(Axis(0), b);
            let energy: f64 = t.iter().map(|v| v.norm_sqr()).sum();
            (0..lines)
                .map(|l| {
                    let (fl, tl) = (f.index_axis(Axis(1), l), t.index_axis(Axis(1), l));
                    fl.iter().zip(tl.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / energy
                })
                .collect()
        })
        .collect()
}

#[test]
fn smooth_map_r2_wide_blades_within_five_percent() {
    let worst = line_errors(24, 6, 3)
        .iter()
        .map(|b| b.iter().sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    assert!(worst < 0.05, "worst blade NRMSE {worst:.4}");
}

#[test]
fn desk_blade_error_is_confined_to_unpaired_edge_line() {
    for blade in line_errors(8, 4, 3) {
        let interior: f64 = blade[..7].iter().sum::<f64>().sqrt();
        assert!(interior < 0.05, "interior NRMSE {interior:.4}");
        assert_eq!(blade[0], 0.0);
    }
}

#[test]
fn acquired_samples_untouched_by_dataset_grappa() {
    let truth = make_phantom(&PhantomSpec::shepp_logan(32)).unwrap();
    let maps = make_coil_maps(4, 32, CoilProfile::GaussianRing).unwrap();
    let traj = BladeTrajectory::from_spec(&PropellerSpec::new(32, 6, 8, 2, 4)).unwrap();
    let ds = simulate_kspace(&truth, &maps, &traj).unwrap();
    let filled = grappa_dataset(&ds, &GrappaConfig::default()).unwrap();
    assert!(filled.mask().iter().all(|&m| m));
    for ((b, c, l, r), v) in ds.samples().indexed_iter() {
        if ds.mask()[[b, l, r]] {
            assert_eq!(filled.samples()[[b, c, l, r]], *v);
        }
    }
}

/// Mean relative error of the fitted kernel's prediction on noiseless
/// held-out data, with the ACS corrupted by noise.
fn calibration_error(acs_lines: usize, seed: u64) -> f64 {
    let coils = 2;
    let geom = KernelGeometry { source_lines: 2, taps: 3 };
    let modes = coils * geom.sources_per_coil();
    let clean = exponential_block(coils, acs_lines + 3, 32, modes, seed);
    let mut rng = stream_rng(seed, &[1]);
    let noisy = clean.mapv(|v| v + crandn(&mut rng) * 0.05);
    let k = calibrate(noisy.slice(s![.., ..acs_lines, ..]), 2, geom, 1e-4).unwrap();
    // Predict the last held-out line from its neighbours in the clean block.
    let t = acs_lines + 1;
    let pattern = BladePattern {
        r: 2,
        phase: (t % 2) ^ 1,
        acquired: (0..acs_lines + 3).map(|l| l != t).collect(),
        acs: vec![false; acs_lines + 3],
    };
    let mut blade = clean.clone();
    blade.slice_mut(s![.., t, ..]).fill(C64::default());
    let filled = synthesize(blade.view(), &pattern, &k).unwrap();
    let got: Vec<C64> = filled.slice(s![.., t, 1..31]).iter().copied().collect();
    let want: Vec<C64> = clean.slice(s![.., t, 1..31]).iter().copied().collect();
    let num: f64 = got.iter().zip(&want).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = want.iter().map(|v| v.norm_sqr()).sum();
    (num / den).sqrt()
}

#[test]
fn noisy_calibration_improves_with_more_acs_lines() {
    let avg = |lines: usize| (0..8).map(|s| calibration_error(lines, s)).sum::<f64>() / 8.0;
    let errs: Vec<f64> = [4, 6, 10, 16].iter().map(|&l| avg(l)).collect();
    for w in errs.windows(2) {
        assert!(w[1] < w[0], "errors not decreasing: {errs:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn calibration_is_scale_equivariant(seed in 0u64..1000, re in -3.0f64..3.0, im in -3.0f64..3.0) {
        prop_assume!(re.hypot(im) > 0.1);
        let alpha = C64::new(re, im);
        let mut rng = stream_rng(seed, &[]);
        let acs = Array3::from_shape_fn((2, 4, 24), |_| crandn(&mut rng));
        let a = calibrate(acs.view(), 2, GEOM, 1e-4).unwrap();
        let b = calibrate(acs.mapv(|v| v * alpha).view(), 2, GEOM, 1e-4).unwrap();
        let scale = a.weights[0].iter().map(|v| v.norm()).fold(0.0, f64::max);
        let diff = (&a.weights[0] - &b.weights[0]).iter().map(|v| v.norm()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-10 * scale.max(1.0), "diff {diff:e}");
    }

    #[test]
    fn synthesis_keeps_acquired_lines_bit_identical(seed in 0u64..1000) {
        let mut rng = stream_rng(seed, &[]);
        let acs = Array3::from_shape_fn((2, 4, 24), |_| crandn(&mut rng));
        let k = calibrate(acs.view(), 2, GEOM, 1e-4).unwrap();
        let blade = Array3::from_shape_fn((2, 8, 24), |_| crandn(&mut rng));
        let pattern = BladePattern::from_spec(&PropellerSpec::new(24, 4, 8, 2, 4));
        let out = synthesize(blade.view(), &pattern, &k).unwrap();
        for l in (0..8).filter(|&l| pattern.acquired[l]) {
            prop_assert_eq!(out.index_axis(Axis(1), l), blade.index_axis(Axis(1), l));
        }
    }
}
