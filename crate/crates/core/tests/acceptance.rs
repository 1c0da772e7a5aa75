//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

use std::time::{Duration, Instant};

use ndarray::{s, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use tempfile::tempdir;

use propeller_lab::config::ReconConfig;
use propeller_lab::diffkit::checks::OP_TOLERANCE;
use propeller_lab::grappa::{calibrate, grappa_dataset, synthesize, GrappaConfig, KernelGeometry};
use propeller_lab::harness::experiment::{run_experiment, train_suite_model, SuiteConfig, GRAPPA, MPPCA, SSL};
use propeller_lab::harness::{make_scenario, nrmse, recon_grappa_pipeline, recon_mppca_pipeline, recon_ssl_pipeline, ScenarioSpec};
use propeller_lab::linalg::{svd, CMatrix};
use propeller_lab::mppca::{denoise_coil_stack, mp_threshold, PatchSpec};
use propeller_lab::nufft::{direct_dft, GridPlan};
use propeller_lab::phantom::{apply_blade_phase, make_coil_maps, make_phantom, simulate_kspace, CoilProfile, PhantomSpec};
use propeller_lab::rng::stream_rng;
use propeller_lab::sslrecon::checks::{gradcheck_suite, PIPELINE_TOLERANCE};
use propeller_lab::sslrecon::{split_masks, UnrolledModel};
use propeller_lab::trajectory::{gen_propeller, BladePattern, BladeTrajectory, PropellerSpec};
use propeller_lab::{Image, C64};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn crandn(rng: &mut impl Rng) -> C64 {
    let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn max_rel(a: &[C64], b: &[C64]) -> f64 {
    let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max) / scale
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn operator_correctness() -> Outcome {
    let start = Instant::now();
    let traj = gen_propeller(32, 12, 8, 1, 0).unwrap();
    let plan = GridPlan::new(traj.coords(), 32, 2.0, 4).unwrap();
    let mut rng = stream_rng(1, &[]);
    let x = Image::from_shape_fn((32, 32), |_| crandn(&mut rng));
    let y: Vec<C64> = (0..plan.len()).map(|_| crandn(&mut rng)).collect();
    let fx = plan.forward(x.view()).unwrap();
    let err = max_rel(&fx, &direct_dft(traj.coords(), x.view()));
    let lhs = dot(&fx, &y);
    let rhs = dot(x.as_slice().unwrap(), plan.adjoint(&y, None).unwrap().as_slice().unwrap());
    let adj = (lhs - rhs).norm() / lhs.norm();
    let t = start.elapsed();
    outcome(
        err < 1e-3 && adj < 1e-10 && t < Duration::from_secs(10),
        format!("forward vs DFT {err:.2e}, adjointness {adj:.2e}, {:.2}s", t.as_secs_f64()),
    )
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let entries = gradcheck_suite(0).unwrap();
    let t = start.elapsed();
    let mut worst_op: f64 = 0.0;
    let mut worst_pipe: f64 = 0.0;
    let mut ok = t < Duration::from_secs(60);
    for e in &entries {
        let err = e.report.max_rel_error();
        if e.tolerance == PIPELINE_TOLERANCE {
            worst_pipe = worst_pipe.max(err);
        } else {
            ok &= e.tolerance <= OP_TOLERANCE;
            worst_op = worst_op.max(err);
        }
        ok &= e.passed();
    }
    outcome(
        ok,
        format!(
            "{} checks, worst op {worst_op:.2e}, end-to-end {worst_pipe:.2e}, {:.1}s",
            entries.len(),
            t.as_secs_f64()
        ),
    )
}

fn mppca_statistics() -> Outcome {
    let (rows, cols) = (200, 32);
    let mut sigmas = 0.0;
    let mut low_rank = 0;
    for seed in 0..100 {
        let mut rng = stream_rng(seed, &[0x6d70]);
        let m = CMatrix::from_fn(rows, cols, |_, _| crandn(&mut rng));
        let (rank, sigma) = mp_threshold(&svd(&m).s, rows, cols).unwrap();
        sigmas += sigma;
        low_rank += (rank <= 2) as usize;
    }
    let mean_sigma = sigmas / 100.0;
    let mut rng = stream_rng(7, &[]);
    let weights: Vec<C64> = (0..8).map(|_| crandn(&mut rng)).collect();
    let img = make_phantom(&PhantomSpec::randomized(32, 7)).unwrap();
    let stack = Array3::from_shape_fn((8, 32, 32), |(c, y, x)| weights[c] * img[[y, x]]);
    let out = denoise_coil_stack(&stack, &PatchSpec::default()).unwrap();
    let change = out.iter().zip(&stack).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
        / stack.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    outcome(
        (mean_sigma - 1.0).abs() < 0.1 && low_rank >= 95 && change < 1e-8,
        format!("mean sigma {mean_sigma:.4}, rank <= 2 in {low_rank}/100, rank-1 change {change:.2e}"),
    )
}

/// Every line a sum of separable exponentials, so one shift-invariant
/// kernel reproduces each skipped line exactly.
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

fn consistent_blade_error() -> f64 {
    let geom = KernelGeometry { source_lines: 2, taps: 5 };
    let (coils, lines, readout) = (4, 9, 48);
    let full = exponential_block(coils, lines, readout, coils * geom.sources_per_coil(), 11);
    let acs = 2..7;
    let pattern = BladePattern {
        r: 2,
        phase: 0,
        acquired: (0..lines).map(|l| l % 2 == 0 || acs.contains(&l)).collect(),
        acs: (0..lines).map(|l| acs.contains(&l)).collect(),
    };
    let k = calibrate(full.slice(s![.., 2..7, ..]), 2, geom, 0.0).unwrap();
    let mut blade = full.clone();
    for l in [1, 7] {
        blade.slice_mut(s![.., l, ..]).fill(C64::default());
    }
    let filled = synthesize(blade.view(), &pattern, &k).unwrap();
    [1, 7]
        .iter()
        .map(|&l| {
            let got: Vec<C64> = filled.slice(s![.., l, 2..readout - 2]).iter().copied().collect();
            let want: Vec<C64> = full.slice(s![.., l, 2..readout - 2]).iter().copied().collect();
            max_rel(&got, &want)
        })
        .fold(0.0, f64::max)
}

/// Worst per-blade NRMSE of R=2 GRAPPA against the fully sampled blades.
fn worst_blade_nrmse(lines: usize, acs: usize) -> f64 {
    let truth = make_phantom(&PhantomSpec::randomized(64, 3)).unwrap();
    let maps = make_coil_maps(8, 64, CoilProfile::GaussianRing).unwrap();
    let under = simulate_kspace(
        &truth,
        &maps,
        &BladeTrajectory::from_spec(&PropellerSpec::new(64, 18, lines, 2, acs)).unwrap(),
    )
    .unwrap();
    let full = simulate_kspace(
        &truth,
        &maps,
        &BladeTrajectory::from_spec(&PropellerSpec::new(64, 18, lines, 1, 0)).unwrap(),
    )
    .unwrap();
    let filled = grappa_dataset(&under, &GrappaConfig::default()).unwrap();
    (0..under.blades())
        .map(|b| {
            let f = filled.samples().index_axis(Axis(0), b);
            let t = full.samples().index_axis(Axis(0), b);
            let err: f64 = f.iter().zip(t.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
            (err / t.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
        })
        .fold(0.0, f64::max)
}

fn grappa_recovery() -> Outcome {
    let exact = consistent_blade_error();
    let wide = worst_blade_nrmse(24, 6);
    let desk = worst_blade_nrmse(8, 4);
    outcome(
        exact < 1e-10 && wide < 0.05,
        format!("kernel-consistent {exact:.2e}, smooth-map worst blade {wide:.4} (24 lines); desk 8-line blades {desk:.4}, informational"),
    )
}

fn phase_roundtrip() -> Outcome {
    let cfg = ReconConfig::default();
    let truth = make_phantom(&PhantomSpec::randomized(64, 4)).unwrap();
    let maps = make_coil_maps(8, 64, CoilProfile::GaussianRing).unwrap();
    let ds = simulate_kspace(&truth, &maps, &BladeTrajectory::from_spec(&PropellerSpec::desk()).unwrap()).unwrap();
    let reference = recon_grappa_pipeline(&ds, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let mut rng = stream_rng(seed, &[0x7068]);
        let phases: Vec<f64> = (0..ds.blades())
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * std::f64::consts::PI)
            .collect();
        let img = recon_grappa_pipeline(&apply_blade_phase(&ds, &phases).unwrap(), &cfg).unwrap();
        worst = worst.max(nrmse(&img, &reference).unwrap());
    }
    outcome(worst < 1e-4, format!("worst magnitude NRMSE {worst:.2e} over 3 phase draws"))
}

/// Desk comparison schedule: 30 epochs at lr 1e-3 on four noisy phantoms,
/// scored on ten held-out phantoms at 15% noise.
fn desk_suite() -> SuiteConfig {
    let mut suite = SuiteConfig::default();
    suite.recon.ssl.epochs = 30;
    suite.recon.ssl.lr = 1e-3;
    suite.recon.ssl.patience = 0;
    suite.test_seeds = (1..=10).collect();
    suite.train_seeds = (101..=104).collect();
    suite
}

fn method_comparison() -> (Outcome, Outcome) {
    let start = Instant::now();
    let out = run_experiment(&desk_suite(), None, None).unwrap();
    let t = start.elapsed();
    let r = &out.report;
    let g = r.median_nrmse(GRAPPA, 2).unwrap();
    let m = r.median_nrmse(MPPCA, 2).unwrap();
    let s2 = r.median_nrmse(SSL, 2).unwrap();
    let s4 = r.median_nrmse(SSL, 4).unwrap();
    let ordering = outcome(
        s2 < m && m < g && s2 <= 0.8 * g && t < Duration::from_secs(7200),
        format!(
            "median NRMSE SSL {s2:.4} < MPPCA {m:.4} < GRAPPA {g:.4}, SSL/GRAPPA {:.3}, {:.0}s",
            s2 / g,
            t.as_secs_f64()
        ),
    );
    let rel = (s4 - s2).abs() / s2;
    let robust = outcome(rel <= 0.15, format!("SSL R=4 {s4:.4} vs R=2 {s2:.4}, relative {rel:.3}"));
    (ordering, robust)
}

fn mask_algebra() -> Outcome {
    let acquired = BladeTrajectory::from_spec(&PropellerSpec::desk()).unwrap().acquired_mask();
    let mut failures = 0;
    for i in 0..1000u64 {
        let ratio = 0.3 + 0.69 * i as f64 / 999.0;
        let pair = split_masks(&acquired, ratio, i).unwrap();
        let mut ok = pair.partitions(&acquired);
        for (m, l1) in acquired.outer_iter().zip(pair.lambda1.outer_iter()) {
            for (ml, ll) in m.outer_iter().zip(l1.outer_iter()) {
                let n = ml.iter().filter(|&&v| v).count();
                let k = ll.iter().filter(|&&v| v).count();
                ok &= (k as f64 - ratio * n as f64).abs() <= 1.0;
            }
        }
        failures += (!ok) as usize;
    }
    outcome(failures == 0, format!("{failures} of 1000 splits violate the partition or count"))
}

fn tiny_suite() -> SuiteConfig {
    let mut suite = SuiteConfig::default();
    suite.scenario.traj = PropellerSpec::new(32, 12, 8, 2, 4);
    suite.scenario.coils = 4;
    suite.scenario.prescan_samples = 400;
    suite.recon.ssl.cascades = 2;
    suite.recon.ssl.width = 4;
    suite.recon.ssl.epochs = 3;
    suite.recon.ssl.lr = 1e-3;
    suite.test_seeds = vec![1, 2];
    suite.train_seeds = vec![201, 202];
    suite
}

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

fn checkpoint_bytes(model: &UnrolledModel) -> Vec<(String, Vec<u8>)> {
    let dir = tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let suite = tiny_suite();
    let run = |threads: usize| {
        with_threads(threads, || {
            let (model, records) = train_suite_model(&suite).unwrap();
            let sc = make_scenario(
                &ScenarioSpec {
                    seed: 5,
                    ..suite.scenario.clone()
                },
                &suite.recon,
            )
            .unwrap();
            let images = vec![
                recon_grappa_pipeline(&sc.noisy, &suite.recon).unwrap(),
                recon_mppca_pipeline(&sc.noisy, &suite.recon).unwrap(),
                recon_ssl_pipeline(&model, &sc.noisy, &suite.recon).unwrap(),
            ];
            let losses: Vec<f64> = records.iter().map(|r| r.loss).collect();
            let report = run_experiment(&suite, Some(model.clone()), None).unwrap().report;
            (checkpoint_bytes(&model), losses, images, report)
        })
    };
    let a = run(1);
    let b = run(1);
    let c = run(4);
    let (runs, threads) = (a == b, a == c);
    outcome(
        runs && threads,
        format!("repeat run identical: {runs}, 1 vs 4 threads identical: {threads}"),
    )
}

#[test]
fn acceptance() {
    let mut results = vec![
        ("1 operator correctness", operator_correctness()),
        ("2 gradient integrity", gradient_integrity()),
        ("3 MPPCA statistics", mppca_statistics()),
        ("4 GRAPPA recovery", grappa_recovery()),
        ("5 phase correction round-trip", phase_roundtrip()),
    ];
    let (ordering, robust) = method_comparison();
    results.push(("6 method ordering", ordering));
    results.push(("7 acceleration robustness", robust));
    results.push(("8 mask algebra", mask_algebra()));
    results.push(("9 determinism", determinism()));
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
