use std::process::Command;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use tempfile::tempdir;

use propeller_lab::config::ReconConfig;
use propeller_lab::harness::experiment::{run_experiment, SuiteConfig, GRAPPA, MPPCA, MPPCA_FLAGGED, SSL};
use propeller_lab::harness::pipelines::gridded_coil_images;
use propeller_lab::harness::render::{difference_image, pgm_bytes, read_pgm, write_magnitude_pgm};
use propeller_lab::harness::{make_scenario, nrmse, psnr, recon_grappa_pipeline, recon_mppca_pipeline, ssim, MetricsReport, ScenarioSpec};
use propeller_lab::nufft::GridPlan;
use propeller_lab::phantom::{make_phantom, PhantomSpec};
use propeller_lab::rng::stream_rng;
use propeller_lab::trajectory::PropellerSpec;
use propeller_lab::{Image, KSpaceDataset, C64};

fn phantom(seed: u64) -> Image {
    make_phantom(&PhantomSpec::randomized(64, seed)).unwrap()
}

#[test]
fn nrmse_endpoints() {
    let x = phantom(1);
    assert_eq!(nrmse(&x, &x).unwrap(), 0.0);
    assert_eq!(nrmse(&Image::zeros((64, 64)), &x).unwrap(), 1.0);
    assert!(psnr(&x, &x).unwrap().is_infinite());
    assert!(nrmse(&x, &Image::zeros((64, 64))).is_err());
    assert!(nrmse(&Image::zeros((32, 32)), &x).is_err());
}

#[test]
fn nrmse_of_a_known_noise_field() {
    // A constant positive reference plus small real noise: the magnitude
    // error is the noise itself, so NRMSE ≈ σ.
    let mut rng = stream_rng(2, &[]);
    let reference = Image::from_elem((128, 128), C64::new(1.0, 0.0));
    let sigma = 0.05;
    let noisy = reference.mapv(|v| v + C64::new(sigma * rng.sample::<f64, _>(StandardNormal), 0.0));
    let e = nrmse(&noisy, &reference).unwrap();
    assert!((e / sigma - 1.0).abs() < 0.05, "nrmse {e}");
}

#[test]
fn ssim_of_identical_images_is_one() {
    let x = phantom(3);
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    let blurred = x.mapv(|v| v * 0.5);
    assert!(ssim(&blurred, &x).unwrap() < 1.0);
    assert!(ssim(&Image::zeros((4, 4)), &Image::zeros((4, 4))).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn nrmse_is_invariant_to_joint_scaling(seed in 0u64..1000, alpha in 0.01f64..100.0, phi in -3.0f64..3.0) {
        let reference = phantom(seed);
        let mut rng = stream_rng(seed, &[1]);
        let x = reference.mapv(|v| v + C64::new(rng.random::<f64>() - 0.5, 0.0) * 0.1);
        let rot = C64::from_polar(alpha, phi);
        let a = nrmse(&x, &reference).unwrap();
        let b = nrmse(&x.mapv(|v| v * rot), &reference.mapv(|v| v * rot)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        let p = psnr(&x, &reference).unwrap();
        let q = psnr(&x.mapv(|v| v * rot), &reference.mapv(|v| v * alpha)).unwrap();
        prop_assert!((p - q).abs() < 1e-9);
    }
}

#[test]
fn difference_of_identical_images_is_zero() {
    let x = phantom(4);
    assert!(difference_image(&x, &x).unwrap().iter().all(|&v| v == 0.0));
    let d = difference_image(&x.mapv(|v| v * 1.1), &x).unwrap();
    let want = x.mapv(|v| 5.0 * 0.1 * v.norm());
    assert!(d.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn pgm_is_binary_p5() {
    let values = Array2::from_shape_fn((3, 5), |(y, x)| (y * 5 + x) as f64);
    let bytes = pgm_bytes(&values, 14.0);
    assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
    assert_eq!(bytes.len(), 11 + 15);
    assert_eq!(bytes[11], 0);
    assert_eq!(*bytes.last().unwrap(), 255);
    assert!(pgm_bytes(&values, 0.0)[11..].iter().all(|&b| b == 0));

    let dir = tempdir().unwrap();
    let path = dir.path().join("x.pgm");
    write_magnitude_pgm(&path, &phantom(5)).unwrap();
    let (w, h, pixels) = read_pgm(&path).unwrap();
    assert_eq!((w, h, pixels.len()), (64, 64, 64 * 64));
}

fn zeroed(ds: &KSpaceDataset) -> KSpaceDataset {
    let (spec, samples, mask, prescan, meta) = ds.clone().into_parts();
    KSpaceDataset::new(spec, samples.mapv(|_| C64::default()), mask, prescan, meta).unwrap()
}

#[test]
fn zero_kspace_gives_zero_images() {
    let cfg = ReconConfig::default();
    let spec = ScenarioSpec {
        traj: PropellerSpec::new(32, 12, 8, 2, 4),
        coils: 4,
        prescan_samples: 200,
        ..ScenarioSpec::default()
    };
    let ds = zeroed(&make_scenario(&spec, &cfg).unwrap().clean);
    let traj = ds.trajectory().unwrap();
    let plan = GridPlan::with_config(traj.coords(), 32, &cfg.nufft).unwrap();
    assert!(gridded_coil_images(&ds, &plan, &cfg).unwrap().iter().all(|v| *v == C64::default()));
    assert!(recon_grappa_pipeline(&ds, &cfg).unwrap().iter().all(|v| *v == C64::default()));
    assert!(recon_mppca_pipeline(&ds, &cfg).unwrap().iter().all(|v| *v == C64::default()));
}

#[test]
fn fully_sampled_noiseless_grappa_matches_truth() {
    let cfg = ReconConfig::default();
    let spec = ScenarioSpec {
        traj: PropellerSpec::new(64, 18, 8, 1, 0),
        ..ScenarioSpec::default()
    };
    let sc = make_scenario(&spec, &cfg).unwrap();
    let img = recon_grappa_pipeline(&sc.clean, &cfg).unwrap();
    let e = nrmse(&img, &sc.truth).unwrap();
    assert!(e < 0.03, "nrmse {e:.4}");
}

fn small_suite() -> SuiteConfig {
    let mut suite = SuiteConfig::default();
    suite.scenario.traj = PropellerSpec::new(32, 12, 8, 2, 4);
    suite.scenario.coils = 4;
    suite.scenario.prescan_samples = 400;
    suite.recon.ssl.cascades = 1;
    suite.recon.ssl.width = 4;
    suite.recon.ssl.epochs = 1;
    suite.train_seeds = vec![201];
    suite
}

#[test]
fn experiment_writes_metrics_and_renders() {
    let dir = tempdir().unwrap();
    let out = run_experiment(&small_suite(), None, Some(dir.path())).unwrap();
    assert_eq!(out.report.rows.len(), 25);
    for (method, r) in [(GRAPPA, 2), (MPPCA, 2), (SSL, 2), (MPPCA_FLAGGED, 4), (SSL, 4)] {
        assert_eq!(out.report.rows_for(method, r).count(), 5, "{method} R{r}");
    }
    let csv = dir.path().join("metrics.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "dataset,method,R,nrmse,psnr,ssim");
    assert_eq!(MetricsReport::read_csv(&csv).unwrap(), out.report);
    assert_eq!(out.records.len(), 1);
}

#[test]
fn cli_simulates_and_reconstructs() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("suite.json");
    std::fs::write(&cfg, r#"{"scenario": {"traj": {"matrix": 32, "nblades": 12, "lines_per_blade": 8, "readout": 32, "inblade_r": 2, "acs_lines": 4}, "coils": 4, "prescan_samples": 200}}"#).unwrap();
    let bin = env!("CARGO_BIN_EXE_propeller-lab");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let c = p("suite.json");
    run(&["sim", "--config", &c, "--out", &p("ds"), "--seed", "3"]);
    run(&[
        "recon",
        "--config",
        &c,
        "--in",
        &p("ds"),
        "--out",
        &p("img"),
        "--pgm",
        &p("img.pgm"),
    ]);
    run(&["denoise", "mppca", "--config", &c, "--in", &p("ds"), "--out", &p("den")]);
    assert!(dir.path().join("img.pgm").exists());
    let bad = Command::new(bin)
        .args(["recon", "--in", &p("missing"), "--out", &p("x")])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
