//! GRAPPA, MPPCA and SSL on seeded noisy phantoms at R=2 and R=4, with
//! metrics, renders and difference images.
//!
//! cargo run --release --example method_comparison -- [out_dir] [epochs]

use std::path::PathBuf;

use propeller_lab::harness::experiment::{run_experiment, SuiteConfig, GRAPPA, MPPCA, MPPCA_FLAGGED, SSL};

fn main() -> propeller_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/method_comparison".into()));
    let epochs = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(30);

    let mut suite = SuiteConfig::default();
    suite.recon.ssl.epochs = epochs;
    suite.recon.ssl.lr = 1e-3;
    suite.test_seeds = (1..=10).collect();
    let result = run_experiment(&suite, None, Some(&out))?;
    println!("{:<14} {:>2} {:>14}", "method", "R", "median NRMSE");
    for (method, r) in [(GRAPPA, 2), (MPPCA, 2), (SSL, 2), (MPPCA_FLAGGED, 4), (SSL, 4)] {
        let m = result.report.median_nrmse(method, r).unwrap_or(f64::NAN);
        println!("{method:<14} {r:>2} {m:>14.4}");
    }
    println!("metrics and renders in {}", out.display());
    Ok(())
}
