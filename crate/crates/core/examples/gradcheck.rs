//! Finite-difference checks of every differentiable operation and of the
//! end-to-end training gradient.
//!
//! cargo run --release --example gradcheck -- [seed]

use propeller_lab::sslrecon::checks::gradcheck_suite;

fn main() -> propeller_lab::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse().expect("seed")).unwrap_or(0);
    let mut ok = true;
    for e in gradcheck_suite(seed)? {
        let err = e.report.max_rel_error();
        let pass = e.passed();
        ok &= pass;
        println!(
            "{:<20} {err:>10.2e}  (tol {:.0e})  {}",
            e.name,
            e.tolerance,
            if pass { "ok" } else { "FAIL" }
        );
    }
    if !ok {
        std::process::exit(1);
    }
    Ok(())
}
