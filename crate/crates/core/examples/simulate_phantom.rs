//! Simulate a noisy desk-scale PROPELLER acquisition and store it as a
//! dataset container with the truth and coil maps alongside.
//!
//! cargo run --release --example simulate_phantom -- [out_dir]

use std::path::PathBuf;

use propeller_lab::config::ReconConfig;
use propeller_lab::datamodel::{coil_images_to_extra, image_to_extra, write_dataset_with, Extras};
use propeller_lab::harness::render::write_magnitude_pgm;
use propeller_lab::harness::{make_scenario, ScenarioSpec};

fn main() -> propeller_lab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/simulate_phantom".into()));
    std::fs::create_dir_all(&out).expect("create output directory");

    let spec = ScenarioSpec::default();
    let sc = make_scenario(&spec, &ReconConfig::default())?;
    println!(
        "{} blades × {} lines × {} readout, {} coils, noise σ {:.3e}",
        sc.noisy.blades(),
        sc.noisy.lines(),
        sc.noisy.readout(),
        sc.noisy.coils(),
        sc.sigma
    );
    println!(
        "blade phase errors (rad): {:?}",
        sc.blade_phases.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>()
    );

    let mut extras = Extras::new();
    extras.insert("truth".into(), image_to_extra(&sc.truth));
    extras.insert("maps".into(), coil_images_to_extra(&sc.maps.maps));
    write_dataset_with(&sc.noisy, &extras, &out.join("phantom.pks"))?;
    write_magnitude_pgm(&out.join("truth.pgm"), &sc.truth)?;
    println!("wrote {}", out.display());
    Ok(())
}
