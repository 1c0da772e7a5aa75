//! Write a dataset and a model checkpoint to container directories and
//! read them back bit-exactly.
//!
//! cargo run --release --example container_roundtrip -- [out_dir]

use std::path::PathBuf;

use propeller_lab::config::ReconConfig;
use propeller_lab::datamodel::pks::Container;
use propeller_lab::datamodel::{read_dataset, write_dataset};
use propeller_lab::harness::{make_scenario, ScenarioSpec};
use propeller_lab::sslrecon::{SslConfig, UnrolledModel};

fn main() -> propeller_lab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/container_roundtrip".into()));
    std::fs::create_dir_all(&out).expect("create output directory");

    let ds = make_scenario(&ScenarioSpec::default(), &ReconConfig::default())?.noisy;
    let path = out.join("dataset.pks");
    write_dataset(&ds, &path)?;
    let back = read_dataset(&path)?;
    println!("dataset roundtrip exact: {}", back == ds);
    let c = Container::read(&path)?;
    println!("manifest arrays: {:?}", c.arrays.keys().collect::<Vec<_>>());

    let model = UnrolledModel::new(&SslConfig::default())?;
    let ckpt = out.join("model.pks");
    model.save(&ckpt)?;
    println!(
        "checkpoint roundtrip exact: {} ({} parameters)",
        UnrolledModel::load(&ckpt)? == model,
        model.params.len()
    );
    Ok(())
}
