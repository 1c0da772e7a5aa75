//! Self-supervised training of the unrolled network on noisy data only,
//! then inference on a held-out phantom.
//!
//! cargo run --release --example ssl_training -- [out_dir] [epochs]

use std::path::PathBuf;

use propeller_lab::harness::experiment::{training_inputs, SuiteConfig};
use propeller_lab::harness::render::write_magnitude_pgm;
use propeller_lab::harness::{make_scenario, nrmse, recon_grappa_pipeline, recon_ssl_pipeline, ScenarioSpec};
use propeller_lab::sslrecon::{epoch_means, train, write_records};

fn main() -> propeller_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/ssl_training".into()));
    let epochs = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(10);
    std::fs::create_dir_all(&out).expect("create output directory");

    let mut suite = SuiteConfig::default();
    suite.recon.ssl.epochs = epochs;
    suite.recon.ssl.lr = 1e-3;
    let inputs = training_inputs(&suite, &suite.train_seeds)?;
    let (model, records) = train(&inputs, &suite.recon.ssl)?;
    for (e, loss) in epoch_means(&records).iter().enumerate() {
        println!("epoch {e:>3}: mean loss {loss:.5}");
    }
    write_records(&records, &out.join("train_log.csv"))?;
    model.save(&out.join("model.pks"))?;

    let sc = make_scenario(
        &ScenarioSpec {
            seed: 1,
            ..suite.scenario.clone()
        },
        &suite.recon,
    )?;
    let ssl = recon_ssl_pipeline(&model, &sc.noisy, &suite.recon)?;
    let grappa = recon_grappa_pipeline(&sc.noisy, &suite.recon)?;
    println!(
        "held-out NRMSE: SSL {:.4}, GRAPPA {:.4}",
        nrmse(&ssl, &sc.truth)?,
        nrmse(&grappa, &sc.truth)?
    );
    write_magnitude_pgm(&out.join("ssl.pgm"), &ssl)?;
    Ok(())
}
