use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use propeller_lab::datamodel::{
    coil_images_to_extra, image_to_extra, read_dataset, write_dataset, write_dataset_with, write_image, Extras, MANIFEST,
};
use propeller_lab::harness::experiment::{dataset_name, run_experiment, SuiteConfig, GRAPPA, MPPCA, MPPCA_FLAGGED, SSL};
use propeller_lab::harness::pipelines::dataset_covariance;
use propeller_lab::harness::render::write_magnitude_pgm;
use propeller_lab::harness::{make_scenario, recon_grappa_pipeline, recon_mppca_pipeline, recon_ssl_pipeline, ScenarioSpec};
use propeller_lab::mppca::{figure2_pipeline, PatchSpec};
use propeller_lab::sslrecon::checks::gradcheck_suite;
use propeller_lab::sslrecon::{prepare_input, train, write_records, UnrolledModel};
use propeller_lab::{Error, Image, Result};

#[derive(Parser)]
#[command(name = "propeller-lab", version, about = "Simulate, reconstruct and evaluate PROPELLER MRI data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON suite configuration (`scenario`, `recon`, seeds); missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<SuiteConfig> {
        match &self.config {
            Some(p) => SuiteConfig::from_json(&fs::read_to_string(p).map_err(|e| io_err(p, e))?),
            None => Ok(SuiteConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate noisy phantom datasets (truth and coil maps stored alongside).
    Sim {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset path, or a directory when `--count` > 1.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
    /// Reconstruct a dataset with a classical pipeline.
    Recon {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Grappa)]
        method: Method,
        /// Also write a magnitude render.
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Denoise a dataset's blades.
    Denoise {
        #[command(subcommand)]
        method: DenoiseMethod,
    },
    /// Train the unrolled network on every dataset in a directory.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Training log CSV (default: stdout).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Reconstruct a dataset with a trained checkpoint.
    Infer {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep every other blade (R=4 from R=2 data).
        #[arg(long)]
        half_blades: bool,
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Compare all methods on seeded phantoms and write metrics and renders.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Use this checkpoint instead of training one.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Finite-difference checks of every differentiable operation.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Grappa,
    Mppca,
}

#[derive(Subcommand)]
enum DenoiseMethod {
    /// Blade-wise coil MPPCA.
    Mppca {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Square patch side.
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn save_image(img: &Image, out: &Path, pgm: Option<&Path>) -> Result<()> {
    write_image(img, out)?;
    if let Some(p) = pgm {
        write_magnitude_pgm(p, img)?;
    }
    Ok(())
}

fn sim(suite: &SuiteConfig, out: &Path, seed: Option<u64>, count: u64) -> Result<()> {
    let first = seed.unwrap_or(suite.scenario.seed);
    for seed in first..first + count.max(1) {
        let spec = ScenarioSpec {
            seed,
            ..suite.scenario.clone()
        };
        let sc = make_scenario(&spec, &suite.recon)?;
        let mut extras = Extras::new();
        extras.insert("truth".into(), image_to_extra(&sc.truth));
        extras.insert("maps".into(), coil_images_to_extra(&sc.maps.maps));
        let path = if count > 1 {
            out.join(format!("{}.pks", dataset_name(seed)))
        } else {
            out.to_path_buf()
        };
        write_dataset_with(&sc.noisy, &extras, &path)?;
        println!("{} (noise sigma {:.4e})", path.display(), sc.sigma);
    }
    Ok(())
}

fn dataset_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::EmptySelection(format!("no datasets in {}", dir.display())));
    }
    Ok(dirs)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Sim { config, out, seed, count } => sim(&config.load()?, &out, seed, count)?,
        Command::Recon {
            config,
            input,
            out,
            method,
            pgm,
        } => {
            let cfg = config.load()?.recon;
            let ds = read_dataset(&input)?;
            let img = match method {
                Method::Grappa => recon_grappa_pipeline(&ds, &cfg)?,
                Method::Mppca => recon_mppca_pipeline(&ds, &cfg)?,
            };
            save_image(&img, &out, pgm.as_deref())?;
        }
        Command::Denoise {
            method:
                DenoiseMethod::Mppca {
                    config,
                    input,
                    out,
                    patch,
                    stride,
                },
        } => {
            let cfg = config.load()?.recon;
            let mut spec = cfg.mppca.clone();
            if let Some(p) = patch {
                spec = PatchSpec {
                    height: p,
                    width: p,
                    ..spec
                };
            }
            if let Some(s) = stride {
                spec.stride = s;
            }
            let ds = read_dataset(&input)?;
            write_dataset(&figure2_pipeline(&ds, &dataset_covariance(&ds)?, &spec)?, &out)?;
        }
        Command::Train {
            config,
            data,
            out,
            seed,
            log,
        } => {
            let mut suite = config.load()?;
            if let Some(s) = seed {
                suite.recon.ssl.seed = s;
            }
            let inputs = dataset_dirs(&data)?
                .iter()
                .map(|p| prepare_input(&read_dataset(p)?, &suite.recon))
                .collect::<Result<Vec<_>>>()?;
            let (model, records) = train(&inputs, &suite.recon.ssl)?;
            model.save(&out)?;
            match log {
                Some(p) => write_records(&records, &p)?,
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    for r in &records {
                        w.serialize(r).map_err(|e| io_err(Path::new("stdout"), e.into()))?;
                    }
                    w.flush().map_err(|e| io_err(Path::new("stdout"), e))?;
                }
            }
        }
        Command::Infer {
            config,
            ckpt,
            input,
            out,
            half_blades,
            pgm,
        } => {
            let cfg = config.load()?.recon;
            let model = UnrolledModel::load(&ckpt)?;
            let mut ds = read_dataset(&input)?;
            if half_blades {
                ds = ds.subsample_blades(2)?;
            }
            save_image(&recon_ssl_pipeline(&model, &ds, &cfg)?, &out, pgm.as_deref())?;
        }
        Command::Eval { config, out, ckpt } => {
            let suite = config.load()?;
            let model = ckpt.as_deref().map(UnrolledModel::load).transpose()?;
            let trained = model.is_none();
            let result = run_experiment(&suite, model, Some(&out))?;
            if trained {
                result.model.save(&out.join("model.pks"))?;
                write_records(&result.records, &out.join("train.csv"))?;
            }
            println!("method           R  median NRMSE");
            for (method, r) in [(GRAPPA, 2), (MPPCA, 2), (SSL, 2), (MPPCA_FLAGGED, 4), (SSL, 4)] {
                if let Some(m) = result.report.median_nrmse(method, r) {
                    println!("{method:<15} {r:>2}  {m:.4}");
                }
            }
            println!("wrote {}", out.join("metrics.csv").display());
        }
        Command::Gradcheck { config, seed } => {
            config.load()?;
            let mut ok = true;
            for e in gradcheck_suite(seed)? {
                let status = if e.passed() { "pass" } else { "FAIL" };
                println!(
                    "{status} {:<16} max rel error {:.2e} (tol {:.0e})",
                    e.name,
                    e.report.max_rel_error(),
                    e.tolerance
                );
                ok &= e.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
