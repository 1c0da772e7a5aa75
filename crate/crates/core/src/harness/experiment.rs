//! Three-way method comparison on seeded phantoms.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::metrics::{MetricsReport, MetricsRow};
use super::pipelines::{recon_grappa_pipeline, recon_mppca_pipeline, recon_ssl_pipeline};
use super::render::{difference_image, percentile99, write_magnitude_pgm, write_pgm};
use super::scenario::{make_scenario, ScenarioSpec};
use crate::config::ReconConfig;
use crate::datamodel::{ArrayData, ArrayEntry, Container, Image};
use crate::error::{Error, Result};
use crate::sslrecon::{prepare_input, train, SslInput, TrainRecord, UnrolledModel};

pub const GRAPPA: &str = "grappa";
pub const MPPCA: &str = "mppca";
pub const SSL: &str = "ssl";
/// MPPCA at R=4 is measured but not part of the comparison.
pub const MPPCA_FLAGGED: &str = "mppca_flagged";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub scenario: ScenarioSpec,
    pub recon: ReconConfig,
    /// Phantoms that are reconstructed and scored.
    pub test_seeds: Vec<u64>,
    /// Phantoms the network trains on (noisy data only, no ground truth).
    pub train_seeds: Vec<u64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            scenario: ScenarioSpec::default(),
            recon: ReconConfig::default(),
            test_seeds: (1..=5).collect(),
            train_seeds: (101..=104).collect(),
        }
    }
}

impl SuiteConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SuiteConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.recon.validate()?;
        Ok(cfg)
    }
}

pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub model: UnrolledModel,
    pub records: Vec<TrainRecord>,
}

pub fn dataset_name(seed: u64) -> String {
    format!("phantom{seed:03}")
}

/// Prepared noisy training inputs for `seeds`.
pub fn training_inputs(suite: &SuiteConfig, seeds: &[u64]) -> Result<Vec<SslInput>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let spec = ScenarioSpec {
                seed,
                ..suite.scenario.clone()
            };
            prepare_input(&make_scenario(&spec, &suite.recon)?.noisy, &suite.recon)
        })
        .collect()
}

pub fn train_suite_model(suite: &SuiteConfig) -> Result<(UnrolledModel, Vec<TrainRecord>)> {
    train(&training_inputs(suite, &suite.train_seeds)?, &suite.recon.ssl)
}

/// Reconstructions of one phantom: `(method, R, image)` plus the truth.
pub fn reconstruct_phantom(suite: &SuiteConfig, model: &UnrolledModel, seed: u64) -> Result<(Image, Vec<(&'static str, usize, Image)>)> {
    let cfg = &suite.recon;
    let spec = ScenarioSpec {
        seed,
        ..suite.scenario.clone()
    };
    let sc = make_scenario(&spec, cfg)?;
    let r4 = sc.noisy.subsample_blades(2)?;
    let images = vec![
        (GRAPPA, 2, recon_grappa_pipeline(&sc.noisy, cfg)?),
        (MPPCA, 2, recon_mppca_pipeline(&sc.noisy, cfg)?),
        (SSL, 2, recon_ssl_pipeline(model, &sc.noisy, cfg)?),
        (MPPCA_FLAGGED, 4, recon_mppca_pipeline(&r4, cfg)?),
        (SSL, 4, recon_ssl_pipeline(model, &r4, cfg)?),
    ];
    Ok((sc.truth, images))
}

fn dump(dir: &Path, truth: &Image, images: &[(&str, usize, Image)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_magnitude_pgm(&dir.join("truth.pgm"), truth)?;
    let level = percentile99(&truth.mapv(|v| v.norm()));
    let (h, w) = truth.dim();
    let mut raw = Container {
        shape: vec![h, w],
        meta: json!({"kind": "reconstructions"}),
        ..Container::default()
    };
    let complex = |img: &Image| ArrayEntry::new(vec![h, w], ArrayData::complex(&img.iter().copied().collect::<Vec<_>>()));
    raw.insert("truth", complex(truth)?);
    for (method, r, img) in images {
        let stem = format!("{method}_R{r}");
        write_magnitude_pgm(&dir.join(format!("{stem}.pgm")), img)?;
        write_pgm(&dir.join(format!("{stem}_diff.pgm")), &difference_image(img, truth)?, level)?;
        raw.insert(&stem, complex(img)?);
    }
    raw.write(&dir.join("raw"))
}

/// Score every method on every test phantom; trains a model first when
/// none is given. With `out`, writes `metrics.csv` and per-phantom renders,
/// ×5 difference images and raw complex dumps.
pub fn run_experiment(suite: &SuiteConfig, model: Option<UnrolledModel>, out: Option<&Path>) -> Result<ExperimentOutput> {
    suite.recon.validate()?;
    if suite.test_seeds.is_empty() {
        return Err(Error::EmptySelection("no test phantoms".into()));
    }
    let (model, records) = match model {
        Some(m) => (m, Vec::new()),
        None => train_suite_model(suite)?,
    };
    let per_phantom: Vec<Vec<MetricsRow>> = suite
        .test_seeds
        .par_iter()
        .map(|&seed| {
            let name = dataset_name(seed);
            let (truth, images) = reconstruct_phantom(suite, &model, seed)?;
            if let Some(dir) = out {
                dump(&dir.join(&name), &truth, &images)?;
            }
            images
                .iter()
                .map(|(method, r, img)| MetricsRow::measure(&name, method, *r, img, &truth))
                .collect()
        })
        .collect::<Result<_>>()?;
    let report = MetricsReport {
        rows: per_phantom.into_iter().flatten().collect(),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        report.write_csv(&dir.join("metrics.csv"))?;
    }
    Ok(ExperimentOutput { report, model, records })
}
