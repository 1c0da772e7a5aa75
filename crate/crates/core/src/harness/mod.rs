//! Metrics, reference pipelines and experiment orchestration.

pub mod experiment;
pub mod metrics;
pub mod pipelines;
pub mod render;
pub mod scenario;

pub use experiment::{run_experiment, ExperimentOutput, SuiteConfig};
pub use metrics::{median, nrmse, psnr, ssim, MetricsReport, MetricsRow};
pub use pipelines::{apply_fov_mask, recon_grappa_pipeline, recon_mppca_pipeline, recon_ssl_pipeline};
pub use scenario::{make_scenario, Scenario, ScenarioSpec};
