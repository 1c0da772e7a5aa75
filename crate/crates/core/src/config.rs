//! Reconstruction configuration shared by the pipelines and the CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grappa::GrappaConfig;
use crate::mppca::PatchSpec;
use crate::nufft::NufftConfig;
use crate::sslrecon::SslConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub nufft: NufftConfig,
    /// Pipe–Menon iterations.
    pub dc_iterations: usize,
    pub grappa: GrappaConfig,
    pub mppca: PatchSpec,
    pub walsh_block: usize,
    pub phase_correction: bool,
    /// Zero pixels outside the inscribed disk of the field of view.
    pub fov_mask: bool,
    /// k-space radius (cycles/pixel) for sensitivity estimation; `None`
    /// means half the blade half-width.
    pub sens_radius: Option<f64>,
    pub ssl: SslConfig,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            nufft: NufftConfig::default(),
            dc_iterations: 10,
            grappa: GrappaConfig::default(),
            mppca: PatchSpec::default(),
            walsh_block: 7,
            phase_correction: true,
            fov_mask: true,
            sens_radius: None,
            ssl: SslConfig::default(),
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nufft.oversampling < 1.25 || self.nufft.kernel_width < 2 {
            return Err(Error::Config("nufft oversampling ≥ 1.25 and kernel width ≥ 2 required".into()));
        }
        if self.dc_iterations == 0 || self.walsh_block == 0 || self.walsh_block.is_multiple_of(2) {
            return Err(Error::Config("dc_iterations ≥ 1 and an odd walsh_block required".into()));
        }
        if let Some(r) = self.sens_radius {
            if !(r > 0.0 && r < 0.5) {
                return Err(Error::Config("sens_radius must lie in (0, 0.5)".into()));
            }
        }
        self.grappa.validate()?;
        self.mppca.validate()?;
        self.ssl.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ReconConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
