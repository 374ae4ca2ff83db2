//! Experiment configuration: a single JSON file whose every field has a
//! default matching the benchmark protocol (20k epochs, burn-in 5k,
//! thinning 5, 5 chains, lambda 1, fan-in 5, missingness grid 10-40%).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Standardization;
use crate::model::{McmcConfig, Priors};
use crate::synth::GeneratorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Learn,
    BaselineMice,
    BaselineTemporalMice,
    Evaluate,
    Diagnose,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lume,
    Mice,
    TemporalMice,
    Complete,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Lume => "lume",
            Method::Mice => "mice",
            Method::TemporalMice => "temporal-mice",
            Method::Complete => "complete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub generator: GeneratorConfig,
    pub priors: Priors,
    pub mcmc: McmcConfig,
    pub missingness_rates: Vec<f64>,
    pub methods: Vec<Method>,
    pub standardization: Standardization,
    pub time_bin_width: Option<f64>,
    pub missingness_filter_threshold: f64,
    pub output_dir: PathBuf,
    pub replicates: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let generator = GeneratorConfig::default();
        Self {
            mode: Mode::Grid,
            priors: Priors::default_for(generator.k),
            generator,
            mcmc: McmcConfig::default(),
            missingness_rates: vec![0.1, 0.2, 0.3, 0.4],
            methods: vec![Method::Lume, Method::Mice, Method::TemporalMice],
            standardization: Standardization::None,
            time_bin_width: None,
            missingness_filter_threshold: 0.4,
            output_dir: PathBuf::from("out"),
            replicates: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.priors.validate(self.generator.k)?;
        self.mcmc.validate()?;
        if self.replicates < 1 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if self
            .missingness_rates
            .iter()
            .any(|r| !(0.0..=1.0).contains(r))
        {
            return Err(Error::Config(
                "missingness rates must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.missingness_filter_threshold) {
            return Err(Error::Config(
                "missingness filter threshold must lie in [0, 1]".into(),
            ));
        }
        if let Some(w) = self.time_bin_width {
            if w <= 0.0 {
                return Err(Error::Config("time bin width must be positive".into()));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method required".into()));
        }
        Ok(())
    }

    /// FNV-1a hash of the canonical JSON serialization, recorded in the
    /// run manifest so artifact provenance can be checked.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        Ok(format!("{h:016x}"))
    }
}
