use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tradecost::evaluation::CompareOptions;
use tradecost::gravity::{DesignOptions, ObservationOptions, PpmlOptions};
use tradecost::ingest::SchemaOptions;
use tradecost::inverse::{HiddenActivation, NetworkConfig, OutputActivation, TrainingConfig};
use tradecost::ot::SolverOptions;
use tradecost::synthetic::SyntheticConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Trade CSV files read by `ingest`.
    pub trade: Vec<PathBuf>,
    pub panel: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Directory of OT plan estimates written by `infer`.
    pub ot_plans: Option<PathBuf>,
    /// Directory of gravity plan estimates written by `gravity`.
    pub gravity_plans: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub threshold: f64,
    pub schema: SchemaOptions,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            threshold: 0.99,
            schema: SchemaOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub layers: usize,
    pub width: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let d = NetworkConfig::for_plan(1, 1, 0);
        Self {
            layers: d.layers,
            width: d.width,
            hidden_activation: d.hidden_activation,
            output_activation: d.output_activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub n: usize,
    pub fixed_marginals: bool,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            n: 1000,
            fixed_marginals: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GravitySection {
    pub observations: ObservationOptions,
    pub design: DesignOptions,
    pub ppml: PpmlOptions,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub options: CompareOptions,
    /// Upper bound on the mean OT RMSE checked by `compare`.
    pub ot_rmse_bound: Option<f64>,
}

/// Resolved settings of one run. `seed` and `epsilon` override the
/// corresponding fields of the module sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub epsilon: f64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub commodity: String,
    pub paths: Paths,
    pub ingest: IngestSection,
    pub generate: SyntheticConfig,
    pub solver: SolverOptions,
    pub network: NetworkSection,
    pub training: TrainingConfig,
    pub ensemble: EnsembleSection,
    pub gravity: GravitySection,
    pub compare: CompareSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epsilon: 0.1,
            threads: 0,
            out: None,
            commodity: "commodity".into(),
            paths: Paths::default(),
            ingest: IngestSection::default(),
            generate: SyntheticConfig::default(),
            solver: SolverOptions::default(),
            network: NetworkSection::default(),
            training: TrainingConfig::default(),
            ensemble: EnsembleSection::default(),
            gravity: GravitySection::default(),
            compare: CompareSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| tradecost::Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Propagates the shared seed and epsilon into the module sections and
    /// checks numeric ranges.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CliError::Config("epsilon must be positive".into()));
        }
        if !(self.ingest.threshold > 0.0 && self.ingest.threshold <= 1.0) {
            return Err(CliError::Config("ingest.threshold must lie in (0, 1]".into()));
        }
        if self.ensemble.n == 0 {
            return Err(CliError::Config("ensemble.n must be at least 1".into()));
        }
        if self.network.layers < 2 || self.network.width == 0 {
            return Err(CliError::Config("network needs at least 2 layers of positive width".into()));
        }
        if self.compare.ot_rmse_bound.is_some_and(|b| !(b >= 0.0)) {
            return Err(CliError::Config("compare.ot_rmse_bound must be nonnegative".into()));
        }
        self.training.epsilon = self.epsilon;
        self.generate.epsilon = self.epsilon;
        self.generate.seed = self.seed;
        self.training.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.generate.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(self)
    }

    pub fn network_for(&self, m: usize, n: usize) -> NetworkConfig {
        NetworkConfig {
            layers: self.network.layers,
            width: self.network.width,
            hidden_activation: self.network.hidden_activation,
            output_activation: self.network.output_activation,
            input_dim: m * n,
            output_dim: m * n,
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Path that a command needs, failing with an IO error when absent.
pub fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    let path = path
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("no {what} path configured")))?;
    if !path.exists() {
        return Err(tradecost::Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found")),
        )
        .into());
    }
    Ok(path)
}
