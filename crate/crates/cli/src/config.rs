//! Declarative run configuration, read from TOML or JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ttn::tebd::ImagConfig;
use ttn::ModelParams;

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    #[default]
    Csv,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    /// Independent repetitions; each gets its own output directory.
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    /// Local dimension; qubits unless stated.
    pub d: Option<usize>,
    pub topology: Option<TopologyConfig>,
    pub state: Option<StateConfig>,
    pub hamiltonian: Option<HamiltonianConfig>,
    pub truncation: TruncationConfig,
    pub evolve: Option<EvolveConfig>,
    pub ground_state: Option<ImagConfig>,
    pub reference: Option<ReferenceConfig>,
    pub mbqc: Option<MbqcConfig>,
    pub oracle_check: Option<OracleCheckConfig>,
    pub bench_routing: Option<BenchConfig>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    /// `caterpillar`, `balanced-binary` or `random`.
    pub layout: Option<String>,
    pub n: Option<usize>,
    /// Edge-list file; takes precedence over `layout`.
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateConfig {
    /// `zero`, `plus`, `random` or `random-product`.
    pub kind: Option<String>,
    /// Bond dimension of `random` states.
    pub bond: Option<usize>,
    /// Serialized state; takes precedence over `kind`.
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HamiltonianConfig {
    pub model: Option<String>,
    pub j: Option<f64>,
    pub g: Option<f64>,
    pub alpha: Option<f64>,
    /// JSON term list; takes precedence over `model`.
    pub file: Option<PathBuf>,
}

impl HamiltonianConfig {
    pub fn params(&self) -> ModelParams {
        let d = ModelParams::default();
        ModelParams { j: self.j.unwrap_or(d.j), g: self.g.unwrap_or(d.g), alpha: self.alpha.unwrap_or(d.alpha) }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationConfig {
    pub chi_max: Option<usize>,
    pub cutoff: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub t: f64,
    pub dt: f64,
    pub order: u8,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self { t: 1.0, dt: 0.01, order: 2 }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub energy: Option<f64>,
    /// When set, a larger deviation from `energy` fails the run.
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MbqcConfig {
    /// `path`, `star` or `random`; ignored when `edges` is given.
    pub graph: Option<String>,
    pub n: Option<usize>,
    pub edges: Option<Vec<(usize, usize)>>,
    /// `adapted` (default), `caterpillar`, `balanced-binary` or a file.
    pub layout: Option<String>,
    /// Wire pattern angles for a path graph.
    pub wire_angles: Option<Vec<f64>>,
    /// Pattern JSON file; takes precedence over `wire_angles`.
    pub pattern: Option<PathBuf>,
    /// Forced outcomes instead of sampling.
    pub branch: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleCheckConfig {
    pub suites: Vec<String>,
    pub n: Option<usize>,
    pub trials: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub ns: Vec<usize>,
    /// Random distant gates per layout and size.
    pub gates: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { ns: vec![8, 16, 32, 64], gates: 20 }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Config = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        };
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// `p` relative to the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn read(&self, p: &Path) -> Result<String, CliError> {
        let full = self.resolve(p);
        fs::read_to_string(&full).map_err(|e| CliError::Config(format!("{}: {e}", full.display())))
    }
}
