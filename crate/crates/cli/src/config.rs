//! Experiment configuration files.
//!
//! One JSON document describes a whole experiment. Missing optional fields
//! take the defaults listed on each field; `resolved()` fills them in so the
//! copy written next to the outputs is complete.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use slowmap::dataset::{DatasetConfig, DEFAULT_BURSTS, DEFAULT_COV_REPS, DEFAULT_GAP_RATIO, DEFAULT_TAU_MULTIPLE};
use slowmap::metrics::GridSpec;
use slowmap::systems::Scheme;
use slowmap::{Architecture, Error, PruneConfig, Result, SystemSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label used in reports; defaults to the output directory name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub system: SystemSpec,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSection>,
    /// `null` or absent turns pruning off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruning: Option<PruneConfig>,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    /// Master seed; every random stream of the run derives from it.
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub x0: Vec<f64>,
    /// Defaults to a tenth of the fast time scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub n_steps: usize,
    /// `observed` (default) integrates the observed equations; `hidden`
    /// integrates the hidden ones and maps each state through `f`.
    #[serde(default)]
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(rename = "M", default)]
    pub count: usize,
    /// Chosen from the covariance spectra as `tau_multiple / λ` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default = "default_tau_multiple")]
    pub tau_multiple: f64,
    #[serde(rename = "J", default = "default_bursts")]
    pub bursts: usize,
    #[serde(default)]
    pub empirical_covariance: bool,
    #[serde(default = "default_cov_reps")]
    pub cov_reps: usize,
    /// Share of instances used for training; default 0.7.
    #[serde(default = "default_split")]
    pub split_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            count: 0,
            tau: None,
            tau_multiple: DEFAULT_TAU_MULTIPLE,
            bursts: DEFAULT_BURSTS,
            empirical_covariance: false,
            cov_reps: DEFAULT_COV_REPS,
            split_fraction: DEFAULT_SPLIT,
        }
    }
}

pub const DEFAULT_SPLIT: f64 = 0.7;

fn default_tau_multiple() -> f64 {
    DEFAULT_TAU_MULTIPLE
}
fn default_bursts() -> usize {
    DEFAULT_BURSTS
}
fn default_cov_reps() -> usize {
    DEFAULT_COV_REPS
}
fn default_split() -> f64 {
    DEFAULT_SPLIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Layer widths such as `"2-4-1-4-2"`, optionally `"2-[2]-4-1-4-2"`.
    pub layers: String,
    /// Inserts the polar layer after the input when `layers` lacks it.
    #[serde(default)]
    pub polar: bool,
}

impl NetworkSection {
    pub fn architecture(&self) -> Result<Architecture> {
        let arch: Architecture = self.layers.parse()?;
        if self.polar && !arch.has_polar() {
            let mut parts: Vec<&str> = self.layers.split('-').collect();
            parts.insert(1, "[2]");
            return parts.join("-").parse();
        }
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Train on projections only: inputs are replaced by their targets.
    #[serde(default)]
    pub autoencoder: bool,
}

fn default_batch() -> usize {
    16
}

impl TrainingSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { batch_size: self.batch_size, ..TrainConfig::new(self.epochs, self.learning_rate) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// Eigenvalue ratio separating slow from fast directions; default 10.
    #[serde(default = "default_gap_ratio")]
    pub gap_ratio: f64,
    /// Compare the encoder with the known slow map by an affine fit.
    #[serde(default)]
    pub slow_map: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { gap_ratio: DEFAULT_GAP_RATIO, slow_map: false, grid: None }
    }
}

fn default_gap_ratio() -> f64 {
    DEFAULT_GAP_RATIO
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies `a.b.c=value` overrides. Values are parsed as JSON and fall
    /// back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for item in overrides {
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, path, value)?;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(format!("invalid override: {e}")))
    }

    /// Copy with every default made explicit, checked for consistency.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        c.system = c.system.resolved()?;
        let pair = c.system.build()?;
        let dim = pair.observed.dim();
        if c.simulation.x0.len() != dim {
            return Err(Error::Config(format!(
                "x0 has {} coordinates but {} is {dim}-dimensional",
                c.simulation.x0.len(),
                c.system.name
            )));
        }
        c.simulation.dt.get_or_insert(pair.observed.default_dt());
        let f = c.dataset.split_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("split_fraction must lie in (0, 1), got {f}")));
        }
        if let Some(net) = &mut c.network {
            let arch = net.architecture()?;
            if arch.input_dim() != dim || arch.output_dim() != dim {
                return Err(Error::Config(format!(
                    "network {} does not map {dim}-dimensional states to themselves",
                    net.layers
                )));
            }
            net.layers = arch.to_string();
            net.polar = arch.has_polar();
        }
        if let Some(t) = &c.training {
            t.train_config().validate()?;
        }
        if c.pruning.is_some() && (c.network.is_none() || c.training.is_none()) {
            return Err(Error::Config("pruning needs network and training sections".into()));
        }
        Ok(c)
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            x0: self.simulation.x0.clone(),
            dt: self.simulation.dt,
            n_steps: self.simulation.n_steps,
            count: self.dataset.count,
            tau: self.dataset.tau,
            tau_multiple: self.dataset.tau_multiple,
            bursts: self.dataset.bursts,
            empirical_covariance: self.dataset.empirical_covariance,
            cov_reps: self.dataset.cov_reps,
            scheme: self.simulation.scheme,
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.network
            .as_ref()
            .ok_or_else(|| Error::Config("config has no network section".into()))?
            .architecture()
    }

    pub fn training(&self) -> Result<&TrainingSection> {
        self.training.as_ref().ok_or_else(|| Error::Config("config has no training section".into()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    let mut node = doc;
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(Error::Config(format!("empty key in override path `{path}`")));
        }
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override path `{path}` runs through a non-object")))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIN2D: &str = r#"{
        "system": {"name": "sin2d", "eps": 0.001},
        "simulation": {"x0": [0.0, 0.0], "n_steps": 1000},
        "dataset": {"M": 20},
        "network": {"layers": "2-4-1-4-2"},
        "training": {"epochs": 5, "learning_rate": 0.003},
        "seed": 4
    }"#;

    #[test]
    fn defaults_are_filled_in() {
        let c = ExperimentConfig::from_json(SIN2D).unwrap().resolved().unwrap();
        assert_eq!(c.simulation.dt, Some(1e-4));
        assert_eq!(c.dataset.bursts, DEFAULT_BURSTS);
        assert_eq!(c.dataset.split_fraction, 0.7);
        assert_eq!(c.training.as_ref().unwrap().batch_size, 16);
        assert_eq!(c.evaluation.gap_ratio, 10.0);
        let again = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = ExperimentConfig::from_json(SIN2D).unwrap();
        let c = c
            .with_overrides(&["training.learning_rate=0".into(), "dataset.J=7".into(), "name=run a".into()])
            .unwrap();
        assert_eq!(c.training.unwrap().learning_rate, 0.0);
        assert_eq!(c.dataset.bursts, 7);
        assert_eq!(c.name.as_deref(), Some("run a"));
    }

    #[test]
    fn polar_flag_inserts_the_layer() {
        let net = NetworkSection { layers: "2-4-1-4-2".into(), polar: true };
        assert_eq!(net.architecture().unwrap().to_string(), "2-[2]-4-1-4-2");
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let mut c = ExperimentConfig::from_json(SIN2D).unwrap();
        c.simulation.x0 = vec![0.0; 3];
        assert!(matches!(c.resolved(), Err(Error::Config(_))));
        let c = ExperimentConfig::from_json(SIN2D).unwrap();
        assert!(c.with_overrides(&["network.layers=3-4-1-4-3".into()]).unwrap().resolved().is_err());
        assert!(c.with_overrides(&["dataset.split_fraction=1".into()]).unwrap().resolved().is_err());
        assert!(ExperimentConfig::from_json(r#"{"system": {"name": "sin2d"}}"#).is_err());
        assert!(c.with_overrides(&["nokey".into()]).is_err());
    }
}
