use std::path::PathBuf;

use popdyn_core::persist::{ClassifyOptions, DriftConstruction, VFunction};
use popdyn_core::{EnvSpec, Error, GammaClosedFormInput, ModelConfig, Norm, Observables, SetDescriptor, SimConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Simulate,
    Classify,
    Invade,
    Permanence,
    Drift,
    Rps,
    Gamma,
    Lyapunov,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Classify => "classify",
            Task::Invade => "invade",
            Task::Permanence => "permanence",
            Task::Drift => "drift",
            Task::Rps => "rps",
            Task::Gamma => "gamma",
            Task::Lyapunov => "lyapunov",
        }
    }
}

/// One experiment. `output_dir` is deliberately left out of the serialized
/// form so that the embedded config (and its hash) does not depend on where
/// results are written.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvSpec>,
    #[serde(default)]
    pub sim: SimConfig,
    pub task: Task,
    #[serde(default)]
    pub task_params: Value,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateParams {
    #[serde(flatten)]
    pub observables: Observables,
    /// Use the standard observables when none are given.
    pub standard: Option<bool>,
    pub include_samples: bool,
    /// Also estimate `P[X_t in set]` for these sets at `hit_time`.
    pub hit_sets: Vec<SetDescriptor>,
    pub hit_time: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvadeParams {
    pub invader: usize,
    pub resident_support: Vec<usize>,
}

fn default_draws() -> usize {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermanenceParams {
    #[serde(default = "default_draws")]
    pub dirac_draws: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftParams {
    Bounded {
        construction: DriftConstruction,
        #[serde(default = "default_draws")]
        n: usize,
        /// Coupled dominance run length (scalar constructions only).
        #[serde(default)]
        dominance_steps: usize,
        #[serde(default = "one")]
        dominance_x0: f64,
    },
    Ergodic {
        #[serde(default)]
        v: VFunction,
        set: SetDescriptor,
        beta: f64,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default = "default_inner")]
        inner: usize,
        #[serde(default = "default_range")]
        range: (f64, f64),
    },
}

fn one() -> f64 {
    1.0
}

fn default_points() -> usize {
    1_000
}

fn default_inner() -> usize {
    1_000
}

fn default_range() -> (f64, f64) {
    (1e-3, 1e3)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpsParams {
    #[serde(default = "default_draws")]
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaParams {
    #[serde(flatten)]
    pub input: GammaClosedFormInput,
    /// Cross-check against `lyapunov_mc` on the biennial linearization.
    #[serde(default)]
    pub monte_carlo: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovParams {
    #[serde(default = "default_norm")]
    pub norm: Norm,
}

fn default_norm() -> Norm {
    Norm::One
}

pub fn classify_params(v: &Value) -> Result<ClassifyOptions, Error> {
    params(v)
}

/// Parses task parameters; a missing block means all defaults.
pub fn params<T: serde::de::DeserializeOwned>(v: &Value) -> Result<T, Error> {
    let v = if v.is_null() {
        Value::Object(Default::default())
    } else {
        v.clone()
    };
    serde_json::from_value(v).map_err(|e| Error::Config(format!("task_params: {e}")))
}

/// Applies `key.path=value` overrides to a raw config document. The value
/// is parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), Error> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got {spec:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (depth, key) in keys.iter().enumerate() {
        let last = depth + 1 == keys.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let i: usize = key
                    .parse()
                    .map_err(|_| Error::Config(format!("--set {path}: {key:?} is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(i)
                    .ok_or_else(|| Error::Config(format!("--set {path}: index {i} out of {len}")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::Config(format!(
                    "--set {path}: {key:?} is not inside an object or array"
                )))
            }
        };
    }
    Err(Error::Config(format!("--set {path}: empty key")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_nested_and_indexed() {
        let mut doc = json!({"sim": {"seed": 1}, "model": {"alpha": [0.5, 0.6]}});
        apply_override(&mut doc, "sim.seed=7").unwrap();
        apply_override(&mut doc, "model.alpha.1=0.9").unwrap();
        apply_override(&mut doc, "task=classify").unwrap();
        assert_eq!(doc, json!({"sim": {"seed": 7}, "model": {"alpha": [0.5, 0.9]}, "task": "classify"}));
        assert!(apply_override(&mut doc, "model.alpha.5=1").is_err());
        assert!(apply_override(&mut doc, "noequals").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let v = json!({"task": "rps", "tsak_params": {}});
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
        assert!(params::<RpsParams>(&json!({"m": 3})).is_err());
        assert_eq!(params::<RpsParams>(&Value::Null).unwrap().n, 100_000);
    }
}
