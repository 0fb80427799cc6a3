//! JSON configuration and report documents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::RunMetrics;
use crate::experiments::{default_threshold, RegionSpec, Scenario};
use crate::model::{FlowId, FlowSpec, ModelError, RadioMode, SensorId, SystemConfig, Topology};
use crate::policies::{PolicyKind, PolicySpec};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    /// Dotted field path, e.g. `topology.reliability.3`.
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    pub root: SensorId,
    pub parent: BTreeMap<SensorId, SensorId>,
    pub reliability: BTreeMap<SensorId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDoc {
    #[serde(rename = "T")]
    pub slots: usize,
    pub mode: RadioMode,
    #[serde(default)]
    pub lambda: u64,
    #[serde(default)]
    pub seed: u64,
    pub intervals: u64,
}

/// Requirement pairs for region sweeps: the first flow of each pair takes
/// `alpha`, the second `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionDoc {
    pub pairs: Vec<(FlowId, FlowId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub topology: TopologyDoc,
    pub flows: Vec<FlowSpec>,
    pub system: SystemDoc,
    #[serde(default = "default_policy")]
    pub policy: PolicySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionDoc>,
}

fn default_policy() -> PolicySpec {
    PolicySpec::new(PolicyKind::GreedyForwarder)
}

impl ConfigDocument {
    /// Parses JSON text; errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| ConfigError::at("<document>", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<document>".to_string() } else { path };
            ConfigError::at(path, e.into_inner().to_string())
        })
    }

    pub fn from_parts(config: &SystemConfig, policy: &PolicySpec, pairs: Option<&[(FlowId, FlowId)]>) -> Self {
        let topo = config.topology();
        Self {
            topology: TopologyDoc {
                root: topo.root_id(),
                parent: topo.parent_map(),
                reliability: topo.reliability_map(),
            },
            flows: config.flows().to_vec(),
            system: SystemDoc {
                slots: config.slots,
                mode: config.mode,
                lambda: config.update_period,
                seed: config.seed,
                intervals: config.intervals,
            },
            policy: policy.clone(),
            region: pairs.map(|p| RegionDoc { pairs: p.to_vec() }),
        }
    }

    pub fn from_scenario(scenario: &Scenario, policy: &PolicySpec) -> Self {
        Self::from_parts(&scenario.config, policy, Some(&scenario.pairs))
    }

    /// Validated system configuration.
    pub fn system_config(&self) -> Result<SystemConfig, ConfigError> {
        let t = &self.topology;
        let topo = Topology::new(t.root, &t.parent, &t.reliability).map_err(model_error)?;
        SystemConfig::new(
            topo,
            self.flows.clone(),
            self.system.slots,
            self.system.mode,
            self.system.lambda,
            self.system.seed,
            self.system.intervals,
        )
        .map_err(|e| match e {
            ModelError::BadFlow { flow, .. } | ModelError::DuplicateFlow(flow) => {
                let idx = self.flows.iter().position(|f| f.id == flow).unwrap_or(0);
                ConfigError::at(format!("flows[{idx}]"), e.to_string())
            }
            other => model_error(other),
        })
    }

    pub fn region_spec(&self, config: &SystemConfig, alpha_step: f64, beta_step: f64) -> Result<RegionSpec, ConfigError> {
        let region = self
            .region
            .as_ref()
            .ok_or_else(|| ConfigError::at("region", "sweeps need a `region.pairs` list"))?;
        for (i, (a, b)) in region.pairs.iter().enumerate() {
            for id in [a, b] {
                if config.flow_index(*id).is_none() {
                    return Err(ConfigError::at(format!("region.pairs[{i}]"), format!("unknown flow {id}")));
                }
            }
        }
        for (name, step) in [("alpha-step", alpha_step), ("beta-step", beta_step)] {
            if !(step > 0.0 && step <= 1.0) {
                return Err(ConfigError::at(name, format!("step {step} outside (0, 1]")));
            }
        }
        let mut spec = RegionSpec::new(config.clone(), region.pairs.clone(), alpha_step);
        spec.beta_step = beta_step;
        Ok(spec)
    }

    /// Canonical serialization: fixed field order, sorted maps, flows by id.
    pub fn canonical_json(&self) -> String {
        let mut doc = self.clone();
        doc.flows.sort_by_key(|f| f.id);
        serde_json::to_string(&doc).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

fn model_error(e: ModelError) -> ConfigError {
    let path = match &e {
        ModelError::CycleDetected(s) | ModelError::MissingParent(s) => format!("topology.parent.{s}"),
        ModelError::BadReliability { sensor, .. } => format!("topology.reliability.{sensor}"),
        ModelError::RootHasParent(_) | ModelError::RootHasReliability(_) => "topology.root".into(),
        ModelError::UnknownSensor(_) => "topology".into(),
        ModelError::BadFlow { .. } | ModelError::DuplicateFlow(_) => "flows".into(),
        ModelError::BadParameter(_) => "system".into(),
    };
    ConfigError::at(path, e.to_string())
}

/// Applies `dotted.path=value` to a JSON document. The value is parsed as
/// JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::at("--override", format!("expected key=value, got {assignment:?}")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::at(keys[..i].join("."), "not an object"))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), parsed);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(ConfigError::at("--override", "empty key"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub id: FlowId,
    pub source: SensorId,
    pub q: f64,
    pub timely_throughput: f64,
    pub final_debt: f64,
    pub fulfilled: bool,
}

/// JSON run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: PolicySpec,
    pub mode: RadioMode,
    pub seed: u64,
    pub intervals: u64,
    pub update_period: u64,
    pub threshold: f64,
    pub fulfilled: bool,
    pub config_digest: String,
    pub flows: Vec<FlowReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<Vec<bool>>>,
}

impl RunReport {
    pub fn new(doc: &ConfigDocument, config: &SystemConfig, metrics: RunMetrics) -> Self {
        let threshold = default_threshold(metrics.intervals);
        let flows = config
            .flows()
            .iter()
            .enumerate()
            .map(|(i, f)| FlowReport {
                id: f.id,
                source: f.source,
                q: f.q,
                timely_throughput: metrics.timely_throughput[i],
                final_debt: metrics.final_debts[i],
                fulfilled: metrics.final_debts[i] < threshold,
            })
            .collect();
        Self {
            policy: doc.policy.clone(),
            mode: config.mode,
            seed: config.seed,
            intervals: metrics.intervals,
            update_period: config.update_period,
            threshold,
            fulfilled: metrics.fulfilled,
            config_digest: doc.digest(),
            flows,
            trace: metrics.trace,
        }
    }
}
