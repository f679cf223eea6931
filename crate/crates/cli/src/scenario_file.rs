//! The JSON scenario file and its translation into an engine [`Scenario`].
//!
//! ```json
//! {
//!   "nodes": 4,
//!   "starts": {"staggered": 2},
//!   "graph": {"kind": "cT_cycle", "c": 1, "window": 1, "density": 0.1},
//!   "algorithm": {"name": "heard_of", "c": 1, "window": 1},
//!   "horizon": 40,
//!   "seed": 7,
//!   "checks": ["synchronization", "detection", "simultaneity"],
//!   "output": {"dir": "out"}
//! }
//! ```
//!
//! Defaults: `starts` is `"all_at_1"`, `horizon` is `4n + s_max + 10`,
//! `seed` is 0, the graph seed is derived from `seed`, and `checks` is
//! `["synchronization"]` for the sync-only algorithm and
//! `["synchronization", "detection", "simultaneity"]` otherwise.

use std::collections::BTreeMap;
use std::fmt;

use dynsync::adversary::mix64;
use dynsync::engine::{GraphSpec, Scenario};
use dynsync::graph::NodeId;
use dynsync::{AdversaryKind, Check, ProtocolParams, WindowClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{DeserializeOwned, Error as _};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

const GRAPH_SEED_SALT: u64 = 0x6772_6170_685f_7364;

/// A scenario file that does not match the schema or describes an invalid
/// scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError(pub String);

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SchemaError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodesSpec {
    Count(usize),
    Ids(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StartsSpec {
    #[default]
    #[serde(rename = "all_at_1")]
    AllAt1,
    /// Node `i` (in id order) starts in round `1 + k * i`.
    Staggered(u64),
    /// Independent uniform starts in `1..=max_start`.
    Random {
        max_start: u64,
        seed: u64,
    },
    Explicit(BTreeMap<u32, u64>),
}

/// `kind` plus its parameters, an optional graph seed, and an optional
/// declared connectivity class for `certify`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSection {
    pub kind: AdversaryKind,
    pub seed: Option<u64>,
    pub class: Option<WindowClass>,
}

/// Deserializes `T` from `map`, then rejects any key that `T` does not
/// serialize back. Catches extra keys that serde tolerates on unit variants
/// of internally tagged enums.
fn strict<T: Serialize + DeserializeOwned>(map: Map<String, Value>, section: &str) -> Result<T, String> {
    let keys: Vec<String> = map.keys().cloned().collect();
    let value: T = serde_json::from_value(Value::Object(map)).map_err(|e| format!("{section}: {e}"))?;
    let echo = serde_json::to_value(&value).map_err(|e| e.to_string())?;
    if let Some(unknown) = keys.iter().find(|k| echo.get(k.as_str()).is_none()) {
        return Err(format!("{section}: unknown field `{unknown}`"));
    }
    Ok(value)
}

fn take<T: DeserializeOwned>(map: &mut Map<String, Value>, key: &str, section: &str) -> Result<Option<T>, String> {
    map.remove(key)
        .map(|v| serde_json::from_value(v).map_err(|e| format!("{section}.{key}: {e}")))
        .transpose()
}

impl<'de> Deserialize<'de> for GraphSection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut map = Map::deserialize(d)?;
        let seed = take(&mut map, "seed", "graph").map_err(D::Error::custom)?;
        let class = take(&mut map, "class", "graph").map_err(D::Error::custom)?;
        let kind = strict(map, "graph").map_err(D::Error::custom)?;
        Ok(Self { kind, seed, class })
    }
}

impl Serialize for GraphSection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut v = serde_json::to_value(&self.kind).map_err(serde::ser::Error::custom)?;
        let map = v.as_object_mut().expect("adversary kinds serialize as objects");
        if let Some(seed) = self.seed {
            map.insert("seed".into(), seed.into());
        }
        if let Some(class) = &self.class {
            map.insert(
                "class".into(),
                serde_json::to_value(class).map_err(serde::ser::Error::custom)?,
            );
        }
        v.serialize(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSection(pub ProtocolParams);

impl<'de> Deserialize<'de> for AlgorithmSection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = Map::deserialize(d)?;
        strict(map, "algorithm").map(AlgorithmSection).map_err(D::Error::custom)
    }
}

impl Serialize for AlgorithmSection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Directory for all outputs; `--out-dir` overrides it. Defaults to the
    /// current directory.
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default = "default_trace")]
    pub trace: String,
    #[serde(default = "default_trace_csv")]
    pub trace_csv: String,
    #[serde(default = "default_summary")]
    pub summary: String,
    #[serde(default = "default_aggregate")]
    pub aggregate: String,
}

fn default_trace() -> String {
    "trace.json".into()
}
fn default_trace_csv() -> String {
    "trace.csv".into()
}
fn default_summary() -> String {
    "summary.csv".into()
}
fn default_aggregate() -> String {
    "aggregate.csv".into()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSection {
    #[serde(default)]
    pub seeds: Option<u64>,
    /// Largest tolerated failure fraction. Defaults to `eta` for the
    /// randomized algorithm and 0 otherwise.
    #[serde(default)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub nodes: NodesSpec,
    #[serde(default)]
    pub starts: StartsSpec,
    pub graph: GraphSection,
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub horizon: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub checks: Option<Vec<Check>>,
    #[serde(default)]
    pub output: Option<OutputSection>,
    #[serde(default)]
    pub terminate_on_detect: bool,
    #[serde(default)]
    pub batch: Option<BatchSection>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    pub checks: Option<Vec<Check>>,
    pub freeze_on_detect: bool,
    pub ell: Option<usize>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        serde_json::from_str(text).map_err(|e| SchemaError(e.to_string()))
    }

    pub fn node_ids(&self) -> Result<Vec<NodeId>, SchemaError> {
        let mut ids: Vec<NodeId> = match &self.nodes {
            NodesSpec::Count(0) => return Err(SchemaError("nodes: at least one node is required".into())),
            NodesSpec::Count(n) => (0..*n as u32).map(NodeId).collect(),
            NodesSpec::Ids(ids) => ids.iter().copied().map(NodeId).collect(),
        };
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SchemaError("nodes: duplicate node id".into()));
        }
        if ids.is_empty() {
            return Err(SchemaError("nodes: at least one node is required".into()));
        }
        Ok(ids)
    }

    pub fn starts(&self, ids: &[NodeId]) -> Result<BTreeMap<NodeId, u64>, SchemaError> {
        let map = match &self.starts {
            StartsSpec::AllAt1 => ids.iter().map(|&id| (id, 1)).collect(),
            StartsSpec::Staggered(k) => ids.iter().enumerate().map(|(i, &id)| (id, 1 + k * i as u64)).collect(),
            StartsSpec::Random { max_start, seed } => {
                if *max_start == 0 {
                    return Err(SchemaError("starts.random.max_start: must be at least 1".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                ids.iter().map(|&id| (id, rng.random_range(1..=*max_start))).collect()
            }
            StartsSpec::Explicit(m) => {
                let map: BTreeMap<NodeId, u64> = m.iter().map(|(&id, &s)| (NodeId(id), s)).collect();
                if let Some(missing) = ids.iter().find(|id| !map.contains_key(id)) {
                    return Err(SchemaError(format!("starts.explicit: no start for node {missing}")));
                }
                if let Some(extra) = map.keys().find(|id| ids.binary_search(id).is_err()) {
                    return Err(SchemaError(format!("starts.explicit: unknown node {extra}")));
                }
                map
            }
        };
        Ok(map)
    }

    pub fn graph_seed(&self) -> u64 {
        self.graph.seed.unwrap_or_else(|| mix64(self.seed ^ GRAPH_SEED_SALT))
    }

    pub fn checks(&self, overrides: &Overrides) -> Vec<Check> {
        overrides
            .checks
            .clone()
            .or_else(|| self.checks.clone())
            .unwrap_or_else(|| match self.algorithm.0 {
                ProtocolParams::Sync => vec![Check::Synchronization],
                _ => vec![Check::Synchronization, Check::Detection, Check::Simultaneity],
            })
    }

    pub fn output(&self) -> OutputSection {
        self.output.clone().unwrap_or_else(|| OutputSection {
            dir: None,
            trace: default_trace(),
            trace_csv: default_trace_csv(),
            summary: default_summary(),
            aggregate: default_aggregate(),
        })
    }

    pub fn batch_threshold(&self) -> f64 {
        self.batch
            .as_ref()
            .and_then(|b| b.threshold)
            .unwrap_or(match self.algorithm.0 {
                ProtocolParams::Randomized { eta, .. } => eta,
                _ => 0.0,
            })
    }

    /// Builds and validates the engine scenario. The graph seed always comes
    /// from the file, so `--seed` changes only the nodes' random streams.
    pub fn to_scenario(&self, overrides: &Overrides) -> Result<Scenario, SchemaError> {
        let node_ids = self.node_ids()?;
        let starts = self.starts(&node_ids)?;
        let s_max = starts.values().copied().max().unwrap_or(1);
        let mut params = self.algorithm.0.clone();
        if let Some(ell) = overrides.ell {
            match &mut params {
                ProtocolParams::Randomized { ell: slot, .. } => *slot = Some(ell),
                other => {
                    return Err(SchemaError(format!(
                        "--ell applies to the randomized algorithm, not {}",
                        other.algorithm()
                    )))
                }
            }
        }
        let horizon = overrides
            .horizon
            .or(self.horizon)
            .unwrap_or(4 * node_ids.len() as u64 + s_max + 10);
        let scenario = Scenario {
            graph: GraphSpec {
                kind: self.graph.kind.clone(),
                seed: self.graph_seed(),
            },
            node_ids,
            starts,
            params,
            horizon,
            master_seed: overrides.seed.unwrap_or(self.seed),
            terminate_on_detect: self.terminate_on_detect || overrides.freeze_on_detect,
        };
        scenario.validate().map_err(|e| SchemaError(e.to_string()))?;
        Ok(scenario)
    }

    /// The class `certify` checks: the declared one, else the class implied
    /// by a windowed graph kind.
    pub fn certification_class(&self) -> Result<WindowClass, SchemaError> {
        if let Some(class) = self.graph.class {
            return Ok(class);
        }
        match self.graph.kind {
            AdversaryKind::ConstantComplete => Ok(WindowClass::TComplete { window: 1 }),
            AdversaryKind::TCompleteRandom { window, .. } => Ok(WindowClass::TComplete { window }),
            AdversaryKind::CyclicInConnected { c, window, .. } => Ok(WindowClass::InConnected { c, window }),
            _ => Err(SchemaError("graph.class: required for this graph kind".into())),
        }
    }
}
