use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use cimgw_core::topology::{
    parse_topology, ElementInstance, Mrid, ReferenceEdge, TopologyDocument,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("reading scenario: {0}")]
    Io(String),
    #[error("scenario syntax: {0}")]
    Syntax(String),
    #[error("scenario topology: {0}")]
    Topology(String),
    #[error("scenario invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineElement {
    pub mrid: String,
    pub class: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    /// Role to target mRID.
    #[serde(default)]
    pub references: BTreeMap<String, String>,
}

impl InlineElement {
    fn into_parts(self) -> Result<(ElementInstance, Vec<ReferenceEdge>), ScenarioError> {
        let mrid = Mrid::new(self.mrid)
            .map_err(|_| ScenarioError::Invalid("empty element mRID".into()))?;
        let mut el = ElementInstance::new(mrid.clone(), self.class);
        el.attribute_values = self.attributes;
        let mut edges = Vec::new();
        for (role, to) in self.references {
            let to = Mrid::new(to)
                .map_err(|_| ScenarioError::Invalid(format!("empty target for role `{role}`")))?;
            edges.push(ReferenceEdge {
                from: mrid.clone(),
                role,
                to,
            });
        }
        Ok((el, edges))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Signal {
    Constant {
        value: String,
    },
    Sine {
        amplitude: f64,
        period_ms: u64,
        #[serde(default)]
        offset: f64,
    },
    RandomWalk {
        #[serde(default)]
        start: f64,
        step: f64,
        #[serde(default = "default_walk_interval")]
        interval_ms: u64,
        /// Defaults to a value derived from the scenario seed and the tag.
        seed: Option<u64>,
    },
}

fn default_walk_interval() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagSpec {
    pub tag: String,
    pub mrid: String,
    pub attribute: String,
    pub signal: Signal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Mutation {
    AddElement {
        element: InlineElement,
    },
    RemoveElement {
        mrid: String,
    },
    ChangeAttribute {
        mrid: String,
        attribute: String,
        value: String,
    },
    DropTag {
        tag: String,
    },
    RestoreTag {
        tag: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedEvent {
    /// Offset from node start.
    pub at_ms: u64,
    #[serde(flatten)]
    pub mutation: Mutation,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologySource {
    file: Option<PathBuf>,
    #[serde(default)]
    elements: Vec<InlineElement>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    seed: u64,
    topology: TopologySource,
    #[serde(default)]
    tags: Vec<TagSpec>,
    #[serde(default)]
    events: Vec<ScriptedEvent>,
}

/// A checked scenario: topology resolved, events ordered and applicable.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub topology: TopologyDocument,
    pub tags: Vec<TagSpec>,
    pub events: Vec<ScriptedEvent>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Scenario::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// `base_dir` anchors a relative topology file.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        let topology = match (file.topology.file, file.topology.elements.is_empty()) {
            (Some(_), false) => {
                return Err(ScenarioError::Invalid(
                    "topology takes either `file` or `elements`, not both".into(),
                ))
            }
            (Some(path), true) => {
                let path = base_dir.join(path);
                let bytes = std::fs::read(&path)
                    .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
                parse_topology(&bytes).map_err(|e| ScenarioError::Topology(e.to_string()))?
            }
            (None, _) => {
                let mut elements = Vec::new();
                let mut edges = Vec::new();
                for inline in file.topology.elements {
                    let (el, es) = inline.into_parts()?;
                    elements.push(el);
                    edges.extend(es);
                }
                TopologyDocument::from_parts(elements, edges)
                    .map_err(|e| ScenarioError::Topology(e.to_string()))?
            }
        };
        let scenario = Scenario {
            seed: file.seed,
            topology,
            tags: file.tags,
            events: file.events,
        };
        scenario.check()?;
        Ok(scenario)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        let mut tags = BTreeSet::new();
        for t in &self.tags {
            if t.tag.is_empty() || !tags.insert(t.tag.as_str()) {
                return invalid(format!("tag `{}` is empty or declared twice", t.tag));
            }
            match t.signal {
                Signal::Sine { period_ms: 0, .. } => {
                    return invalid(format!("tag `{}`: sine period must be positive", t.tag))
                }
                Signal::RandomWalk { interval_ms: 0, .. } => {
                    return invalid(format!("tag `{}`: walk interval must be positive", t.tag))
                }
                _ => {}
            }
        }

        // Replay the script against the element and tag sets it will meet.
        let mut mrids: BTreeSet<String> = self
            .topology
            .elements()
            .keys()
            .map(|m| m.as_str().to_string())
            .collect();
        let mut dropped = BTreeSet::new();
        let mut last: Option<u64> = None;
        for ev in &self.events {
            if last.is_some_and(|t| ev.at_ms <= t) {
                return invalid(format!(
                    "event at {} ms is not after the previous one",
                    ev.at_ms
                ));
            }
            last = Some(ev.at_ms);
            match &ev.mutation {
                Mutation::AddElement { element } => {
                    if element.mrid.is_empty() || element.class.is_empty() {
                        return invalid(format!(
                            "event at {} ms adds an element without mRID or class",
                            ev.at_ms
                        ));
                    }
                    if !mrids.insert(element.mrid.clone()) {
                        return invalid(format!(
                            "event at {} ms adds existing `{}`",
                            ev.at_ms, element.mrid
                        ));
                    }
                }
                Mutation::RemoveElement { mrid } => {
                    if !mrids.remove(mrid) {
                        return invalid(format!(
                            "event at {} ms removes unknown `{mrid}`",
                            ev.at_ms
                        ));
                    }
                }
                Mutation::ChangeAttribute { mrid, .. } => {
                    if !mrids.contains(mrid) {
                        return invalid(format!(
                            "event at {} ms changes unknown `{mrid}`",
                            ev.at_ms
                        ));
                    }
                }
                Mutation::DropTag { tag } => {
                    if !tags.contains(tag.as_str()) || !dropped.insert(tag.clone()) {
                        return invalid(format!(
                            "event at {} ms drops unknown or dropped tag `{tag}`",
                            ev.at_ms
                        ));
                    }
                }
                Mutation::RestoreTag { tag } => {
                    if !dropped.remove(tag) {
                        return invalid(format!(
                            "event at {} ms restores tag `{tag}` that is not dropped",
                            ev.at_ms
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INLINE: &str = r#"
seed = 3

[topology]
elements = [
  { mrid = "BRK-001", class = "Breaker", attributes = { normalOpen = "false" } },
  { mrid = "TRM-001", class = "Terminal", references = { ConductingEquipment = "BRK-001" } },
]

[[tags]]
tag = "plc.brk1.state"
mrid = "BRK-001"
attribute = "normalOpen"
signal = { kind = "constant", value = "false" }

[[events]]
at_ms = 100
action = "drop_tag"
tag = "plc.brk1.state"

[[events]]
at_ms = 200
action = "restore_tag"
tag = "plc.brk1.state"
"#;

    #[test]
    fn inline_scenario_parses() {
        let s = Scenario::from_toml(INLINE, Path::new(".")).unwrap();
        assert_eq!(s.seed, 3);
        assert_eq!(s.topology.len(), 2);
        assert_eq!(s.topology.edges().len(), 1);
        assert_eq!(s.events.len(), 2);
        assert_eq!(
            s.events[0].mutation,
            Mutation::DropTag {
                tag: "plc.brk1.state".into()
            }
        );
    }

    #[test]
    fn unordered_events_are_rejected() {
        let text = INLINE.replace("at_ms = 200", "at_ms = 100");
        assert!(matches!(
            Scenario::from_toml(&text, Path::new(".")),
            Err(ScenarioError::Invalid(_))
        ));
    }

    #[test]
    fn mutations_must_reference_live_targets() {
        let text = INLINE.replace("action = \"restore_tag\"", "action = \"drop_tag\"");
        assert!(matches!(
            Scenario::from_toml(&text, Path::new(".")),
            Err(ScenarioError::Invalid(_))
        ));
        let text = format!(
            "{INLINE}\n[[events]]\nat_ms = 300\naction = \"remove_element\"\nmrid = \"NOPE\"\n"
        );
        assert!(matches!(
            Scenario::from_toml(&text, Path::new(".")),
            Err(ScenarioError::Invalid(_))
        ));
    }
}
