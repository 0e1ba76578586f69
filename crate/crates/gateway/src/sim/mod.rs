//! A simulated local SCADA node: scenario-defined topology and tags, evolving
//! signal values, setpoint writes, and scripted topology mutations.

mod scenario;
pub mod server;

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use async_trait::async_trait;
use cimgw_core::mapping::ManifestEntry;
use cimgw_core::topology::{ElementInstance, Mrid, ReferenceEdge, TopologyDocument};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::Clock;
use crate::source::{DataSource, ReadResponse, Reading, SourceError, WriteAck};

pub use scenario::{
    InlineElement, Mutation, Scenario, ScenarioError, ScriptedEvent, Signal, TagSpec,
};

struct Walk {
    steps: u64,
    value: f64,
    rng: ChaCha8Rng,
}

struct TagState {
    spec: TagSpec,
    dropped: bool,
    written: Option<String>,
    walk: Option<Walk>,
}

struct NodeState {
    elements: BTreeMap<Mrid, ElementInstance>,
    edges: Vec<ReferenceEdge>,
    tags: BTreeMap<String, TagState>,
    events: Vec<ScriptedEvent>,
    next_event: usize,
    paused: bool,
    seed: u64,
}

pub struct SimNode {
    clock: Arc<dyn Clock>,
    start_ms: u64,
    state: Mutex<NodeState>,
}

fn tag_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, mixed with the scenario seed.
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64 ^ seed, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl SimNode {
    pub fn new(scenario: Scenario, clock: Arc<dyn Clock>) -> SimNode {
        let start_ms = clock.now_ms();
        let tags = scenario
            .tags
            .into_iter()
            .map(|spec| {
                (
                    spec.tag.clone(),
                    TagState {
                        spec,
                        dropped: false,
                        written: None,
                        walk: None,
                    },
                )
            })
            .collect();
        SimNode {
            clock,
            start_ms,
            state: Mutex::new(NodeState {
                elements: scenario.topology.elements().clone(),
                edges: scenario.topology.edges().to_vec(),
                tags,
                events: scenario.events,
                next_event: 0,
                paused: false,
                seed: scenario.seed,
            }),
        }
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.clock.now_ms().saturating_sub(self.start_ms)
    }

    /// While paused the node answers nothing, as if unreachable.
    pub fn pause(&self) {
        self.state.lock().paused = true;
    }

    pub fn resume(&self) {
        self.state.lock().paused = false;
    }

    pub fn is_paused(&self) -> bool {
        self.state.lock().paused
    }

    fn live(&self) -> Result<parking_lot::MutexGuard<'_, NodeState>, SourceError> {
        let mut st = self.state.lock();
        if st.paused {
            return Err(SourceError::Unreachable("simulator paused".into()));
        }
        let elapsed = self.elapsed_ms();
        st.apply_due(elapsed);
        Ok(st)
    }

    pub fn topology_document(&self) -> Result<TopologyDocument, SourceError> {
        let st = self.live()?;
        TopologyDocument::from_parts(st.elements.values().cloned(), st.edges.clone())
            .map_err(|e| SourceError::Protocol(e.to_string()))
    }

    pub fn manifest_entries(&self) -> Result<Vec<ManifestEntry>, SourceError> {
        let st = self.live()?;
        Ok(st
            .tags
            .values()
            .map(|t| ManifestEntry::new(&t.spec.tag, &t.spec.mrid, &t.spec.attribute))
            .collect())
    }

    pub fn read_tags(&self, tags: &[String]) -> Result<ReadResponse, SourceError> {
        let now = self.clock.now_ms();
        let elapsed = self.elapsed_ms();
        let mut st = self.live()?;
        let seed = st.seed;
        let readings = tags
            .iter()
            .map(|tag| {
                let reading = match st.tags.get_mut(tag) {
                    None => Reading::Error {
                        error: "unknown tag".into(),
                    },
                    Some(t) if t.dropped => Reading::Error {
                        error: "tag dropped".into(),
                    },
                    Some(t) => Reading::Value {
                        value: t.value_at(elapsed, seed),
                        timestamp_ms: now,
                    },
                };
                (tag.clone(), reading)
            })
            .collect();
        Ok(ReadResponse {
            time_ms: now,
            readings,
        })
    }

    pub fn write_tag(&self, tag: &str, value: &str) -> Result<WriteAck, SourceError> {
        let mut st = self.live()?;
        Ok(match st.tags.get_mut(tag) {
            None => WriteAck::rejected("unknown tag"),
            Some(t) if t.dropped => WriteAck::rejected("tag dropped"),
            Some(t) => {
                t.written = Some(value.to_string());
                WriteAck::accepted()
            }
        })
    }
}

impl TagState {
    fn value_at(&mut self, elapsed: u64, seed: u64) -> String {
        if let Some(v) = &self.written {
            return v.clone();
        }
        match self.spec.signal {
            Signal::Constant { ref value } => value.clone(),
            Signal::Sine {
                amplitude,
                period_ms,
                offset,
            } => {
                let phase = (elapsed % period_ms) as f64 / period_ms as f64;
                format!("{}", offset + amplitude * (TAU * phase).sin())
            }
            Signal::RandomWalk {
                start,
                step,
                interval_ms,
                seed: walk_seed,
            } => {
                let target = elapsed / interval_ms;
                let fresh = || Walk {
                    steps: 0,
                    value: start,
                    rng: ChaCha8Rng::seed_from_u64(
                        walk_seed.unwrap_or_else(|| tag_seed(seed, &self.spec.tag)),
                    ),
                };
                let walk = match self.walk.take() {
                    Some(w) if w.steps <= target => w,
                    _ => fresh(),
                };
                let walk = self.walk.insert(walk);
                while walk.steps < target {
                    walk.value += if walk.rng.random_bool(0.5) {
                        step
                    } else {
                        -step
                    };
                    walk.steps += 1;
                }
                format!("{}", walk.value)
            }
        }
    }
}

impl NodeState {
    fn apply_due(&mut self, elapsed: u64) {
        while let Some(ev) = self.events.get(self.next_event) {
            if ev.at_ms > elapsed {
                break;
            }
            let mutation = ev.mutation.clone();
            self.next_event += 1;
            self.apply(mutation);
            // A scripted event ends every setpoint override.
            for t in self.tags.values_mut() {
                t.written = None;
            }
        }
    }

    fn apply(&mut self, mutation: Mutation) {
        match mutation {
            Mutation::AddElement { element } => {
                let Ok(mrid) = Mrid::new(element.mrid.clone()) else {
                    return;
                };
                let mut el = ElementInstance::new(mrid.clone(), element.class);
                el.attribute_values = element.attributes;
                for (role, to) in element.references {
                    if let Ok(to) = Mrid::new(to) {
                        self.edges.push(ReferenceEdge {
                            from: mrid.clone(),
                            role,
                            to,
                        });
                    }
                }
                self.elements.insert(mrid, el);
            }
            Mutation::RemoveElement { mrid } => {
                self.elements.remove(mrid.as_str());
                self.edges.retain(|e| e.from.as_str() != mrid);
            }
            Mutation::ChangeAttribute {
                mrid,
                attribute,
                value,
            } => {
                if let Some(el) = self.elements.get_mut(mrid.as_str()) {
                    el.attribute_values.insert(attribute, value);
                }
            }
            Mutation::DropTag { tag } => {
                if let Some(t) = self.tags.get_mut(&tag) {
                    t.dropped = true;
                }
            }
            Mutation::RestoreTag { tag } => {
                if let Some(t) = self.tags.get_mut(&tag) {
                    t.dropped = false;
                }
            }
        }
    }
}

#[async_trait]
impl DataSource for SimNode {
    async fn topology(&self) -> Result<Vec<u8>, SourceError> {
        Ok(self.topology_document()?.to_canonical_xml().into_bytes())
    }

    async fn manifest(&self) -> Result<Vec<ManifestEntry>, SourceError> {
        self.manifest_entries()
    }

    async fn read(&self, tags: &[String]) -> Result<ReadResponse, SourceError> {
        self.read_tags(tags)
    }

    async fn write(&self, tag: &str, value: &str) -> Result<WriteAck, SourceError> {
        self.write_tag(tag, value)
    }
}
