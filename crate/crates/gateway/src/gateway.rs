//! The gateway: owns the library, storage and current state, runs the ingest
//! pipeline, and answers the read and setpoint paths.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use cimgw_core::cim::CimLibrary;
use cimgw_core::literal::conforms;
use cimgw_core::mapping::{build_mapping, MappingTable};
use cimgw_core::schema::{plan_schema_with, PlanOptions, StorageCatalog};
use cimgw_core::topology::{
    diff_topologies, parse_topology_with, validate, ElementInstance, RdfOptions, ReferenceEdge,
    TopologyDocument, ValidationReport,
};
use cimgw_core::PrimitiveKind;
use parking_lot::{Mutex, RwLock};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::events::{EventBus, EventStream, GatewayEvent};
use crate::pipeline::{
    record_actions, FaultInjector, IngestError, ReloadResult, ReloadSummary, Stage,
};
use crate::source::{DataSource, SourceError};
use crate::store::{BoundTag, LatestValues, Store, StoreError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WritableAttr {
    pub class: String,
    pub attribute: String,
}

impl WritableAttr {
    /// Parses `Class.attribute`.
    pub fn parse(s: &str) -> Option<WritableAttr> {
        let (class, attribute) = s.rsplit_once('.')?;
        (!class.is_empty() && !attribute.is_empty()).then(|| WritableAttr {
            class: class.to_string(),
            attribute: attribute.to_string(),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub tokens: Vec<String>,
    /// Applies to the named class and its subclasses.
    pub writable: Vec<WritableAttr>,
    pub allow_drops: bool,
    pub rdf: RdfOptions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub mrid: String,
    pub class_name: String,
    pub display_name: String,
    pub datasheet: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiConfig {
    pub generation: u64,
    /// Ordered by class, then mRID.
    pub devices: Vec<DeviceEntry>,
}

/// Everything one pipeline run produced. Replaced whole on reload.
#[derive(Debug, Clone)]
pub struct GatewayState {
    pub generation: u64,
    pub library: Arc<CimLibrary>,
    pub topology: TopologyDocument,
    pub catalog: StorageCatalog,
    pub mapping: MappingTable,
    pub bound: Vec<BoundTag>,
    pub validation: ValidationReport,
    pub ui_config: UiConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasheetAttribute {
    pub name: String,
    pub kind: Option<PrimitiveKind>,
    /// Literal from the topology document.
    pub literal: Option<String>,
    pub tag: Option<String>,
    pub writable: bool,
}

/// Static view of one device: class, attributes, references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datasheet {
    pub generation: u64,
    pub mrid: String,
    pub class_name: String,
    pub display_name: String,
    /// Root first, ending with the device's own class.
    pub ancestry: Vec<String>,
    pub attributes: Vec<DatasheetAttribute>,
    pub references: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceData {
    pub generation: u64,
    #[serde(flatten)]
    pub latest: LatestValues,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyView {
    pub generation: u64,
    pub library_version: String,
    pub digest: String,
    pub elements: Vec<ElementInstance>,
    pub edges: Vec<ReferenceEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetpointAck {
    pub mrid: String,
    pub attribute: String,
    pub tag: String,
    pub accepted: bool,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("no topology has been ingested yet")]
    NotReady,
    #[error("unknown mRID `{0}`")]
    UnknownMrid(String),
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("`{mrid}.{attribute}` is not writable")]
    NotWritable { mrid: String, attribute: String },
    #[error("`{literal}` is not a valid {expected} value")]
    TypeMismatch {
        expected: PrimitiveKind,
        literal: String,
    },
    #[error("source rejected the write: {0}")]
    SourceRejected(String),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("storage: {0}")]
    Store(String),
}

impl From<StoreError> for GatewayError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownMrid(m) => GatewayError::UnknownMrid(m),
            other => GatewayError::Store(other.to_string()),
        }
    }
}

pub struct Gateway {
    settings: Settings,
    library: RwLock<Arc<CimLibrary>>,
    store: Mutex<Store>,
    state: RwLock<Arc<GatewayState>>,
    source: Arc<dyn DataSource>,
    events: EventBus,
    faults: FaultInjector,
    clock: Arc<dyn Clock>,
    reloads: tokio::sync::Mutex<()>,
    sync_ticks: AtomicU64,
}

fn display_name(el: &ElementInstance) -> String {
    el.attribute_values
        .get("name")
        .filter(|n| !n.is_empty())
        .cloned()
        .unwrap_or_else(|| el.mrid.as_str().to_string())
}

pub fn datasheet_link(mrid: &str) -> String {
    format!(
        "/api/devices/{}",
        utf8_percent_encode(mrid, NON_ALPHANUMERIC)
    )
}

fn ui_config(generation: u64, doc: &TopologyDocument) -> UiConfig {
    let mut devices: Vec<DeviceEntry> = doc
        .elements()
        .values()
        .map(|el| DeviceEntry {
            mrid: el.mrid.as_str().to_string(),
            class_name: el.class_name.clone(),
            display_name: display_name(el),
            datasheet: datasheet_link(el.mrid.as_str()),
        })
        .collect();
    devices.sort_by(|a, b| (&a.class_name, &a.mrid).cmp(&(&b.class_name, &b.mrid)));
    UiConfig {
        generation,
        devices,
    }
}

fn bound_tags(
    doc: &TopologyDocument,
    catalog: &StorageCatalog,
    mapping: &MappingTable,
) -> Vec<BoundTag> {
    mapping
        .bindings()
        .iter()
        .filter_map(|b| {
            let el = doc.element(b.mrid.as_str())?;
            let kind = catalog
                .tables
                .get(&el.class_name)?
                .column(&b.attribute)?
                .kind;
            Some(BoundTag {
                tag: b.local_tag.clone(),
                mrid: b.mrid.as_str().to_string(),
                attribute: b.attribute.clone(),
                class: el.class_name.clone(),
                kind,
            })
        })
        .collect()
}

impl Gateway {
    pub fn new(
        library: CimLibrary,
        store: Store,
        source: Arc<dyn DataSource>,
        clock: Arc<dyn Clock>,
        settings: Settings,
    ) -> Result<Gateway, StoreError> {
        let library = Arc::new(library);
        let catalog = store.catalog()?;
        let initial = GatewayState {
            generation: 0,
            library: library.clone(),
            topology: TopologyDocument::empty(),
            catalog,
            mapping: MappingTable::default(),
            bound: Vec::new(),
            validation: ValidationReport::default(),
            ui_config: UiConfig::default(),
        };
        Ok(Gateway {
            settings,
            library: RwLock::new(library),
            store: Mutex::new(store),
            state: RwLock::new(Arc::new(initial)),
            source,
            events: EventBus::default(),
            faults: FaultInjector::default(),
            clock,
            reloads: tokio::sync::Mutex::new(()),
            sync_ticks: AtomicU64::new(0),
        })
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn source(&self) -> &Arc<dyn DataSource> {
        &self.source
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn events(&self) -> &EventBus {
        &self.events
    }

    pub fn subscribe(&self, since: u64) -> EventStream {
        self.events.subscribe(since)
    }

    pub fn faults(&self) -> &FaultInjector {
        &self.faults
    }

    pub fn snapshot(&self) -> Arc<GatewayState> {
        self.state.read().clone()
    }

    pub fn generation(&self) -> u64 {
        self.state.read().generation
    }

    pub fn library(&self) -> Arc<CimLibrary> {
        self.library.read().clone()
    }

    /// Library used by the next ingest. A different version triggers a
    /// storage reinit on that ingest.
    pub fn replace_library(&self, library: CimLibrary) {
        *self.library.write() = Arc::new(library);
    }

    /// Direct storage access, serialized with the pipeline and the sync loop.
    pub fn with_store<T>(&self, f: impl FnOnce(&mut Store) -> T) -> T {
        f(&mut self.store.lock())
    }

    pub fn sync_ticks(&self) -> u64 {
        self.sync_ticks.load(Ordering::SeqCst)
    }

    pub(crate) fn count_tick(&self) {
        self.sync_ticks.fetch_add(1, Ordering::SeqCst);
    }

    /// Ingests only when the document or the library differs from what is live.
    pub async fn ingest_if_changed(&self, rdf: &[u8]) -> Result<Option<ReloadResult>, IngestError> {
        let current = self.snapshot();
        if current.generation > 0 {
            if let Ok(doc) = parse_topology_with(rdf, &self.settings.rdf) {
                if doc.source_digest() == current.topology.source_digest()
                    && self.library().version() == current.library.version()
                {
                    return Ok(None);
                }
            }
        }
        self.ingest(rdf).await.map(Some)
    }

    /// Runs the six stages. All storage effects share one transaction and
    /// the new state is swapped in only after it commits; on any failure the
    /// previous generation stays live.
    pub async fn ingest(&self, rdf: &[u8]) -> Result<ReloadResult, IngestError> {
        let result = self.run_pipeline(rdf).await;
        match &result {
            Ok(r) => {
                tracing::info!(
                    generation = r.generation(),
                    reinit = r.reinitialized(),
                    "topology reloaded"
                );
                self.events.publish(GatewayEvent::Reload(r.summary.clone()));
            }
            Err(e) => {
                tracing::warn!(stage = %e.stage, "ingest failed: {}", e.message);
                self.events.publish(GatewayEvent::IngestFailed {
                    stage: e.stage,
                    message: e.message.clone(),
                });
            }
        }
        result
    }

    async fn run_pipeline(&self, rdf: &[u8]) -> Result<ReloadResult, IngestError> {
        let _serial = self.reloads.lock().await;
        let started = Instant::now();
        let lib = self.library();

        let doc = parse_topology_with(rdf, &self.settings.rdf)
            .map_err(|e| IngestError::new(Stage::Parse, e))?;
        self.faults.check(Stage::Parse)?;

        let validation = validate(&doc, &lib);
        if !validation.unknown_classes.is_empty() {
            let names: Vec<&str> = validation
                .unknown_classes
                .iter()
                .map(String::as_str)
                .collect();
            return Err(IngestError::new(
                Stage::Validate,
                format!(
                    "classes not in library {}: {}",
                    lib.version(),
                    names.join(", ")
                ),
            ));
        }
        self.faults.check(Stage::Validate)?;

        // Network I/O happens before the storage transaction opens.
        let manifest = self
            .source
            .manifest()
            .await
            .map_err(|e| IngestError::new(Stage::Map, e))?;

        let mut store = self.store.lock();
        let previous = self.snapshot();
        let now = self.clock.now_ms();
        let opts = PlanOptions {
            allow_drops: self.settings.allow_drops,
        };
        let mut summary = ReloadSummary::default();
        let store_err = |stage: Stage| move |e: StoreError| IngestError::new(stage, e);

        let (planned, catalog, mapping) = store.transaction(|tx| {
            let catalog = tx.catalog().map_err(store_err(Stage::Plan))?;
            let planned = plan_schema_with(&doc, &lib, &catalog, opts)
                .map_err(|e| IngestError::new(Stage::Plan, e))?;
            self.faults.check(Stage::Plan)?;

            let mut catalog = tx
                .apply_schema(&planned)
                .map_err(store_err(Stage::Migrate))?;
            if planned.requires_reinit {
                summary.reinitialized = true;
                let rebuild = plan_schema_with(&doc, &lib, &catalog, opts)
                    .map_err(|e| IngestError::new(Stage::Migrate, e))?;
                catalog = tx
                    .apply_schema(&rebuild)
                    .map_err(store_err(Stage::Migrate))?;
                record_actions(&mut summary, &rebuild);
            } else {
                record_actions(&mut summary, &planned);
            }
            self.faults.check(Stage::Migrate)?;

            let mapping = build_mapping(&doc, &lib, &manifest)
                .map_err(|e| IngestError::new(Stage::Map, e))?;
            self.faults.check(Stage::Map)?;

            tx.seed(&doc, &catalog, now)
                .map_err(store_err(Stage::Activate))?;
            self.faults.check(Stage::Activate)?;
            Ok::<_, IngestError>((planned, catalog, mapping))
        })?;

        let generation = previous.generation + 1;
        let changes = diff_topologies(&previous.topology, &doc);
        summary.generation = generation;
        summary.library_version = lib.version().to_string();
        summary.digest = doc.source_digest().to_string();
        summary.added = changes
            .added
            .iter()
            .map(|m| m.as_str().to_string())
            .collect();
        summary.removed = changes
            .removed
            .iter()
            .map(|m| m.as_str().to_string())
            .collect();
        summary.changed = changes
            .changed
            .keys()
            .map(|m| m.as_str().to_string())
            .collect();
        summary.bindings = mapping.len();

        let next = GatewayState {
            generation,
            library: lib,
            bound: bound_tags(&doc, &catalog, &mapping),
            ui_config: ui_config(generation, &doc),
            topology: doc,
            catalog,
            mapping,
            validation: validation.clone(),
        };
        // Swapped while storage is still locked: readers holding the store
        // lock see a state that matches the committed tables.
        *self.state.write() = Arc::new(next);
        drop(store);

        Ok(ReloadResult {
            summary,
            validation,
            schema_actions: planned,
            duration_ms: started.elapsed().as_millis() as u64,
        })
    }

    pub fn ui_config(&self) -> Result<UiConfig, GatewayError> {
        let state = self.snapshot();
        if state.generation == 0 {
            return Err(GatewayError::NotReady);
        }
        Ok(state.ui_config.clone())
    }

    pub fn topology(&self) -> Result<TopologyView, GatewayError> {
        let state = self.snapshot();
        if state.generation == 0 {
            return Err(GatewayError::NotReady);
        }
        Ok(TopologyView {
            generation: state.generation,
            library_version: state.library.version().to_string(),
            digest: state.topology.source_digest().to_string(),
            elements: state.topology.elements().values().cloned().collect(),
            edges: state.topology.edges().to_vec(),
        })
    }

    fn is_writable(&self, lib: &CimLibrary, class: &str, attribute: &str) -> bool {
        self.settings
            .writable
            .iter()
            .any(|w| w.attribute == attribute && lib.is_kind_of(class, &w.class))
    }

    pub fn datasheet(&self, mrid: &str) -> Result<Datasheet, GatewayError> {
        let state = self.snapshot();
        let el = state
            .topology
            .element(mrid)
            .ok_or_else(|| GatewayError::UnknownMrid(mrid.to_string()))?;
        let lib = &state.library;
        let ancestry = lib
            .ancestry(&el.class_name)
            .map(|a| a.into_iter().map(|c| c.name.clone()).collect())
            .unwrap_or_default();
        let attributes = lib
            .resolve_attributes(&el.class_name)
            .unwrap_or_default()
            .into_iter()
            .map(|a| {
                let tag = state
                    .mapping
                    .by_target(mrid, &a.name)
                    .map(|b| b.local_tag.clone());
                DatasheetAttribute {
                    kind: lib.resolve_type(&a).ok(),
                    literal: el.attribute_values.get(&a.name).cloned(),
                    writable: tag.is_some() && self.is_writable(lib, &el.class_name, &a.name),
                    tag,
                    name: a.name,
                }
            })
            .collect();
        let mut references: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for e in state.topology.edges_from(mrid) {
            references
                .entry(e.role.clone())
                .or_default()
                .push(e.to.as_str().to_string());
        }
        Ok(Datasheet {
            generation: state.generation,
            mrid: mrid.to_string(),
            class_name: el.class_name.clone(),
            display_name: display_name(el),
            ancestry,
            attributes,
            references,
        })
    }

    pub fn device_data(&self, mrid: &str) -> Result<DeviceData, GatewayError> {
        // The state swap happens under the store lock, so holding it pins
        // one generation for the whole read.
        let store = self.store.lock();
        let state = self.snapshot();
        if state.topology.element(mrid).is_none() {
            return Err(GatewayError::UnknownMrid(mrid.to_string()));
        }
        let latest = store.view().latest(mrid)?;
        Ok(DeviceData {
            generation: state.generation,
            latest,
        })
    }

    /// Forwards a setpoint to the source. Storage changes only when the next
    /// poll reads the value back.
    pub async fn setpoint(
        &self,
        mrid: &str,
        attribute: &str,
        value: &str,
        token: Option<&str>,
    ) -> Result<SetpointAck, GatewayError> {
        if !token.is_some_and(|t| self.settings.tokens.iter().any(|k| k == t)) {
            return Err(GatewayError::Unauthorized);
        }
        let state = self.snapshot();
        let el = state
            .topology
            .element(mrid)
            .ok_or_else(|| GatewayError::UnknownMrid(mrid.to_string()))?;
        let not_writable = || GatewayError::NotWritable {
            mrid: mrid.to_string(),
            attribute: attribute.to_string(),
        };
        let binding = state
            .mapping
            .by_target(mrid, attribute)
            .ok_or_else(not_writable)?;
        if !self.is_writable(&state.library, &el.class_name, attribute) {
            return Err(not_writable());
        }
        let kind = state
            .library
            .attribute_kind(&el.class_name, attribute)
            .ok()
            .flatten()
            .ok_or_else(not_writable)?;
        if !conforms(kind, value) {
            return Err(GatewayError::TypeMismatch {
                expected: kind,
                literal: value.to_string(),
            });
        }
        let ack = self.source.write(&binding.local_tag, value).await?;
        if !ack.accepted {
            return Err(GatewayError::SourceRejected(ack.reason.unwrap_or_default()));
        }
        Ok(SetpointAck {
            mrid: mrid.to_string(),
            attribute: attribute.to_string(),
            tag: binding.local_tag.clone(),
            accepted: true,
        })
    }
}
