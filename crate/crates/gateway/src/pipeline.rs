use std::collections::BTreeSet;
use std::fmt;

use cimgw_core::schema::SchemaDiff;
use cimgw_core::topology::ValidationReport;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

/// The six ingest stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Parse,
    Validate,
    Plan,
    Migrate,
    Map,
    Activate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Parse,
        Stage::Validate,
        Stage::Plan,
        Stage::Migrate,
        Stage::Map,
        Stage::Activate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Parse => "parse",
            Stage::Validate => "validate",
            Stage::Plan => "plan",
            Stage::Migrate => "migrate",
            Stage::Map => "map",
            Stage::Activate => "activate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("ingest failed at {stage}: {message}")]
pub struct IngestError {
    pub stage: Stage,
    pub message: String,
}

impl IngestError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        IngestError {
            stage,
            message: message.to_string(),
        }
    }
}

/// Storage errors outside any stage's own work happen while committing.
impl From<crate::store::StoreError> for IngestError {
    fn from(e: crate::store::StoreError) -> Self {
        IngestError::new(Stage::Activate, e)
    }
}

/// Test hook: armed stages fail right after doing their work, so the
/// rollback path is exercised with real side effects in flight.
#[derive(Debug, Default)]
pub struct FaultInjector {
    armed: Mutex<BTreeSet<Stage>>,
}

impl FaultInjector {
    pub fn arm(&self, stage: Stage) {
        self.armed.lock().insert(stage);
    }

    pub fn disarm_all(&self) {
        self.armed.lock().clear();
    }

    pub fn check(&self, stage: Stage) -> Result<(), IngestError> {
        if self.armed.lock().contains(&stage) {
            Err(IngestError::new(stage, "injected fault"))
        } else {
            Ok(())
        }
    }
}

/// What a successful reload changed; also the payload of reload events.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReloadSummary {
    pub generation: u64,
    pub library_version: String,
    pub digest: String,
    pub reinitialized: bool,
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub changed: Vec<String>,
    pub created_tables: Vec<String>,
    pub added_columns: Vec<String>,
    pub dropped_columns: Vec<String>,
    pub dropped_tables: Vec<String>,
    pub bindings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReloadResult {
    pub summary: ReloadSummary,
    pub validation: ValidationReport,
    /// The plan as first computed; a reinit plan is followed by a full rebuild
    /// listed in `summary.created_tables`.
    pub schema_actions: SchemaDiff,
    pub duration_ms: u64,
}

impl ReloadResult {
    pub fn generation(&self) -> u64 {
        self.summary.generation
    }

    pub fn reinitialized(&self) -> bool {
        self.summary.reinitialized
    }
}

pub(crate) fn record_actions(summary: &mut ReloadSummary, diff: &SchemaDiff) {
    summary
        .created_tables
        .extend(diff.create_tables.iter().map(|t| t.name.clone()));
    summary.added_columns.extend(
        diff.add_columns
            .iter()
            .map(|c| format!("{}.{}", c.table, c.column.name)),
    );
    summary.dropped_columns.extend(
        diff.drop_columns
            .iter()
            .map(|c| format!("{}.{}", c.table, c.column.name)),
    );
    summary
        .dropped_tables
        .extend(diff.drop_tables.iter().cloned());
}
