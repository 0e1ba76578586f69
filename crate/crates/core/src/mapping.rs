//! Binding between cloud-side (mRID, attribute) slots and the local
//! SCADA's tag identifiers, plus the sample and refresh-policy types the
//! sync loop works with.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cim::CimLibrary;
use crate::topology::{AttributeRef, Mrid, TopologyDocument, MRID_ATTRIBUTE};

/// One line of the tag manifest a local source publishes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub tag: String,
    pub mrid: String,
    pub attribute: String,
}

impl ManifestEntry {
    pub fn new(
        tag: impl Into<String>,
        mrid: impl Into<String>,
        attribute: impl Into<String>,
    ) -> Self {
        ManifestEntry {
            tag: tag.into(),
            mrid: mrid.into(),
            attribute: attribute.into(),
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("manifest JSON: {0}")]
    Json(String),
    #[error("manifest line {line}: expected `tag,mrid,attribute`")]
    BadLine { line: usize },
}

/// Accepts a JSON array of `{tag, mrid, attribute}` objects, or one
/// `tag,mrid,attribute` record per line (`#` starts a comment).
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, ManifestError> {
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).map_err(|e| ManifestError::Json(e.to_string()));
    }
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match fields.as_slice() {
            [tag, mrid, attribute]
                if !tag.is_empty() && !mrid.is_empty() && !attribute.is_empty() =>
            {
                entries.push(ManifestEntry::new(*tag, *mrid, *attribute))
            }
            _ => return Err(ManifestError::BadLine { line: i + 1 }),
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TagBinding {
    pub mrid: Mrid,
    pub attribute: String,
    pub local_tag: String,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum MappingError {
    #[error("tag `{0}` appears more than once in the manifest")]
    DuplicateTag(String),
    #[error("`{mrid}.{attribute}` is claimed by more than one tag")]
    DuplicateTarget { mrid: String, attribute: String },
}

/// A bijection between bound tags and (mRID, attribute) slots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingTable {
    bindings: Vec<TagBinding>,
    /// Attribute slots of the document that no tag feeds.
    pub unmapped_mrids: BTreeSet<AttributeRef>,
    /// Manifest tags whose target is not in the document or library.
    pub unmapped_tags: BTreeSet<String>,
}

impl MappingTable {
    /// Bindings ordered by tag.
    pub fn bindings(&self) -> &[TagBinding] {
        &self.bindings
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn by_tag(&self, tag: &str) -> Option<&TagBinding> {
        self.bindings
            .binary_search_by(|b| b.local_tag.as_str().cmp(tag))
            .ok()
            .map(|i| &self.bindings[i])
    }

    pub fn by_target(&self, mrid: &str, attribute: &str) -> Option<&TagBinding> {
        self.bindings
            .iter()
            .find(|b| b.mrid.as_str() == mrid && b.attribute == attribute)
    }

    pub fn tags(&self) -> Vec<String> {
        self.bindings.iter().map(|b| b.local_tag.clone()).collect()
    }
}

/// Attribute slots (mRID, attribute) a document offers for binding. The
/// mRID itself is the row key, not a slot.
pub fn attribute_slots(doc: &TopologyDocument, lib: &CimLibrary) -> BTreeSet<AttributeRef> {
    let mut slots = BTreeSet::new();
    for el in doc.elements().values() {
        if let Ok(attrs) = lib.resolve_attributes(&el.class_name) {
            for a in attrs.into_iter().filter(|a| a.name != MRID_ATTRIBUTE) {
                slots.insert(AttributeRef {
                    mrid: el.mrid.clone(),
                    attribute: a.name,
                });
            }
        }
    }
    slots
}

pub fn build_mapping(
    doc: &TopologyDocument,
    lib: &CimLibrary,
    manifest: &[ManifestEntry],
) -> Result<MappingTable, MappingError> {
    let mut tags = BTreeSet::new();
    let mut targets = BTreeSet::new();
    for entry in manifest {
        if !tags.insert(entry.tag.as_str()) {
            return Err(MappingError::DuplicateTag(entry.tag.clone()));
        }
        if !targets.insert((entry.mrid.as_str(), entry.attribute.as_str())) {
            return Err(MappingError::DuplicateTarget {
                mrid: entry.mrid.clone(),
                attribute: entry.attribute.clone(),
            });
        }
    }

    let mut table = MappingTable {
        unmapped_mrids: attribute_slots(doc, lib),
        ..MappingTable::default()
    };
    let mut bindings = BTreeMap::new();
    for entry in manifest {
        let slot = Mrid::new(entry.mrid.clone()).ok().map(|mrid| AttributeRef {
            mrid,
            attribute: entry.attribute.clone(),
        });
        match slot {
            Some(slot) if table.unmapped_mrids.remove(&slot) => {
                bindings.insert(
                    entry.tag.clone(),
                    TagBinding {
                        mrid: slot.mrid,
                        attribute: slot.attribute,
                        local_tag: entry.tag.clone(),
                    },
                );
            }
            _ => {
                table.unmapped_tags.insert(entry.tag.clone());
            }
        }
    }
    table.bindings = bindings.into_values().collect();
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quality {
    Good,
    Stale,
    Bad,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Good => "Good",
            Quality::Stale => "Stale",
            Quality::Bad => "Bad",
        }
    }

    pub fn parse(s: &str) -> Option<Quality> {
        match s {
            "Good" => Some(Quality::Good),
            "Stale" => Some(Quality::Stale),
            "Bad" => Some(Quality::Bad),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub local_tag: String,
    pub value: String,
    /// Source clock, milliseconds.
    pub timestamp_ms: u64,
    pub quality: Quality,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("refresh period must be positive")]
    ZeroPeriod,
    #[error("staleness threshold ({threshold:?}) must be at least the period ({period:?})")]
    ThresholdBelowPeriod {
        threshold: Duration,
        period: Duration,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefreshPolicy {
    period: Duration,
    staleness_threshold: Duration,
    jitter_tolerance: Duration,
}

impl RefreshPolicy {
    pub fn new(
        period: Duration,
        staleness_threshold: Duration,
        jitter_tolerance: Duration,
    ) -> Result<Self, PolicyError> {
        if period.is_zero() {
            return Err(PolicyError::ZeroPeriod);
        }
        if staleness_threshold < period {
            return Err(PolicyError::ThresholdBelowPeriod {
                threshold: staleness_threshold,
                period,
            });
        }
        Ok(RefreshPolicy {
            period,
            staleness_threshold,
            jitter_tolerance,
        })
    }

    pub fn from_millis(
        period: u64,
        staleness_threshold: u64,
        jitter_tolerance: u64,
    ) -> Result<Self, PolicyError> {
        RefreshPolicy::new(
            Duration::from_millis(period),
            Duration::from_millis(staleness_threshold),
            Duration::from_millis(jitter_tolerance),
        )
    }

    pub fn period(&self) -> Duration {
        self.period
    }

    pub fn staleness_threshold(&self) -> Duration {
        self.staleness_threshold
    }

    pub fn jitter_tolerance(&self) -> Duration {
        self.jitter_tolerance
    }
}

impl Default for RefreshPolicy {
    fn default() -> Self {
        RefreshPolicy::from_millis(1000, 3000, 50).expect("default policy is valid")
    }
}
