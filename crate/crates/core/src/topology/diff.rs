use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Mrid, TopologyDocument};

/// Marker used in [`TopologyDiff::changed`] when an element changed class.
pub const CLASS_CHANGE: &str = "@class";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyDiff {
    pub added: BTreeSet<Mrid>,
    pub removed: BTreeSet<Mrid>,
    /// Attribute names (and reference roles) whose values differ.
    pub changed: BTreeMap<Mrid, BTreeSet<String>>,
}

impl TopologyDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.changed.is_empty()
    }
}

pub fn diff_topologies(old: &TopologyDocument, new: &TopologyDocument) -> TopologyDiff {
    let mut diff = TopologyDiff::default();
    for mrid in new.elements().keys() {
        if !old.elements().contains_key(mrid) {
            diff.added.insert(mrid.clone());
        }
    }
    for (mrid, before) in old.elements() {
        let Some(after) = new.element(mrid.as_str()) else {
            diff.removed.insert(mrid.clone());
            continue;
        };
        let mut changed = BTreeSet::new();
        if before.class_name != after.class_name {
            changed.insert(CLASS_CHANGE.to_string());
        }
        let names: BTreeSet<&String> = before
            .attribute_values
            .keys()
            .chain(after.attribute_values.keys())
            .collect();
        for name in names {
            if before.attribute_values.get(name) != after.attribute_values.get(name) {
                changed.insert(name.clone());
            }
        }
        let targets = |doc: &TopologyDocument| {
            let mut by_role: BTreeMap<String, Vec<Mrid>> = BTreeMap::new();
            for e in doc.edges_from(mrid.as_str()) {
                by_role
                    .entry(e.role.clone())
                    .or_default()
                    .push(e.to.clone());
            }
            for v in by_role.values_mut() {
                v.sort();
            }
            by_role
        };
        let (old_refs, new_refs) = (targets(old), targets(new));
        for role in old_refs.keys().chain(new_refs.keys()) {
            if old_refs.get(role) != new_refs.get(role) {
                changed.insert(role.clone());
            }
        }
        if !changed.is_empty() {
            diff.changed.insert(mrid.clone(), changed);
        }
    }
    diff
}
