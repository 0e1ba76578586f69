use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::CimLibrary;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeChange {
    pub from: String,
    pub to: String,
}

/// Attribute-level changes of one class, compared on resolved
/// (post-inheritance) attribute lists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassChange {
    pub added: BTreeSet<String>,
    pub removed: BTreeSet<String>,
    pub retyped: BTreeMap<String, TypeChange>,
}

impl ClassChange {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.retyped.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryDiff {
    pub added_classes: BTreeSet<String>,
    pub removed_classes: BTreeSet<String>,
    pub changed_classes: BTreeMap<String, ClassChange>,
}

impl LibraryDiff {
    pub fn is_empty(&self) -> bool {
        self.added_classes.is_empty()
            && self.removed_classes.is_empty()
            && self.changed_classes.is_empty()
    }

    /// The diff that goes the other way.
    pub fn mirrored(&self) -> LibraryDiff {
        LibraryDiff {
            added_classes: self.removed_classes.clone(),
            removed_classes: self.added_classes.clone(),
            changed_classes: self
                .changed_classes
                .iter()
                .map(|(name, c)| {
                    let change = ClassChange {
                        added: c.removed.clone(),
                        removed: c.added.clone(),
                        retyped: c
                            .retyped
                            .iter()
                            .map(|(a, t)| {
                                (
                                    a.clone(),
                                    TypeChange {
                                        from: t.to.clone(),
                                        to: t.from.clone(),
                                    },
                                )
                            })
                            .collect(),
                    };
                    (name.clone(), change)
                })
                .collect(),
        }
    }
}

pub fn diff_libraries(old: &CimLibrary, new: &CimLibrary) -> LibraryDiff {
    let old_names: BTreeSet<&String> = old.classes().keys().collect();
    let new_names: BTreeSet<&String> = new.classes().keys().collect();

    let mut diff = LibraryDiff {
        added_classes: new_names
            .difference(&old_names)
            .map(|s| s.to_string())
            .collect(),
        removed_classes: old_names
            .difference(&new_names)
            .map(|s| s.to_string())
            .collect(),
        changed_classes: BTreeMap::new(),
    };

    for name in old_names.intersection(&new_names) {
        // both libraries are valid, so their own classes always resolve
        let before: BTreeMap<String, String> = old
            .resolve_attributes(name)
            .expect("class present in library")
            .into_iter()
            .map(|a| (a.name, a.declared_type))
            .collect();
        let after: BTreeMap<String, String> = new
            .resolve_attributes(name)
            .expect("class present in library")
            .into_iter()
            .map(|a| (a.name, a.declared_type))
            .collect();

        let mut change = ClassChange::default();
        for (attr, ty) in &after {
            match before.get(attr) {
                None => {
                    change.added.insert(attr.clone());
                }
                Some(old_ty) if old_ty != ty => {
                    change.retyped.insert(
                        attr.clone(),
                        TypeChange {
                            from: old_ty.clone(),
                            to: ty.clone(),
                        },
                    );
                }
                Some(_) => {}
            }
        }
        for attr in before.keys() {
            if !after.contains_key(attr) {
                change.removed.insert(attr.clone());
            }
        }
        if !change.is_empty() {
            diff.changed_classes.insert(name.to_string(), change);
        }
    }
    diff
}
