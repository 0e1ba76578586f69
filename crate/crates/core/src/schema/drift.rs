use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{desired_table, document_classes, ColumnKind, StorageCatalog};
use crate::cim::CimLibrary;
use crate::topology::TopologyDocument;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableColumn {
    pub table: String,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetypedColumn {
    pub table: String,
    pub column: String,
    pub stored: ColumnKind,
    pub expected: ColumnKind,
}

/// Differences between what storage holds and what topology + library call for.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftReport {
    /// Resolved attributes (and used reference roles) with no backing column.
    pub missing_attributes: Vec<TableColumn>,
    /// Columns backing no resolved attribute and no used reference role.
    pub redundant_attributes: Vec<TableColumn>,
    pub retyped_columns: Vec<RetypedColumn>,
    pub missing_tables: BTreeSet<String>,
    pub orphan_tables: BTreeSet<String>,
}

impl DriftReport {
    pub fn is_empty(&self) -> bool {
        self.missing_attributes.is_empty()
            && self.redundant_attributes.is_empty()
            && self.retyped_columns.is_empty()
            && self.missing_tables.is_empty()
            && self.orphan_tables.is_empty()
    }
}

/// Classes unknown to the library (or with unresolvable attribute types) are
/// skipped here; they surface in validation instead.
pub fn detect_drift(
    catalog: &StorageCatalog,
    doc: &TopologyDocument,
    lib: &CimLibrary,
) -> DriftReport {
    let mut report = DriftReport::default();
    let classes = document_classes(doc);

    for class in &classes {
        let Ok(want) = desired_table(doc, lib, class) else {
            continue;
        };
        let Some(have) = catalog.tables.get(*class) else {
            report.missing_tables.insert(class.to_string());
            report
                .missing_attributes
                .extend(want.columns.iter().skip(1).map(|c| TableColumn {
                    table: class.to_string(),
                    column: c.name.clone(),
                }));
            continue;
        };
        for col in &want.columns {
            match have.column(&col.name) {
                None => report.missing_attributes.push(TableColumn {
                    table: class.to_string(),
                    column: col.name.clone(),
                }),
                Some(existing) if existing.kind != col.kind => {
                    report.retyped_columns.push(RetypedColumn {
                        table: class.to_string(),
                        column: col.name.clone(),
                        stored: existing.kind,
                        expected: col.kind,
                    })
                }
                Some(_) => {}
            }
        }
        for col in &have.columns {
            if want.column(&col.name).is_none() {
                report.redundant_attributes.push(TableColumn {
                    table: class.to_string(),
                    column: col.name.clone(),
                });
            }
        }
    }
    for table in catalog.tables.keys() {
        if !classes.contains(table.as_str()) {
            report.orphan_tables.insert(table.clone());
        }
    }
    report
}
