//! Relational schema derived from a topology document and a class library.
//!
//! One table per CIM class present in the topology. The first column is
//! always the `mrid` key (the CIM `mRID` attribute is folded into it), then
//! the class's resolved attributes, then one reference column per role the
//! document actually uses for that class.
//!
//! Planning is pure: [`plan_schema`] compares the desired tables against a
//! [`StorageCatalog`] and emits a [`SchemaDiff`]; [`StorageCatalog::apply`]
//! is the catalog-side effect of executing one.

mod drift;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cim::{CimLibrary, PrimitiveKind, ResolveError};
use crate::topology::{TopologyDocument, MRID_ATTRIBUTE};

pub use drift::{detect_drift, DriftReport, RetypedColumn, TableColumn};

pub const KEY_COLUMN: &str = "mrid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ColumnKind {
    Text,
    Real,
    Integer,
    Boolean,
    Timestamp,
    Reference,
}

pub fn map_primitive(kind: PrimitiveKind) -> ColumnKind {
    match kind {
        PrimitiveKind::Float => ColumnKind::Real,
        PrimitiveKind::Integer => ColumnKind::Integer,
        PrimitiveKind::Boolean => ColumnKind::Boolean,
        PrimitiveKind::String => ColumnKind::Text,
        PrimitiveKind::DateTime => ColumnKind::Timestamp,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub nullable: bool,
}

impl ColumnSpec {
    pub fn key() -> Self {
        ColumnSpec {
            name: KEY_COLUMN.to_string(),
            kind: ColumnKind::Text,
            nullable: false,
        }
    }

    pub fn nullable(name: impl Into<String>, kind: ColumnKind) -> Self {
        ColumnSpec {
            name: name.into(),
            kind,
            nullable: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
}

impl TableSpec {
    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> BTreeSet<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }
}

/// What storage currently holds, and which library produced it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageCatalog {
    pub tables: BTreeMap<String, TableSpec>,
    /// Empty for a store that was never initialized.
    pub library_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnChange {
    pub table: String,
    pub column: ColumnSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDiff {
    /// Library version the storage is stamped with once the diff is applied.
    pub library_version: String,
    pub create_tables: Vec<TableSpec>,
    pub add_columns: Vec<ColumnChange>,
    pub drop_columns: Vec<ColumnChange>,
    pub drop_tables: Vec<String>,
    /// Library version changed: every managed table is dropped and rebuilt.
    pub requires_reinit: bool,
}

impl SchemaDiff {
    /// No structural action and no reinit.
    pub fn is_empty(&self) -> bool {
        !self.requires_reinit && self.has_no_actions()
    }

    fn has_no_actions(&self) -> bool {
        self.create_tables.is_empty()
            && self.add_columns.is_empty()
            && self.drop_columns.is_empty()
            && self.drop_tables.is_empty()
    }

    pub fn reinit(library_version: impl Into<String>) -> Self {
        SchemaDiff {
            library_version: library_version.into(),
            requires_reinit: true,
            ..SchemaDiff::default()
        }
    }

    /// Reinit excludes every incremental action.
    pub fn is_well_formed(&self) -> bool {
        !self.requires_reinit || self.has_no_actions()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// Schedule destructive changes (drop column/table). Off by default:
    /// shrinkage is reported by [`detect_drift`] instead.
    pub allow_drops: bool,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("class `{0}` is not in the library")]
    UnknownClass(String),
    #[error("attribute `{class}.{attribute}` has unresolvable type `{declared_type}`")]
    UnresolvedType {
        class: String,
        attribute: String,
        declared_type: String,
    },
    #[error("table `{table}` would have two columns named `{column}`")]
    ColumnConflict { table: String, column: String },
    #[error("diff is not applicable: {0}")]
    NotApplicable(String),
}

impl StorageCatalog {
    pub fn new(library_version: impl Into<String>) -> Self {
        StorageCatalog {
            tables: BTreeMap::new(),
            library_version: library_version.into(),
        }
    }

    /// The catalog after `diff` has been executed against the storage it describes.
    pub fn apply(&self, diff: &SchemaDiff) -> Result<StorageCatalog, SchemaError> {
        if !diff.is_well_formed() {
            return Err(SchemaError::NotApplicable(
                "reinit combined with incremental actions".into(),
            ));
        }
        if diff.requires_reinit {
            return Ok(StorageCatalog::new(diff.library_version.clone()));
        }
        let mut next = self.clone();
        next.library_version = diff.library_version.clone();
        for table in &diff.drop_tables {
            next.tables.remove(table).ok_or_else(|| {
                SchemaError::NotApplicable(format!("drop of missing table `{table}`"))
            })?;
        }
        for change in &diff.drop_columns {
            if change.column.name == KEY_COLUMN {
                return Err(SchemaError::NotApplicable(
                    "the key column cannot be dropped".into(),
                ));
            }
            let table = next.tables.get_mut(&change.table).ok_or_else(|| {
                SchemaError::NotApplicable(format!("no table `{}`", change.table))
            })?;
            let before = table.columns.len();
            table.columns.retain(|c| c.name != change.column.name);
            if table.columns.len() == before {
                return Err(SchemaError::NotApplicable(format!(
                    "drop of missing column `{}.{}`",
                    change.table, change.column.name
                )));
            }
        }
        for spec in &diff.create_tables {
            if next.tables.contains_key(&spec.name) {
                return Err(SchemaError::NotApplicable(format!(
                    "table `{}` already exists",
                    spec.name
                )));
            }
            if spec.columns.first().map(|c| c.name.as_str()) != Some(KEY_COLUMN) {
                return Err(SchemaError::NotApplicable(format!(
                    "table `{}` lacks the key column",
                    spec.name
                )));
            }
            next.tables.insert(spec.name.clone(), spec.clone());
        }
        for change in &diff.add_columns {
            let table = next.tables.get_mut(&change.table).ok_or_else(|| {
                SchemaError::NotApplicable(format!("no table `{}`", change.table))
            })?;
            if table.column(&change.column.name).is_some() {
                return Err(SchemaError::ColumnConflict {
                    table: change.table.clone(),
                    column: change.column.name.clone(),
                });
            }
            table.columns.push(change.column.clone());
        }
        Ok(next)
    }
}

/// The table a class should have given the document's use of it.
pub fn desired_table(
    doc: &TopologyDocument,
    lib: &CimLibrary,
    class: &str,
) -> Result<TableSpec, SchemaError> {
    let attrs = lib.resolve_attributes(class).map_err(|e| match e {
        ResolveError::UnknownClass(c) => SchemaError::UnknownClass(c),
        ResolveError::UnknownType { .. } => unreachable!("resolve_attributes does not type"),
    })?;
    let mut columns = vec![ColumnSpec::key()];
    for attr in attrs.iter().filter(|a| a.name != MRID_ATTRIBUTE) {
        let kind = lib
            .resolve_type(attr)
            .map_err(|_| SchemaError::UnresolvedType {
                class: class.to_string(),
                attribute: attr.name.clone(),
                declared_type: attr.declared_type.clone(),
            })?;
        columns.push(ColumnSpec::nullable(attr.name.clone(), map_primitive(kind)));
    }
    let roles: BTreeSet<&str> = doc
        .elements()
        .values()
        .filter(|el| el.class_name == class)
        .flat_map(|el| doc.edges_from(el.mrid.as_str()).map(|e| e.role.as_str()))
        .collect();
    for role in roles {
        if columns.iter().any(|c| c.name == role) {
            return Err(SchemaError::ColumnConflict {
                table: class.to_string(),
                column: role.to_string(),
            });
        }
        columns.push(ColumnSpec::nullable(role, ColumnKind::Reference));
    }
    Ok(TableSpec {
        name: class.to_string(),
        columns,
    })
}

/// Classes used by the document, in name order.
pub fn document_classes(doc: &TopologyDocument) -> BTreeSet<&str> {
    doc.elements()
        .values()
        .map(|el| el.class_name.as_str())
        .collect()
}

pub fn desired_tables(
    doc: &TopologyDocument,
    lib: &CimLibrary,
) -> Result<BTreeMap<String, TableSpec>, SchemaError> {
    document_classes(doc)
        .into_iter()
        .map(|class| desired_table(doc, lib, class).map(|t| (class.to_string(), t)))
        .collect()
}

pub fn plan_schema(
    doc: &TopologyDocument,
    lib: &CimLibrary,
    catalog: &StorageCatalog,
) -> Result<SchemaDiff, SchemaError> {
    plan_schema_with(doc, lib, catalog, PlanOptions::default())
}

pub fn plan_schema_with(
    doc: &TopologyDocument,
    lib: &CimLibrary,
    catalog: &StorageCatalog,
    opts: PlanOptions,
) -> Result<SchemaDiff, SchemaError> {
    if let Some(unknown) = document_classes(doc)
        .into_iter()
        .find(|c| !lib.contains_class(c))
    {
        return Err(SchemaError::UnknownClass(unknown.to_string()));
    }
    if catalog.library_version != lib.version() && !catalog.tables.is_empty() {
        return Ok(SchemaDiff::reinit(lib.version()));
    }

    let desired = desired_tables(doc, lib)?;
    let mut diff = SchemaDiff {
        library_version: lib.version().to_string(),
        ..SchemaDiff::default()
    };

    for (name, want) in &desired {
        let Some(have) = catalog.tables.get(name) else {
            diff.create_tables.push(want.clone());
            continue;
        };
        for col in &want.columns {
            match have.column(&col.name) {
                None => diff.add_columns.push(ColumnChange {
                    table: name.clone(),
                    column: col.clone(),
                }),
                Some(existing) if existing.kind != col.kind && opts.allow_drops => {
                    diff.drop_columns.push(ColumnChange {
                        table: name.clone(),
                        column: existing.clone(),
                    });
                    diff.add_columns.push(ColumnChange {
                        table: name.clone(),
                        column: col.clone(),
                    });
                }
                Some(_) => {}
            }
        }
        if opts.allow_drops {
            for col in &have.columns {
                if want.column(&col.name).is_none() {
                    diff.drop_columns.push(ColumnChange {
                        table: name.clone(),
                        column: col.clone(),
                    });
                }
            }
        }
    }
    if opts.allow_drops {
        diff.drop_tables = catalog
            .tables
            .keys()
            .filter(|t| !desired.contains_key(*t))
            .cloned()
            .collect();
    }
    Ok(diff)
}
