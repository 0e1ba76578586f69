//! SQLite-backed storage: one table per CIM class keyed by `mrid`, plus
//! three bookkeeping tables (catalog, row registry, live values).
//!
//! Every mutation goes through a [`StoreTx`], so a failed pipeline run or
//! sync tick leaves nothing behind.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use cimgw_core::literal::{parse_literal, TypedValue};
use cimgw_core::mapping::Quality;
use cimgw_core::schema::{
    ColumnKind, ColumnSpec, SchemaDiff, SchemaError, StorageCatalog, TableSpec, KEY_COLUMN,
};
use cimgw_core::topology::TopologyDocument;
use cimgw_core::PrimitiveKind;
use rusqlite::types::{Value, ValueRef};
use rusqlite::{params, params_from_iter, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};

const CATALOG_TABLE: &str = "_cimgw_catalog";
const ROWS_TABLE: &str = "_cimgw_rows";
const LIVE_TABLE: &str = "_cimgw_live";
/// Per-row freshness column added to every class table, outside the catalog.
pub const SYNCED_AT_COLUMN: &str = "_synced_at";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("stored catalog is unreadable: {0}")]
    Catalog(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("unknown mRID `{0}`")]
    UnknownMrid(String),
    #[error("`{literal}` is not a valid {kind:?} value")]
    Coercion { kind: ColumnKind, literal: String },
}

/// Where a bound tag's samples land.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundTag {
    pub tag: String,
    pub mrid: String,
    pub attribute: String,
    pub class: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveValue {
    pub value: Option<String>,
    pub timestamp_ms: u64,
    pub quality: Quality,
}

/// The latest-value view of one element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatestValues {
    pub mrid: String,
    pub class: String,
    pub values: BTreeMap<String, LiveValue>,
}

fn quote(ident: &str) -> String {
    format!("\"{}\"", ident.replace('"', "\"\""))
}

fn sql_type(kind: ColumnKind) -> &'static str {
    match kind {
        ColumnKind::Real => "REAL",
        ColumnKind::Integer | ColumnKind::Boolean => "INTEGER",
        ColumnKind::Text | ColumnKind::Timestamp | ColumnKind::Reference => "TEXT",
    }
}

fn primitive(kind: ColumnKind) -> Option<PrimitiveKind> {
    match kind {
        ColumnKind::Real => Some(PrimitiveKind::Float),
        ColumnKind::Integer => Some(PrimitiveKind::Integer),
        ColumnKind::Boolean => Some(PrimitiveKind::Boolean),
        ColumnKind::Timestamp => Some(PrimitiveKind::DateTime),
        ColumnKind::Text | ColumnKind::Reference => None,
    }
}

/// Literal to its stored form. `None` when it does not conform.
pub fn encode(kind: ColumnKind, literal: &str) -> Option<Value> {
    let Some(p) = primitive(kind) else {
        return Some(Value::Text(literal.to_string()));
    };
    Some(match parse_literal(p, literal).ok()? {
        TypedValue::Float(f) => Value::Real(f),
        TypedValue::Integer(i) => Value::Integer(i),
        TypedValue::Boolean(b) => Value::Integer(b as i64),
        TypedValue::Text(s) | TypedValue::DateTime(s) => Value::Text(s),
    })
}

/// Stored form back to a literal.
pub fn decode(kind: ColumnKind, value: ValueRef<'_>) -> Option<String> {
    match (kind, value) {
        (_, ValueRef::Null) => None,
        (ColumnKind::Boolean, ValueRef::Integer(i)) => Some((i != 0).to_string()),
        (_, ValueRef::Integer(i)) => Some(i.to_string()),
        (_, ValueRef::Real(f)) => Some(f.to_string()),
        (_, ValueRef::Text(t)) | (_, ValueRef::Blob(t)) => {
            Some(String::from_utf8_lossy(t).into_owned())
        }
    }
}

fn normalized(kind: ColumnKind, literal: &str) -> Option<(Value, String)> {
    let v = encode(kind, literal)?;
    let text = decode(kind, ValueRef::from(&v))?;
    Some((v, text))
}

pub struct Store {
    conn: Connection,
}

impl Store {
    /// `":memory:"` opens a private in-memory database.
    pub fn open(path: &str) -> Result<Store, StoreError> {
        let conn = if path == ":memory:" {
            Connection::open_in_memory()?
        } else {
            Connection::open(Path::new(path))?
        };
        Store::init(conn)
    }

    pub fn open_in_memory() -> Result<Store, StoreError> {
        Store::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Store, StoreError> {
        conn.execute_batch(&format!(
            "CREATE TABLE IF NOT EXISTS {CATALOG_TABLE} (id INTEGER PRIMARY KEY CHECK (id = 1), body TEXT NOT NULL);
             CREATE TABLE IF NOT EXISTS {ROWS_TABLE} (mrid TEXT PRIMARY KEY NOT NULL, class TEXT NOT NULL, ingested_ms INTEGER NOT NULL);
             CREATE TABLE IF NOT EXISTS {LIVE_TABLE} (
                 mrid TEXT NOT NULL, attribute TEXT NOT NULL, value TEXT,
                 ts_ms INTEGER NOT NULL, quality TEXT NOT NULL,
                 PRIMARY KEY (mrid, attribute));"
        ))?;
        Ok(Store { conn })
    }

    /// Runs `f` in one transaction; any error rolls everything back.
    pub fn transaction<T, E>(
        &mut self,
        f: impl FnOnce(&StoreTx<'_>) -> Result<T, E>,
    ) -> Result<T, E>
    where
        E: From<StoreError>,
    {
        let tx = self.conn.transaction().map_err(StoreError::from)?;
        let out = f(&StoreTx { conn: &tx })?;
        tx.commit().map_err(StoreError::from)?;
        Ok(out)
    }

    /// Read-only access outside a transaction.
    pub fn view(&self) -> StoreTx<'_> {
        StoreTx { conn: &self.conn }
    }

    pub fn catalog(&self) -> Result<StorageCatalog, StoreError> {
        self.view().catalog()
    }
}

pub struct StoreTx<'a> {
    conn: &'a Connection,
}

impl StoreTx<'_> {
    pub fn catalog(&self) -> Result<StorageCatalog, StoreError> {
        let body: Option<String> = self
            .conn
            .query_row(
                &format!("SELECT body FROM {CATALOG_TABLE} WHERE id = 1"),
                [],
                |r| r.get(0),
            )
            .optional()?;
        match body {
            None => Ok(StorageCatalog::default()),
            Some(b) => serde_json::from_str(&b).map_err(|e| StoreError::Catalog(e.to_string())),
        }
    }

    fn save_catalog(&self, catalog: &StorageCatalog) -> Result<(), StoreError> {
        let body =
            serde_json::to_string(catalog).map_err(|e| StoreError::Catalog(e.to_string()))?;
        self.conn.execute(
            &format!("INSERT INTO {CATALOG_TABLE} (id, body) VALUES (1, ?1) ON CONFLICT(id) DO UPDATE SET body = excluded.body"),
            params![body],
        )?;
        Ok(())
    }

    /// Executes `diff` and records the resulting catalog.
    pub fn apply_schema(&self, diff: &SchemaDiff) -> Result<StorageCatalog, StoreError> {
        let current = self.catalog()?;
        let next = current.apply(diff)?;
        if diff.requires_reinit {
            for table in current.tables.keys() {
                self.conn
                    .execute(&format!("DROP TABLE IF EXISTS {}", quote(table)), [])?;
            }
            self.conn
                .execute(&format!("DELETE FROM {ROWS_TABLE}"), [])?;
            self.conn
                .execute(&format!("DELETE FROM {LIVE_TABLE}"), [])?;
        }
        for table in &diff.drop_tables {
            self.conn
                .execute(&format!("DROP TABLE {}", quote(table)), [])?;
            self.forget_class(table)?;
        }
        for change in &diff.drop_columns {
            self.conn.execute(
                &format!(
                    "ALTER TABLE {} DROP COLUMN {}",
                    quote(&change.table),
                    quote(&change.column.name)
                ),
                [],
            )?;
            self.conn.execute(
                &format!(
                    "DELETE FROM {LIVE_TABLE} WHERE attribute = ?1 AND mrid IN (SELECT mrid FROM {ROWS_TABLE} WHERE class = ?2)"
                ),
                params![change.column.name, change.table],
            )?;
        }
        for spec in &diff.create_tables {
            self.create_table(spec)?;
        }
        for change in &diff.add_columns {
            self.conn.execute(
                &format!(
                    "ALTER TABLE {} ADD COLUMN {}",
                    quote(&change.table),
                    column_def(&change.column)
                ),
                [],
            )?;
        }
        self.save_catalog(&next)?;
        Ok(next)
    }

    fn create_table(&self, spec: &TableSpec) -> Result<(), StoreError> {
        let mut cols: Vec<String> = spec
            .columns
            .iter()
            .map(|c| {
                if c.name == KEY_COLUMN {
                    format!("{} TEXT PRIMARY KEY NOT NULL", quote(KEY_COLUMN))
                } else {
                    column_def(c)
                }
            })
            .collect();
        cols.push(format!("{} INTEGER", quote(SYNCED_AT_COLUMN)));
        self.conn.execute(
            &format!("CREATE TABLE {} ({})", quote(&spec.name), cols.join(", ")),
            [],
        )?;
        Ok(())
    }

    fn forget_class(&self, class: &str) -> Result<(), StoreError> {
        self.conn.execute(
            &format!("DELETE FROM {LIVE_TABLE} WHERE mrid IN (SELECT mrid FROM {ROWS_TABLE} WHERE class = ?1)"),
            params![class],
        )?;
        self.conn.execute(
            &format!("DELETE FROM {ROWS_TABLE} WHERE class = ?1"),
            params![class],
        )?;
        Ok(())
    }

    fn forget_row(
        &self,
        mrid: &str,
        class: &str,
        catalog: &StorageCatalog,
    ) -> Result<(), StoreError> {
        if catalog.tables.contains_key(class) {
            self.conn.execute(
                &format!(
                    "DELETE FROM {} WHERE {} = ?1",
                    quote(class),
                    quote(KEY_COLUMN)
                ),
                params![mrid],
            )?;
        }
        self.conn.execute(
            &format!("DELETE FROM {LIVE_TABLE} WHERE mrid = ?1"),
            params![mrid],
        )?;
        self.conn.execute(
            &format!("DELETE FROM {ROWS_TABLE} WHERE mrid = ?1"),
            params![mrid],
        )?;
        Ok(())
    }

    fn registered(&self) -> Result<BTreeMap<String, String>, StoreError> {
        let mut stmt = self
            .conn
            .prepare(&format!("SELECT mrid, class FROM {ROWS_TABLE}"))?;
        let rows = stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// Writes the document's static values into the class tables and
    /// removes rows of elements the document no longer has. Attributes
    /// already fed by the sync loop keep their live value.
    pub fn seed(
        &self,
        doc: &TopologyDocument,
        catalog: &StorageCatalog,
        now_ms: u64,
    ) -> Result<(), StoreError> {
        let registered = self.registered()?;
        for (mrid, class) in &registered {
            let keep = doc.element(mrid).is_some_and(|el| &el.class_name == class);
            if !keep {
                self.forget_row(mrid, class, catalog)?;
            }
        }

        for el in doc.elements().values() {
            let Some(table) = catalog.tables.get(&el.class_name) else {
                continue;
            };
            let mrid = el.mrid.as_str();
            let live: BTreeSet<String> = {
                let mut stmt = self.conn.prepare(&format!(
                    "SELECT attribute FROM {LIVE_TABLE} WHERE mrid = ?1 AND value IS NOT NULL"
                ))?;
                let rows = stmt.query_map(params![mrid], |r| r.get(0))?;
                rows.collect::<Result<_, _>>()?
            };
            let mut names = vec![quote(KEY_COLUMN)];
            let mut values = vec![Value::Text(mrid.to_string())];
            let mut updates = Vec::new();
            for col in table.columns.iter().filter(|c| c.name != KEY_COLUMN) {
                let value = if col.kind == ColumnKind::Reference {
                    let targets: Vec<&str> = doc
                        .edges_from(mrid)
                        .filter(|e| e.role == col.name)
                        .map(|e| e.to.as_str())
                        .collect();
                    match targets.as_slice() {
                        [] => Value::Null,
                        [one] => Value::Text(one.to_string()),
                        many => Value::Text(serde_json::to_string(many).unwrap_or_default()),
                    }
                } else {
                    el.attribute_values
                        .get(&col.name)
                        .and_then(|lit| encode(col.kind, lit))
                        .unwrap_or(Value::Null)
                };
                names.push(quote(&col.name));
                values.push(value);
                if !live.contains(&col.name) {
                    updates.push(format!("{0} = excluded.{0}", quote(&col.name)));
                }
            }
            let placeholders = vec!["?"; values.len()].join(", ");
            let conflict = if updates.is_empty() {
                "DO NOTHING".to_string()
            } else {
                format!("DO UPDATE SET {}", updates.join(", "))
            };
            self.conn.execute(
                &format!(
                    "INSERT INTO {} ({}) VALUES ({placeholders}) ON CONFLICT({}) {conflict}",
                    quote(&el.class_name),
                    names.join(", "),
                    quote(KEY_COLUMN)
                ),
                params_from_iter(values),
            )?;
            self.conn.execute(
                &format!(
                    "INSERT INTO {ROWS_TABLE} (mrid, class, ingested_ms) VALUES (?1, ?2, ?3)
                     ON CONFLICT(mrid) DO UPDATE SET class = excluded.class, ingested_ms = excluded.ingested_ms"
                ),
                params![mrid, el.class_name, now_ms as i64],
            )?;
        }
        Ok(())
    }

    /// Stores a Good sample. Returns `Ok(false)` when it is older than what is
    /// stored or the row is gone; a non-conforming literal is a
    /// [`StoreError::Coercion`].
    pub fn write_sample(
        &self,
        tag: &BoundTag,
        literal: &str,
        timestamp_ms: u64,
    ) -> Result<bool, StoreError> {
        let Some((value, text)) = normalized(tag.kind, literal) else {
            return Err(StoreError::Coercion {
                kind: tag.kind,
                literal: literal.to_string(),
            });
        };
        let stored: Option<i64> = self
            .conn
            .query_row(
                &format!("SELECT ts_ms FROM {LIVE_TABLE} WHERE mrid = ?1 AND attribute = ?2"),
                params![tag.mrid, tag.attribute],
                |r| r.get(0),
            )
            .optional()?;
        if stored.is_some_and(|s| (timestamp_ms as i64) < s) {
            return Ok(false);
        }
        let changed = self.conn.execute(
            &format!(
                "UPDATE {0} SET {1} = ?1, {2} = MAX(COALESCE({2}, 0), ?2) WHERE {3} = ?3",
                quote(&tag.class),
                quote(&tag.attribute),
                quote(SYNCED_AT_COLUMN),
                quote(KEY_COLUMN)
            ),
            params![value, timestamp_ms as i64, tag.mrid],
        )?;
        if changed == 0 {
            return Ok(false);
        }
        self.conn.execute(
            &format!(
                "INSERT INTO {LIVE_TABLE} (mrid, attribute, value, ts_ms, quality) VALUES (?1, ?2, ?3, ?4, 'Good')
                 ON CONFLICT(mrid, attribute) DO UPDATE SET value = excluded.value, ts_ms = excluded.ts_ms, quality = 'Good'"
            ),
            params![tag.mrid, tag.attribute, text, timestamp_ms as i64],
        )?;
        Ok(true)
    }

    /// Marks a bound attribute's quality without touching its value.
    pub fn set_quality(&self, tag: &BoundTag, quality: Quality) -> Result<(), StoreError> {
        self.conn.execute(
            &format!(
                "INSERT INTO {LIVE_TABLE} (mrid, attribute, value, ts_ms, quality) VALUES (?1, ?2, NULL, 0, ?3)
                 ON CONFLICT(mrid, attribute) DO UPDATE SET quality = excluded.quality"
            ),
            params![tag.mrid, tag.attribute, quality.as_str()],
        )?;
        Ok(())
    }

    /// Decoded row of a class table, including the freshness column.
    pub fn row(
        &self,
        table: &TableSpec,
        mrid: &str,
    ) -> Result<Option<BTreeMap<String, Option<String>>>, StoreError> {
        let cols: Vec<String> = table
            .columns
            .iter()
            .map(|c| quote(&c.name))
            .chain([quote(SYNCED_AT_COLUMN)])
            .collect();
        self.conn
            .query_row(
                &format!(
                    "SELECT {} FROM {} WHERE {} = ?1",
                    cols.join(", "),
                    quote(&table.name),
                    quote(KEY_COLUMN)
                ),
                params![mrid],
                |r| {
                    let mut out = BTreeMap::new();
                    for (i, c) in table.columns.iter().enumerate() {
                        out.insert(c.name.clone(), decode(c.kind, r.get_ref(i)?));
                    }
                    out.insert(
                        SYNCED_AT_COLUMN.to_string(),
                        decode(ColumnKind::Integer, r.get_ref(table.columns.len())?),
                    );
                    Ok(out)
                },
            )
            .optional()
            .map_err(StoreError::from)
    }

    /// Most recent value per attribute. Attributes fed by the sync loop
    /// report their sample timestamp and quality; the rest report the
    /// topology literal, stamped with ingest time, at Good.
    pub fn latest(&self, mrid: &str) -> Result<LatestValues, StoreError> {
        let (class, ingested): (String, i64) = self
            .conn
            .query_row(
                &format!("SELECT class, ingested_ms FROM {ROWS_TABLE} WHERE mrid = ?1"),
                params![mrid],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )
            .optional()?
            .ok_or_else(|| StoreError::UnknownMrid(mrid.to_string()))?;
        let catalog = self.catalog()?;
        let table = catalog
            .tables
            .get(&class)
            .ok_or_else(|| StoreError::UnknownMrid(mrid.to_string()))?;
        let row = self
            .row(table, mrid)?
            .ok_or_else(|| StoreError::UnknownMrid(mrid.to_string()))?;

        let mut live: BTreeMap<String, (Option<String>, i64, String)> = BTreeMap::new();
        {
            let mut stmt = self.conn.prepare(&format!(
                "SELECT attribute, value, ts_ms, quality FROM {LIVE_TABLE} WHERE mrid = ?1"
            ))?;
            let rows = stmt.query_map(params![mrid], |r| {
                Ok((r.get(0)?, (r.get(1)?, r.get(2)?, r.get(3)?)))
            })?;
            for row in rows {
                let (attr, v) = row?;
                live.insert(attr, v);
            }
        }

        let mut values = BTreeMap::new();
        for col in table
            .columns
            .iter()
            .filter(|c| c.name != KEY_COLUMN && c.kind != ColumnKind::Reference)
        {
            let stored = row.get(&col.name).cloned().flatten();
            let entry = match live.get(&col.name) {
                Some((value, ts, quality)) => LiveValue {
                    value: value.clone().or(stored),
                    timestamp_ms: if value.is_some() {
                        *ts as u64
                    } else {
                        ingested as u64
                    },
                    quality: Quality::parse(quality).unwrap_or(Quality::Bad),
                },
                None => LiveValue {
                    value: stored,
                    timestamp_ms: ingested as u64,
                    quality: Quality::Good,
                },
            };
            values.insert(col.name.clone(), entry);
        }
        Ok(LatestValues {
            mrid: mrid.to_string(),
            class,
            values,
        })
    }

    /// Physical columns of a table as SQLite reports them: (name, declared type).
    pub fn physical_columns(&self, table: &str) -> Result<Vec<(String, String)>, StoreError> {
        let mut stmt = self
            .conn
            .prepare(&format!("PRAGMA table_info({})", quote(table)))?;
        let rows = stmt.query_map([], |r| Ok((r.get(1)?, r.get(2)?)))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// Class tables physically present, bookkeeping tables excluded.
    pub fn physical_tables(&self) -> Result<BTreeSet<String>, StoreError> {
        let mut stmt = self
            .conn
            .prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE '\\_cimgw\\_%' ESCAPE '\\'")?;
        let rows = stmt.query_map([], |r| r.get(0))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    pub fn row_count(&self, table: &str) -> Result<u64, StoreError> {
        let n: i64 =
            self.conn
                .query_row(&format!("SELECT COUNT(*) FROM {}", quote(table)), [], |r| {
                    r.get(0)
                })?;
        Ok(n as u64)
    }
}

fn column_def(c: &ColumnSpec) -> String {
    let null = if c.nullable { "" } else { " NOT NULL" };
    format!("{} {}{null}", quote(&c.name), sql_type(c.kind))
}
