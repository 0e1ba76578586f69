//! Storage and pipeline invariants over generated inputs.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use async_trait::async_trait;
use cimgw::clock::ManualClock;
use cimgw::gateway::{datasheet_link, Gateway, Settings};
use cimgw::sim::{Scenario, SimNode};
use cimgw::source::{DataSource, ReadResponse, SourceError, WriteAck};
use cimgw::store::{decode, encode, BoundTag, Store};
use cimgw_core::cim::PrimitiveKind;
use cimgw_core::literal::parse_literal;
use cimgw_core::mapping::ManifestEntry;
use cimgw_core::schema::{map_primitive, ColumnKind};
use cimgw_core::topology::ElementInstance;
use cimgw_core::TopologyDocument;
use percent_encoding::percent_decode_str;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rusqlite::types::ValueRef;

/// Serves nothing but a fixed manifest.
struct Quiet(Vec<ManifestEntry>);

#[async_trait]
impl DataSource for Quiet {
    async fn topology(&self) -> Result<Vec<u8>, SourceError> {
        Err(SourceError::Unreachable("quiet".into()))
    }
    async fn manifest(&self) -> Result<Vec<ManifestEntry>, SourceError> {
        Ok(self.0.clone())
    }
    async fn read(&self, _: &[String]) -> Result<ReadResponse, SourceError> {
        Err(SourceError::Unreachable("quiet".into()))
    }
    async fn write(&self, _: &str, _: &str) -> Result<WriteAck, SourceError> {
        Ok(WriteAck::rejected("quiet"))
    }
}

fn literal(kind: PrimitiveKind) -> BoxedStrategy<String> {
    match kind {
        PrimitiveKind::Float => (-1e12f64..1e12).prop_map(|f| f.to_string()).boxed(),
        PrimitiveKind::Integer => any::<i64>().prop_map(|i| i.to_string()).boxed(),
        PrimitiveKind::Boolean => prop_oneof![Just("true"), Just("false"), Just("1"), Just("0")]
            .prop_map(String::from)
            .boxed(),
        PrimitiveKind::String => ".{0,12}".boxed(),
        PrimitiveKind::DateTime => (2000u32..2100, 1u32..13, 1u32..29, 0u32..24)
            .prop_map(|(y, m, d, h)| format!("{y}-{m:02}-{d:02}T{h:02}:30:00Z"))
            .boxed(),
    }
}

fn kind_and_literal() -> impl Strategy<Value = (PrimitiveKind, String)> {
    proptest::sample::select(PrimitiveKind::ALL.to_vec()).prop_flat_map(|k| (Just(k), literal(k)))
}

fn elements_by_class(doc: &TopologyDocument) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for el in doc.elements().values() {
        *counts.entry(el.class_name.clone()).or_insert(0) += 1;
    }
    counts
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn stored_values_keep_their_meaning((kind, lit) in kind_and_literal()) {
        let column = map_primitive(kind);
        let stored = encode(column, &lit).expect("conforming literal encodes");
        let back = decode(column, ValueRef::from(&stored)).unwrap();
        prop_assert_eq!(parse_literal(kind, &back).unwrap(), parse_literal(kind, &lit).unwrap());
    }

    #[test]
    fn latest_sample_wins(writes in proptest::collection::vec((0u64..50, -1000i64..1000), 1..20)) {
        let doc = TopologyDocument::from_parts(
            vec![ElementInstance::new(cimgw_core::Mrid::new("X").unwrap(), "C")],
            vec![],
        )
        .unwrap();
        let lib = cimgw_core::CimLibrary::new(
            "v",
            vec![cimgw_core::cim::CimClass::new("C").attr("n", "Integer")],
            vec![],
        )
        .unwrap();
        let mut store = Store::open_in_memory().unwrap();
        let tag = BoundTag {
            tag: "t".into(),
            mrid: "X".into(),
            attribute: "n".into(),
            class: "C".into(),
            kind: ColumnKind::Integer,
        };
        store.transaction(|tx| {
            let diff = cimgw_core::schema::plan_schema(&doc, &lib, &tx.catalog()?).unwrap();
            let catalog = tx.apply_schema(&diff)?;
            tx.seed(&doc, &catalog, 0)?;
            for (ts, v) in &writes {
                tx.write_sample(&tag, &v.to_string(), *ts)?;
            }
            Ok::<_, cimgw::store::StoreError>(())
        }).unwrap();

        // Oracle: the last write among those with the greatest timestamp.
        let top = writes.iter().map(|(t, _)| *t).max().unwrap();
        let expected = writes.iter().rev().find(|(t, _)| *t == top).unwrap().1;
        let latest = store.view().latest("X").unwrap();
        prop_assert_eq!(latest.values["n"].value.clone(), Some(expected.to_string()));
        prop_assert_eq!(latest.values["n"].timestamp_ms, top);
    }

    #[test]
    fn datasheet_links_decode_to_the_mrid(mrid in "\\PC{1,20}") {
        let link = datasheet_link(&mrid);
        let encoded = link.strip_prefix("/api/devices/").unwrap();
        prop_assert!(!encoded.contains('/'));
        prop_assert_eq!(percent_decode_str(encoded).decode_utf8().unwrap(), mrid.as_str());
    }

    #[test]
    fn ingest_tracks_the_document(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lib = common::random_library(&mut rng, 12, 4, "v1");
        let first = common::random_topology(&lib, &mut rng, 15);
        let second = common::random_topology(&lib, &mut rng, 15);
        let gw = Gateway::new(
            lib,
            Store::open_in_memory().unwrap(),
            Arc::new(Quiet(Vec::new())),
            Arc::new(ManualClock::new(0)),
            Settings::default(),
        )
        .unwrap();
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async {
            for doc in [&first, &first, &second] {
                gw.ingest(doc.to_canonical_xml().as_bytes()).await.unwrap();
            }
        });
        let again = rt.block_on(gw.ingest(second.to_canonical_xml().as_bytes())).unwrap();
        prop_assert!(again.schema_actions.is_empty());
        prop_assert_eq!(gw.generation(), 4);

        // Every current element has exactly one row; nothing else does.
        let counts = elements_by_class(&second);
        let state = gw.snapshot();
        for table in state.catalog.tables.keys() {
            let rows = gw.with_store(|s| s.view().row_count(table)).unwrap();
            prop_assert_eq!(rows, counts.get(table).copied().unwrap_or(0), "{}", table);
        }
        prop_assert_eq!(gw.with_store(|s| s.catalog()).unwrap(), state.catalog.clone());
        let listed: BTreeSet<&str> = state.ui_config.devices.iter().map(|d| d.mrid.as_str()).collect();
        let elements: BTreeSet<&str> = second.elements().keys().map(|m| m.as_str()).collect();
        prop_assert_eq!(listed, elements);
        prop_assert_eq!(state.ui_config.devices.len(), second.elements().len());
    }

    #[test]
    fn simulator_is_deterministic(seed in any::<u64>(), steps in proptest::collection::vec(0u64..1500, 1..12)) {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
        let text = std::fs::read_to_string(dir.join("scenario-grow.toml")).unwrap();
        let run = || {
            let clock = Arc::new(ManualClock::new(0));
            let sc = Scenario::from_toml(&text, &dir).unwrap().with_seed(seed);
            let node = SimNode::new(sc, clock.clone());
            let tags = vec!["plc.brk1.state".to_string(), "plc.load1.p".to_string()];
            let mut trace = Vec::new();
            for step in &steps {
                clock.advance(*step);
                let doc = node.topology_document().unwrap().to_canonical_xml();
                let read = serde_json::to_string(&node.read_tags(&tags).unwrap()).unwrap();
                trace.push((doc, read));
            }
            trace
        };
        prop_assert_eq!(run(), run());
    }
}
