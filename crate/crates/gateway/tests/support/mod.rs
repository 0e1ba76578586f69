//! Fixture loading and wiring shared by the gateway integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cimgw::clock::{Clock, SystemClock};
use cimgw::gateway::{Gateway, Settings, WritableAttr};
use cimgw::runtime::{RunningGateway, ServeOptions};
use cimgw::server::ServerHandle;
use cimgw::sim::{self, Scenario, SimNode};
use cimgw::source::DataSource;
use cimgw::store::Store;
use cimgw_core::cim::{load_library, CimLibrary};
use cimgw_core::mapping::RefreshPolicy;
use rusqlite::types::ValueRef;
use rusqlite::Connection;

pub const TOKEN: &str = "test-token";

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn fixture_bytes(name: &str) -> Vec<u8> {
    std::fs::read(fixture(name)).unwrap()
}

pub fn lib_a() -> CimLibrary {
    load_library(&fixture_bytes("lib-a.xmi")).unwrap()
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&fixture(name)).unwrap()
}

pub fn sim_node(name: &str, clock: Arc<dyn Clock>) -> Arc<SimNode> {
    Arc::new(SimNode::new(scenario(name), clock))
}

pub fn settings() -> Settings {
    Settings {
        tokens: vec![TOKEN.to_string()],
        writable: vec![WritableAttr::parse("Switch.normalOpen").unwrap()],
        ..Settings::default()
    }
}

pub fn gateway_with(lib: CimLibrary, store: Store, source: Arc<dyn DataSource>) -> Arc<Gateway> {
    Arc::new(Gateway::new(lib, store, source, Arc::new(SystemClock), settings()).unwrap())
}

pub fn gateway(source: Arc<dyn DataSource>) -> Arc<Gateway> {
    gateway_with(lib_a(), Store::open_in_memory().unwrap(), source)
}

pub fn fast_policy() -> RefreshPolicy {
    RefreshPolicy::from_millis(100, 300, 20).unwrap()
}

pub fn serve_options(policy: RefreshPolicy, topology_poll: Option<Duration>) -> ServeOptions {
    ServeOptions {
        policy,
        topology_poll,
        push: true,
    }
}

pub async fn start_gateway(gw: Arc<Gateway>, opts: ServeOptions) -> RunningGateway {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    RunningGateway::start(gw, listener, opts)
}

pub async fn start_sim(node: Arc<SimNode>) -> ServerHandle {
    ServerHandle::bind(sim::server::router(node), "127.0.0.1:0")
        .await
        .unwrap()
}

/// Polls `check` every 10 ms until it holds or `limit` passes.
pub async fn wait_for(limit: Duration, mut check: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + limit;
    loop {
        if check() {
            return true;
        }
        if Instant::now() >= deadline {
            return false;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

/// Every user table and its rows, read through a separate connection.
pub type DbImage = BTreeMap<String, (Vec<String>, Vec<Vec<String>>)>;

pub fn db_image(path: &Path) -> DbImage {
    let conn = Connection::open(path).unwrap();
    let mut tables: Vec<String> = conn
        .prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%'")
        .unwrap()
        .query_map([], |r| r.get(0))
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
    tables.sort();
    let mut image = DbImage::new();
    for t in tables {
        let mut stmt = conn.prepare(&format!("SELECT * FROM \"{t}\"")).unwrap();
        let columns: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
        let width = columns.len();
        let mut rows: Vec<Vec<String>> = stmt
            .query_map([], |r| {
                (0..width)
                    .map(|i| {
                        Ok(match r.get_ref(i)? {
                            ValueRef::Null => "NULL".to_string(),
                            ValueRef::Integer(v) => v.to_string(),
                            ValueRef::Real(v) => v.to_string(),
                            ValueRef::Text(v) | ValueRef::Blob(v) => {
                                String::from_utf8_lossy(v).into_owned()
                            }
                        })
                    })
                    .collect()
            })
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        rows.sort();
        image.insert(t, (columns, rows));
    }
    image
}

/// TOPO-1 plus a second breaker and a plain switch, with the load's fixed
/// power changed.
pub fn grown_topology() -> Vec<u8> {
    let topo = String::from_utf8(fixture_bytes("topo-1.rdf")).unwrap();
    topo.replace(
        "</rdf:RDF>",
        r##"  <cim:Breaker rdf:ID="BRK-002">
    <cim:IdentifiedObject.name>Tie breaker</cim:IdentifiedObject.name>
    <cim:Switch.normalOpen>true</cim:Switch.normalOpen>
  </cim:Breaker>
  <cim:Switch rdf:ID="SW-001"/>
</rdf:RDF>"##,
    )
    .replace(">120000<", ">130000<")
    .into_bytes()
}
