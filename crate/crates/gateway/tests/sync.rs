//! The refresh loop against a live simulator on the real clock.

mod support;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use cimgw::clock::{ManualClock, SystemClock};
use cimgw::events::GatewayEvent;
use cimgw::gateway::Gateway;
use cimgw::sim::{Scenario, SimNode};
use cimgw::store::Store;
use cimgw::sync::{run_sync, SyncExit};
use cimgw_core::mapping::Quality;
use support::*;
use tokio::sync::watch;
use tokio::task::JoinHandle;

fn quality(gw: &Gateway, mrid: &str, attribute: &str) -> Quality {
    gw.device_data(mrid).unwrap().latest.values[attribute].quality
}

async fn ingested(node: Arc<SimNode>) -> Arc<Gateway> {
    let gw = gateway(node);
    gw.ingest(&fixture_bytes("topo-1.rdf")).await.unwrap();
    gw
}

fn spawn_sync(gw: &Arc<Gateway>) -> (watch::Sender<bool>, JoinHandle<SyncExit>) {
    let (tx, rx) = watch::channel(false);
    (tx, tokio::spawn(run_sync(gw.clone(), fast_policy(), rx)))
}

#[tokio::test]
async fn ticks_follow_the_period() {
    let gw = ingested(sim_node("scenario-1.toml", Arc::new(SystemClock))).await;
    let (stop, handle) = spawn_sync(&gw);
    tokio::time::sleep(Duration::from_secs(1)).await;
    let ticks = gw.sync_ticks();
    stop.send(true).unwrap();
    assert_eq!(handle.await.unwrap(), SyncExit::Shutdown);
    assert!((8..=12).contains(&ticks), "{ticks} ticks in one second");
}

#[tokio::test]
async fn every_bound_attribute_is_refreshed() {
    let gw = ingested(sim_node("scenario-1.toml", Arc::new(SystemClock))).await;
    let seeded = gw.device_data("BRK-001").unwrap().latest.values["normalOpen"].timestamp_ms;
    let started = Instant::now();
    let (stop, _h) = spawn_sync(&gw);
    let fresh = wait_for(Duration::from_millis(200), || {
        gw.snapshot().bound.iter().all(|b| {
            let v = &gw.device_data(&b.mrid).unwrap().latest.values[&b.attribute];
            v.quality == Quality::Good && v.timestamp_ms > seeded
        })
    })
    .await;
    assert!(fresh, "not refreshed after {:?}", started.elapsed());
    let p = &gw.device_data("LOAD-001").unwrap().latest.values["pfixed"];
    let p: f64 = p.value.as_deref().unwrap().parse().unwrap();
    assert!((115000.0..=125000.0).contains(&p));
    stop.send(true).unwrap();
}

#[tokio::test]
async fn paused_source_goes_stale_and_recovers() {
    let node = sim_node("scenario-1.toml", Arc::new(SystemClock));
    let gw = ingested(node.clone()).await;
    let mut feed = gw.subscribe(u64::MAX);
    let (stop, _h) = spawn_sync(&gw);
    assert!(wait_for(Duration::from_millis(500), || gw.sync_ticks() >= 2).await);

    node.pause();
    tokio::time::sleep(Duration::from_millis(900)).await;
    assert_eq!(quality(&gw, "BRK-001", "normalOpen"), Quality::Stale);
    assert_eq!(quality(&gw, "LOAD-001", "pfixed"), Quality::Stale);
    // The last good value is kept.
    let v = gw.device_data("BRK-001").unwrap().latest.values["normalOpen"].clone();
    assert_eq!(v.value.as_deref(), Some("false"));

    let mut stale_tags = BTreeSet::new();
    let mut unreachable = false;
    while let Some(ev) = feed.try_next() {
        match ev {
            GatewayEvent::Quality {
                tag,
                quality: Quality::Stale,
                ..
            } => {
                stale_tags.insert(tag);
            }
            GatewayEvent::Source {
                reachable: false, ..
            } => unreachable = true,
            _ => {}
        }
    }
    assert!(unreachable);
    assert_eq!(
        stale_tags,
        BTreeSet::from(["plc.brk1.state".to_string(), "plc.load1.p".to_string()])
    );

    node.resume();
    assert!(
        wait_for(Duration::from_millis(500), || quality(
            &gw,
            "BRK-001",
            "normalOpen"
        ) == Quality::Good)
        .await
    );
    stop.send(true).unwrap();
}

#[tokio::test]
async fn dropped_tag_turns_bad() {
    let text = r#"
[topology]
file = "topo-1.rdf"

[[tags]]
tag = "plc.brk1.state"
mrid = "BRK-001"
attribute = "normalOpen"
signal = { kind = "constant", value = "false" }

[[tags]]
tag = "plc.load1.p"
mrid = "LOAD-001"
attribute = "pfixed"
signal = { kind = "constant", value = "1000" }

[[events]]
at_ms = 1000
action = "drop_tag"
tag = "plc.load1.p"
"#;
    let clock = Arc::new(ManualClock::new(10_000));
    let sc = Scenario::from_toml(text, &fixture("")).unwrap();
    let node = Arc::new(SimNode::new(sc, clock.clone()));
    let gw = ingested(node).await;
    let (stop, _h) = spawn_sync(&gw);
    assert!(wait_for(Duration::from_millis(500), || gw.sync_ticks() >= 2).await);
    assert_eq!(quality(&gw, "LOAD-001", "pfixed"), Quality::Good);

    clock.advance(1_000);
    assert!(
        wait_for(Duration::from_millis(500), || quality(
            &gw, "LOAD-001", "pfixed"
        ) == Quality::Bad)
        .await
    );
    assert_eq!(quality(&gw, "BRK-001", "normalOpen"), Quality::Good);
    stop.send(true).unwrap();
}

#[tokio::test]
async fn storage_failure_stops_the_loop() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gw.sqlite");
    let store = Store::open(path.to_str().unwrap()).unwrap();
    let gw = gateway_with(
        lib_a(),
        store,
        sim_node("scenario-1.toml", Arc::new(SystemClock)),
    );
    gw.ingest(&fixture_bytes("topo-1.rdf")).await.unwrap();
    let mut feed = gw.subscribe(u64::MAX);

    rusqlite::Connection::open(&path)
        .unwrap()
        .execute_batch("DROP TABLE \"Breaker\"; DROP TABLE \"EnergyConsumer\";")
        .unwrap();

    let (_stop, handle) = spawn_sync(&gw);
    let exit = tokio::time::timeout(Duration::from_secs(2), handle)
        .await
        .unwrap()
        .unwrap();
    assert!(matches!(exit, SyncExit::FatalStoreFailure(_)), "{exit:?}");
    let mut stopped = false;
    while let Some(ev) = feed.try_next() {
        stopped |= matches!(ev, GatewayEvent::SyncStopped { .. });
    }
    assert!(stopped);
}

#[tokio::test]
async fn only_bound_cells_change() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gw.sqlite");
    let store = Store::open(path.to_str().unwrap()).unwrap();
    let gw = gateway_with(
        lib_a(),
        store,
        sim_node("scenario-1.toml", Arc::new(SystemClock)),
    );
    gw.ingest(&fixture_bytes("topo-1.rdf")).await.unwrap();
    let before = db_image(&path);

    let (stop, handle) = spawn_sync(&gw);
    assert!(wait_for(Duration::from_secs(1), || gw.sync_ticks() >= 4).await);
    stop.send(true).unwrap();
    handle.await.unwrap();
    let after = db_image(&path);

    let bound: BTreeSet<(String, String)> = gw
        .snapshot()
        .bound
        .iter()
        .map(|b| (b.mrid.clone(), b.attribute.clone()))
        .collect();
    let mut changed = BTreeSet::new();
    for (table, (cols, rows)) in &before {
        if table.starts_with("_cimgw_") {
            continue;
        }
        let (after_cols, after_rows) = &after[table];
        assert_eq!(cols, after_cols);
        assert_eq!(rows.len(), after_rows.len());
        let key = cols.iter().position(|c| c == "mrid").unwrap();
        for (old, new) in rows.iter().zip(after_rows) {
            assert_eq!(old[key], new[key]);
            for (i, col) in cols.iter().enumerate() {
                if old[i] != new[i] && col != "_synced_at" {
                    changed.insert((old[key].clone(), col.clone()));
                }
            }
        }
    }
    assert!(changed.is_subset(&bound), "unexpected writes: {changed:?}");
    // pfixed follows a sine, so at least that cell moved.
    assert!(changed.contains(&("LOAD-001".to_string(), "pfixed".to_string())));
}
