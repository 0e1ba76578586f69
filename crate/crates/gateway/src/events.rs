//! Change feed. Reload events are kept so late subscribers can replay from a
//! generation; everything else is live-only.

use cimgw_core::mapping::Quality;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::pipeline::{ReloadSummary, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GatewayEvent {
    Reload(ReloadSummary),
    Quality {
        generation: u64,
        tag: String,
        mrid: String,
        attribute: String,
        quality: Quality,
    },
    Source {
        reachable: bool,
        detail: String,
    },
    IngestFailed {
        stage: Stage,
        message: String,
    },
    SyncStopped {
        cause: String,
    },
}

impl GatewayEvent {
    pub fn name(&self) -> &'static str {
        match self {
            GatewayEvent::Reload(_) => "reload",
            GatewayEvent::Quality { .. } => "quality",
            GatewayEvent::Source { .. } => "source",
            GatewayEvent::IngestFailed { .. } => "ingest_failed",
            GatewayEvent::SyncStopped { .. } => "sync_stopped",
        }
    }

    fn reload_generation(&self) -> Option<u64> {
        match self {
            GatewayEvent::Reload(r) => Some(r.generation),
            _ => None,
        }
    }
}

pub struct EventBus {
    tx: broadcast::Sender<GatewayEvent>,
    reloads: Mutex<Vec<GatewayEvent>>,
}

impl Default for EventBus {
    fn default() -> Self {
        EventBus::new(1024)
    }
}

impl EventBus {
    pub fn new(capacity: usize) -> EventBus {
        EventBus {
            tx: broadcast::channel(capacity).0,
            reloads: Mutex::new(Vec::new()),
        }
    }

    pub fn publish(&self, event: GatewayEvent) {
        // Log and send under one lock so a concurrent subscribe sees each
        // reload either in its replay or on its receiver, never both.
        let mut log = self.reloads.lock();
        if event.reload_generation().is_some() {
            log.push(event.clone());
        }
        let _ = self.tx.send(event);
    }

    /// Reload events with generation above `since`, followed by live events.
    pub fn subscribe(&self, since: u64) -> EventStream {
        let log = self.reloads.lock();
        let rx = self.tx.subscribe();
        let backlog: Vec<GatewayEvent> = log
            .iter()
            .filter(|e| e.reload_generation().is_some_and(|g| g > since))
            .cloned()
            .collect();
        EventStream {
            backlog: backlog.into_iter().rev().collect(),
            rx,
        }
    }
}

pub struct EventStream {
    backlog: Vec<GatewayEvent>,
    rx: broadcast::Receiver<GatewayEvent>,
}

impl EventStream {
    /// `None` once the bus is gone.
    pub async fn next(&mut self) -> Option<GatewayEvent> {
        if let Some(e) = self.backlog.pop() {
            return Some(e);
        }
        loop {
            match self.rx.recv().await {
                Ok(e) => return Some(e),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }

    /// Next event without waiting, if one is ready.
    pub fn try_next(&mut self) -> Option<GatewayEvent> {
        if let Some(e) = self.backlog.pop() {
            return Some(e);
        }
        loop {
            match self.rx.try_recv() {
                Ok(e) => return Some(e),
                Err(broadcast::error::TryRecvError::Lagged(_)) => continue,
                Err(_) => return None,
            }
        }
    }
}
