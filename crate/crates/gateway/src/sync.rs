//! The refresh loop: poll bound tags, write Good samples, track staleness.

use std::collections::HashMap;
use std::sync::Arc;

use cimgw_core::mapping::{Quality, RefreshPolicy, Sample};
use tokio::sync::watch;
use tokio::time::MissedTickBehavior;

use crate::events::GatewayEvent;
use crate::gateway::Gateway;
use crate::source::{DataSource, Reading, SourceError};
use crate::store::{BoundTag, StoreError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncExit {
    Shutdown,
    FatalStoreFailure(String),
}

/// One sample per bound tag, in `bound` order. Tags the source does not
/// serve come back Bad rather than missing.
pub async fn poll_once(
    source: &dyn DataSource,
    bound: &[BoundTag],
) -> Result<Vec<Sample>, SourceError> {
    if bound.is_empty() {
        return Ok(Vec::new());
    }
    let tags: Vec<String> = bound.iter().map(|b| b.tag.clone()).collect();
    let resp = source.read(&tags).await?;
    Ok(bound
        .iter()
        .map(|b| match resp.readings.get(&b.tag) {
            Some(Reading::Value {
                value,
                timestamp_ms,
            }) => Sample {
                local_tag: b.tag.clone(),
                value: value.clone(),
                timestamp_ms: *timestamp_ms,
                quality: Quality::Good,
            },
            _ => Sample {
                local_tag: b.tag.clone(),
                value: String::new(),
                timestamp_ms: resp.time_ms,
                quality: Quality::Bad,
            },
        })
        .collect())
}

type TrackKey = (String, String, String);

struct Track {
    last_good_ms: u64,
    quality: Quality,
}

fn key(b: &BoundTag) -> TrackKey {
    (b.tag.clone(), b.mrid.clone(), b.attribute.clone())
}

struct Loop {
    gw: Arc<Gateway>,
    policy: RefreshPolicy,
    tracks: HashMap<TrackKey, Track>,
    reachable: bool,
}

/// Runs until `shutdown` flips (or its sender is dropped) or storage fails.
pub async fn run_sync(
    gw: Arc<Gateway>,
    policy: RefreshPolicy,
    mut shutdown: watch::Receiver<bool>,
) -> SyncExit {
    let mut interval = tokio::time::interval(policy.period());
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut lp = Loop {
        gw,
        policy,
        tracks: HashMap::new(),
        reachable: true,
    };
    loop {
        tokio::select! {
            _ = interval.tick() => {}
            _ = shutdown.changed() => return SyncExit::Shutdown,
        }
        lp.gw.count_tick();
        if let Err(e) = lp.tick().await {
            let cause = e.to_string();
            tracing::error!("sync loop stopped: {cause}");
            lp.gw.events().publish(GatewayEvent::SyncStopped {
                cause: cause.clone(),
            });
            return SyncExit::FatalStoreFailure(cause);
        }
    }
}

impl Loop {
    async fn tick(&mut self) -> Result<(), StoreError> {
        let state = self.gw.snapshot();
        let start = self.gw.clock().now_ms();
        self.tracks
            .retain(|k, _| state.bound.iter().any(|b| &key(b) == k));
        for b in &state.bound {
            self.tracks.entry(key(b)).or_insert(Track {
                last_good_ms: start,
                quality: Quality::Good,
            });
        }
        if state.bound.is_empty() {
            return Ok(());
        }

        let samples = match poll_once(self.gw.source().as_ref(), &state.bound).await {
            Ok(s) => {
                if !self.reachable {
                    self.reachable = true;
                    self.gw.events().publish(GatewayEvent::Source {
                        reachable: true,
                        detail: "source answering again".into(),
                    });
                }
                Some(s)
            }
            Err(e) => {
                if self.reachable {
                    self.reachable = false;
                    tracing::warn!("skipping tick: {e}");
                    self.gw.events().publish(GatewayEvent::Source {
                        reachable: false,
                        detail: e.to_string(),
                    });
                }
                None
            }
        };

        let now = self.gw.clock().now_ms();
        let threshold = self.policy.staleness_threshold().as_millis() as u64;
        let gw = self.gw.clone();
        let tracks = &mut self.tracks;
        let mut transitions: Vec<(BoundTag, Quality)> = Vec::new();

        gw.with_store(|store| {
            // Results polled against a mapping that has since been replaced
            // are dropped.
            if gw.generation() != state.generation {
                return Ok(());
            }
            store.transaction(|tx| {
                for (i, b) in state.bound.iter().enumerate() {
                    let track = tracks
                        .get_mut(&key(b))
                        .expect("track exists for every bound tag");
                    let next = match samples.as_ref().map(|s| &s[i]) {
                        Some(s) if s.quality == Quality::Good => {
                            match tx.write_sample(b, &s.value, s.timestamp_ms) {
                                Ok(_) => {
                                    track.last_good_ms = now;
                                    Quality::Good
                                }
                                Err(StoreError::Coercion { .. }) => Quality::Bad,
                                Err(e) => return Err(e),
                            }
                        }
                        Some(_) => Quality::Bad,
                        None if now.saturating_sub(track.last_good_ms) > threshold => {
                            Quality::Stale
                        }
                        None => track.quality,
                    };
                    if next != track.quality {
                        tx.set_quality(b, next)?;
                        track.quality = next;
                        transitions.push((b.clone(), next));
                    }
                }
                Ok(())
            })
        })?;

        for (b, quality) in transitions {
            self.gw.events().publish(GatewayEvent::Quality {
                generation: state.generation,
                tag: b.tag,
                mrid: b.mrid,
                attribute: b.attribute,
                quality,
            });
        }
        Ok(())
    }
}
