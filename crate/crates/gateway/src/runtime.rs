//! Wiring: build a gateway from config and run its server, sync loop and
//! topology poller together.

use std::sync::Arc;
use std::time::Duration;

use cimgw_core::cim::load_library_with;
use cimgw_core::mapping::RefreshPolicy;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::clock::SystemClock;
use crate::config::{ConfigError, GatewayConfig};
use crate::gateway::Gateway;
use crate::server::ServerHandle;
use crate::source::HttpSource;
use crate::store::Store;
use crate::sync::{run_sync, SyncExit};

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("library {path}: {message}")]
    Library { path: String, message: String },
    #[error("storage: {0}")]
    Store(String),
    #[error("source: {0}")]
    Source(String),
    #[error("listen on {addr}: {message}")]
    Listen { addr: String, message: String },
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub policy: RefreshPolicy,
    /// `None` disables topology polling.
    pub topology_poll: Option<Duration>,
    pub push: bool,
}

impl ServeOptions {
    pub fn from_config(cfg: &GatewayConfig) -> Result<ServeOptions, ConfigError> {
        Ok(ServeOptions {
            policy: cfg.policy()?,
            topology_poll: cfg
                .topology
                .poll
                .then(|| Duration::from_millis(cfg.topology.poll_interval_ms)),
            push: cfg.topology.push,
        })
    }
}

pub fn build_gateway(cfg: &GatewayConfig) -> Result<Gateway, StartupError> {
    let bytes = std::fs::read(&cfg.library).map_err(|e| StartupError::Library {
        path: cfg.library.display().to_string(),
        message: e.to_string(),
    })?;
    let library = load_library_with(&bytes, &cfg.tag_names).map_err(|e| StartupError::Library {
        path: cfg.library.display().to_string(),
        message: e.to_string(),
    })?;
    let store = Store::open(&cfg.storage.path).map_err(|e| StartupError::Store(e.to_string()))?;
    let source = HttpSource::new(
        &cfg.source.url,
        Duration::from_millis(cfg.source.timeout_ms),
    )
    .map_err(|e| StartupError::Source(e.to_string()))?;
    Gateway::new(
        library,
        store,
        Arc::new(source),
        Arc::new(SystemClock),
        cfg.settings()?,
    )
    .map_err(|e| StartupError::Store(e.to_string()))
}

/// Fetches the source's topology on a timer and ingests when it changed.
/// The first fetch happens immediately.
pub async fn run_topology_poller(
    gw: Arc<Gateway>,
    every: Duration,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut interval = tokio::time::interval(every);
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = interval.tick() => {}
            _ = shutdown.changed() => return,
        }
        match gw.source().topology().await {
            Ok(bytes) => {
                // Failures are published on the change feed by `ingest`.
                let _ = gw.ingest_if_changed(&bytes).await;
            }
            Err(e) => tracing::warn!("topology poll failed: {e}"),
        }
    }
}

pub struct RunningGateway {
    pub gateway: Arc<Gateway>,
    server: ServerHandle,
    shutdown: watch::Sender<bool>,
    sync: Option<JoinHandle<SyncExit>>,
    sync_exit: Option<SyncExit>,
    poller: Option<JoinHandle<()>>,
}

impl RunningGateway {
    pub fn start(
        gateway: Arc<Gateway>,
        listener: TcpListener,
        opts: ServeOptions,
    ) -> RunningGateway {
        let (shutdown, watch_rx) = watch::channel(false);
        let router = crate::http::router(gateway.clone(), opts.push, watch_rx.clone());
        let server = ServerHandle::serve(router, listener);
        let sync = tokio::spawn(run_sync(gateway.clone(), opts.policy, watch_rx.clone()));
        let poller = opts
            .topology_poll
            .map(|every| tokio::spawn(run_topology_poller(gateway.clone(), every, watch_rx)));
        RunningGateway {
            gateway,
            server,
            shutdown,
            sync: Some(sync),
            sync_exit: None,
            poller,
        }
    }

    pub fn url(&self) -> String {
        self.server.url()
    }

    /// Resolves when the sync loop ends on its own (storage failure).
    pub async fn sync_stopped(&mut self) -> SyncExit {
        if let Some(handle) = self.sync.take() {
            let exit = handle
                .await
                .unwrap_or_else(|e| SyncExit::FatalStoreFailure(e.to_string()));
            self.sync_exit = Some(exit);
        }
        self.sync_exit.clone().unwrap_or(SyncExit::Shutdown)
    }

    pub fn sync_finished(&self) -> bool {
        self.sync.as_ref().is_none_or(|h| h.is_finished())
    }

    pub async fn stop(self) -> SyncExit {
        let _ = self.shutdown.send(true);
        self.server.stop().await;
        if let Some(p) = self.poller {
            let _ = p.await;
        }
        match (self.sync, self.sync_exit) {
            (_, Some(exit)) => exit,
            (Some(handle), None) => handle.await.unwrap_or(SyncExit::Shutdown),
            (None, None) => SyncExit::Shutdown,
        }
    }
}

pub async fn bind(addr: &str) -> Result<TcpListener, StartupError> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| StartupError::Listen {
            addr: addr.to_string(),
            message: e.to_string(),
        })
}
