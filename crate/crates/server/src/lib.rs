//! The shoal server.
//!
//! One process hosts the heartbeat broker (fed over `POST /publish/..`), a
//! consumer thread that applies heartbeats to the registry, a periodic TTL
//! sweep, and the HTTP endpoints:
//!
//! | route | purpose |
//! |---|---|
//! | `GET /nearest?count=N` | ranked caches for the caller, JSON |
//! | `GET /wpad.dat` | proxy auto-config script |
//! | `GET /` | HTML status page |
//! | `GET /api/squids` | tracked caches, JSON |
//! | `GET /api/stats` | counters, JSON |
//! | `POST /publish/{exchange}/{routing_key}` | heartbeat ingestion |

mod config;
mod routes;
mod state;
mod status;

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use shoal_core::geo::LocatorError;
use shoal_core::IpLocator;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tracing::{info, warn};

pub use config::{ServerConfig, DEFAULT_PORT, DEFAULT_QUEUE_CAPACITY};
pub use routes::{router, DEFAULT_COUNT, MAX_COUNT, PAC_CONTENT_TYPE};
pub use state::{AppState, StatsSnapshot};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("loading geo table: {0}")]
    Locator(#[from] LocatorError),
    #[error("binding listener: {0}")]
    Bind(#[from] std::io::Error),
}

/// A running server. Dropping the handle without calling
/// [`ServerHandle::shutdown`] leaves the tasks running.
pub struct ServerHandle {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: watch::Sender<bool>,
    http: JoinHandle<()>,
    sweeper: JoinHandle<()>,
    consumer_stop: Arc<AtomicBool>,
    consumer: Option<std::thread::JoinHandle<()>>,
}

/// Loads the locator table named in `config` and starts serving.
pub async fn start(config: ServerConfig) -> Result<ServerHandle, ServerError> {
    let locator = match &config.table_path {
        Some(path) => IpLocator::load(path)?,
        None => {
            warn!("no geo.table_path configured; every cache will have an unknown location");
            IpLocator::new()
        }
    };
    start_with_locator(config, locator).await
}

pub async fn start_with_locator(config: ServerConfig, locator: IpLocator) -> Result<ServerHandle, ServerError> {
    let listener = TcpListener::bind((config.bind, config.port)).await?;
    Ok(serve(listener, AppState::new(config, locator)))
}

/// Serves `state` on an already bound listener.
pub fn serve(listener: TcpListener, state: Arc<AppState>) -> ServerHandle {
    let addr = listener.local_addr().expect("bound listener has an address");
    let (shutdown, mut shutdown_rx) = watch::channel(false);

    let consumer_stop = Arc::new(AtomicBool::new(false));
    let consumer = {
        let state = Arc::clone(&state);
        let stop = Arc::clone(&consumer_stop);
        std::thread::Builder::new()
            .name("shoal-consumer".into())
            .spawn(move || state.consume_loop(&stop))
            .expect("spawn consumer thread")
    };

    let sweeper = {
        let state = Arc::clone(&state);
        let mut rx = shutdown.subscribe();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs_f64(state.config.sweep_s));
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tokio::select! {
                    _ = tick.tick() => {
                        let removed = state.sweep();
                        if removed > 0 {
                            info!(removed, "expired caches swept");
                        }
                    }
                    _ = rx.changed() => break,
                }
            }
        })
    };

    let app = router(Arc::clone(&state)).into_make_service_with_connect_info::<SocketAddr>();
    let http = tokio::spawn(async move {
        let graceful = async move {
            let _ = shutdown_rx.changed().await;
        };
        if let Err(err) = axum::serve(listener, app).with_graceful_shutdown(graceful).await {
            warn!(%err, "http server stopped with an error");
        }
    });
    info!(%addr, "shoal server listening");

    ServerHandle {
        addr,
        state,
        shutdown,
        http,
        sweeper,
        consumer_stop,
        consumer: Some(consumer),
    }
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL using the loopback address when bound to a wildcard.
    pub fn url(&self) -> String {
        let ip = if self.addr.ip().is_unspecified() {
            std::net::IpAddr::V4(std::net::Ipv4Addr::LOCALHOST)
        } else {
            self.addr.ip()
        };
        format!("http://{}", SocketAddr::new(ip, self.addr.port()))
    }

    pub fn state(&self) -> &Arc<AppState> {
        &self.state
    }

    pub fn pause_consumer(&self) {
        self.state.set_consumer_paused(true);
    }

    pub fn resume_consumer(&self) {
        self.state.set_consumer_paused(false);
    }

    /// Stops accepting requests, waits for in-flight ones, and joins the
    /// background tasks.
    pub async fn shutdown(mut self) {
        let _ = self.shutdown.send(true);
        let _ = (&mut self.http).await;
        let _ = (&mut self.sweeper).await;
        self.consumer_stop.store(true, Ordering::Relaxed);
        if let Some(consumer) = self.consumer.take() {
            let _ = tokio::task::spawn_blocking(move || consumer.join()).await;
        }
    }
}
