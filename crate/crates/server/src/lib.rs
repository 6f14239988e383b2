//! Ingest/query/report HTTP service: validates and deduplicates incoming
//! window aggregates, persists them to time-partitioned storage, keeps
//! multi-granularity rollups, and serves readings, aggregates and
//! exceedance reports over JSON.

pub mod api;
pub mod store;

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::RwLock;
use thiserror::Error;

use noisewatch_core::analytics::SchoolHours;

use crate::api::AppState;
use crate::store::{Store, StoreError};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind port {port}: {source}")]
    Bind {
        port: u16,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("runtime error: {0}")]
    Runtime(String),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Port to bind on 127.0.0.1. Port 0 picks a free one.
    pub port: u16,
    pub data_dir: PathBuf,
    /// Report hours per school; schools not listed use the default.
    pub school_hours: Vec<(String, SchoolHours)>,
}

/// A running service. Dropping the handle stops the server thread; call
/// [`ServerHandle::shutdown`] for an explicit graceful stop that flushes
/// partitions.
pub struct ServerHandle {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stop accepting connections, wait for the server to exit, and
    /// flush storage.
    pub fn shutdown(mut self) {
        self.shutdown_inner();
    }

    fn shutdown_inner(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
        if let Err(e) = self.state.store.write().flush() {
            tracing::error!("flush on shutdown failed: {e}");
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown_inner();
    }
}

/// Open storage, bind the port, and serve the API on a background
/// thread. Startup failures (unbindable port, unwritable or corrupt data
/// directory) surface here synchronously.
pub fn serve(options: ServeOptions) -> Result<ServerHandle, ServeError> {
    let store = Store::open(&options.data_dir)?;
    let state = Arc::new(AppState {
        store: RwLock::new(store),
        hours: options.school_hours.into_iter().collect::<HashMap<_, _>>(),
        default_hours: SchoolHours::default_athens(),
    });

    let bind = |source| ServeError::Bind {
        port: options.port,
        source,
    };
    let listener =
        TcpListener::bind(SocketAddr::from((Ipv4Addr::LOCALHOST, options.port))).map_err(bind)?;
    listener.set_nonblocking(true).map_err(bind)?;
    let addr = listener.local_addr().map_err(bind)?;

    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
    let router = api::router(state.clone());
    let join = std::thread::Builder::new()
        .name("noisewatch-server".into())
        .spawn(move || {
            let runtime = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .expect("tokio runtime");
            runtime.block_on(async move {
                let listener =
                    tokio::net::TcpListener::from_std(listener).expect("listener registers");
                let serve = axum::serve(listener, router).with_graceful_shutdown(async {
                    let _ = shutdown_rx.await;
                });
                if let Err(e) = serve.await {
                    tracing::error!("server error: {e}");
                }
            });
        })
        .map_err(|e| ServeError::Runtime(e.to_string()))?;

    Ok(ServerHandle {
        addr,
        state,
        shutdown: Some(shutdown_tx),
        join: Some(join),
    })
}
