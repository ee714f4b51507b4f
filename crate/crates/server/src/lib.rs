//! HTTP service for field surveillance: image prediction with optional
//! saliency overlays, geotagged reports, dataset curation and a registry of
//! externally trained model bundles. All endpoints live under `/api/v1` and
//! speak JSON; uploads use multipart forms.
//!
//! ```no_run
//! # async fn run() -> Result<(), Box<dyn std::error::Error>> {
//! let config = wssv_server::ServerConfig::load(None)?;
//! wssv_server::serve(config).await?;
//! # Ok(()) }
//! ```

pub mod config;
pub mod error;
pub mod routes;
pub mod state;

pub use config::{ConfigError, ServerConfig};
pub use error::ApiError;
pub use routes::{router, OverlayRef, PredictResponse};
pub use state::{AppState, StartupError};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Startup(#[from] StartupError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// Opens the stores under the configured data directory and serves until
/// interrupted.
pub async fn serve(config: ServerConfig) -> Result<(), ServeError> {
    let addr = config.listen.clone();
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| ServeError::Bind { addr: addr.clone(), source })?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
