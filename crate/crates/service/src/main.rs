use anyhow::{Context, Result};
use doseopt_service::{router, Settings};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let settings = Settings::from_env().context("reading settings")?;
    let app = settings
        .app_state()
        .with_context(|| format!("opening data directory {}", settings.data_dir.display()))?;
    let listener = tokio::net::TcpListener::bind(settings.bind_addr)
        .await
        .with_context(|| format!("binding {}", settings.bind_addr))?;
    tracing::info!(addr = %settings.bind_addr, data_dir = %settings.data_dir.display(), workers = settings.workers, "listening");
    axum::serve(listener, router(app, settings.console_dir.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .context("serving")?;
    Ok(())
}
