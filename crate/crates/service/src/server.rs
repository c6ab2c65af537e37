use std::sync::Arc;

use tokio::net::TcpListener;

use crate::api::router;
use crate::remote::{sync_once, HttpReplica, LocalReplica};
use crate::state::{ApiConfig, AppState, ServeError};

/// Run until SIGINT or SIGTERM. Requests in flight finish first; every write
/// is durable before it is acknowledged, so nothing acknowledged is lost
/// even without a clean shutdown.
pub async fn serve(cfg: ApiConfig) -> Result<(), ServeError> {
    cfg.check()?;
    let state = Arc::new(AppState::open(&cfg)?);
    let listener = TcpListener::bind(&cfg.addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortInUse(cfg.addr.clone()),
        _ => ServeError::Io(e),
    })?;
    let local = listener.local_addr()?;
    tracing::info!(%local, data = %cfg.data_dir.display(), "serving");
    // tests and scripts read the bound address from this line
    println!("listening on http://{local}");

    for peer in cfg.peers.clone() {
        let store = LocalReplica(state.store.clone());
        let token = cfg.token.clone();
        let every = cfg.sync_interval;
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            tick.tick().await;
            loop {
                tick.tick().await;
                let (peer, token, mut store) = (peer.clone(), token.clone(), store.clone());
                let done = tokio::task::spawn_blocking(move || {
                    let mut remote = HttpReplica::new(&peer, token)?;
                    sync_once(&mut store, &mut remote).map(|r| (peer, r))
                })
                .await;
                match done {
                    Ok(Ok((peer, (pulled, pushed)))) => tracing::info!(
                        %peer,
                        pulled = pulled.transferred,
                        pushed = pushed.transferred,
                        conflicts = pulled.conflicts.len() + pushed.conflicts.len(),
                        "synced"
                    ),
                    Ok(Err(e)) => tracing::warn!(error = %e, "sync failed"),
                    Err(e) => tracing::warn!(error = %e, "sync task failed"),
                }
            }
        });
    }

    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown())
        .await?;
    Ok(())
}

async fn shutdown() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}
