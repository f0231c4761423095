//! HTTP front end: the session WebSocket, a health probe and static files.

use std::future::Future;
use std::io;
use std::path::Path;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tower_http::services::ServeDir;

use crate::protocol::ServerMsg;
use crate::session::SessionHandle;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

pub fn router(session: Arc<SessionHandle>, static_dir: Option<&Path>) -> Router {
    let app = Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(session);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Serves `app` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(session): State<Arc<SessionHandle>>) -> Response {
    ws.on_upgrade(move |socket| client_loop(socket, session))
}

async fn client_loop(socket: WebSocket, session: Arc<SessionHandle>) {
    let (tx, mut outgoing) = tokio::sync::mpsc::unbounded_channel::<ServerMsg>();
    let id = session.join(tx);
    let (mut sink, mut incoming) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(msg) = outgoing.recv().await {
            if sink.send(Message::Text(msg.to_json())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(frame)) = incoming.next().await {
        match frame {
            Message::Text(text) => session.message(id, text),
            // Not JSON text; the session answers with a schema error.
            Message::Binary(bytes) => session.message(id, String::from_utf8_lossy(&bytes)),
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => {}
        }
    }
    session.leave(id);
    writer.abort();
}
