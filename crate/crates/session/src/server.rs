use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::thread;

use tungstenite::{accept, Message};

use sadgan::roadworld::WorldConfig;

use crate::protocol::ServerMessage;
use crate::session::{Advisor, Session};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("log directory {}: {source}", path.display())]
    LogDir { path: PathBuf, source: std::io::Error },
}

pub struct ServerConfig {
    pub world: WorldConfig,
    pub log_dir: PathBuf,
    pub advisor: Option<Advisor>,
}

/// A bound listener; each accepted connection gets its own thread and session.
pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

struct Shared {
    config: ServerConfig,
    next_id: AtomicU32,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs + std::fmt::Debug, config: ServerConfig) -> Result<Self, ServeError> {
        std::fs::create_dir_all(&config.log_dir).map_err(|source| ServeError::LogDir {
            path: config.log_dir.clone(),
            source,
        })?;
        let listener = TcpListener::bind(&addr).map_err(|source| ServeError::Bind {
            addr: format!("{addr:?}"),
            source,
        })?;
        Ok(Server {
            listener,
            shared: Arc::new(Shared {
                config,
                next_id: AtomicU32::new(1),
            }),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Accept connections forever.
    pub fn run(self) {
        for stream in self.listener.incoming() {
            let Ok(stream) = stream else { continue };
            let shared = Arc::clone(&self.shared);
            thread::spawn(move || {
                let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
                if let Err(e) = connection(stream, id, &shared.config) {
                    eprintln!("session {id}: {e}");
                }
            });
        }
    }
}

fn connection(stream: TcpStream, id: u32, config: &ServerConfig) -> Result<(), tungstenite::Error> {
    let mut ws = accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    // Dropping the session on any exit path flushes its log.
    let mut session = Session::new(id, config.world.clone(), &config.log_dir, config.advisor.as_ref());
    loop {
        let replies = match ws.read() {
            Ok(Message::Text(text)) => session.handle_text(&text),
            Ok(Message::Binary(_)) => vec![ServerMessage::error("expected a JSON text message")],
            Ok(Message::Close(_)) | Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            Ok(_) => continue,
            Err(e) => return Err(e),
        };
        for r in replies {
            let text = serde_json::to_string(&r).expect("server messages serialize");
            ws.send(Message::Text(text))?;
        }
    }
}

/// Bind `0.0.0.0:port` and serve until the process ends.
pub fn serve(port: u16, config: ServerConfig) -> Result<(), ServeError> {
    let server = Server::bind(("0.0.0.0", port), config)?;
    eprintln!("listening on ws://{}", server.local_addr());
    server.run();
    Ok(())
}
