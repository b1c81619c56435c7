//! Live driving sessions over WebSocket: frames and planner advice out, key presses in,
//! every session logged as a dataset file.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, Scores, ServerMessage};
pub use server::{serve, ServeError, Server, ServerConfig};
pub use session::{log_file_name, Advisor, Session};
