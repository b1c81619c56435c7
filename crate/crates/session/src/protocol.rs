//! JSON messages, one object per WebSocket text frame.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use sadgan::roadworld::{Action, Frame};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Start {
        seed: u64,
        #[serde(default)]
        record: bool,
    },
    Action {
        step: u32,
        action: Action,
    },
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scores {
    pub left: usize,
    pub up: usize,
    pub right: usize,
}

impl From<[usize; 3]> for Scores {
    fn from([left, up, right]: [usize; 3]) -> Self {
        Scores { left, up, right }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame {
        step: u32,
        w: usize,
        h: usize,
        /// Base64 of the raw row-major intensity bytes.
        pixels: String,
        safe: bool,
        recommended: Option<Action>,
        scores: Option<Scores>,
    },
    SessionOver {
        survived: u32,
        log_path: String,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn frame(step: u32, frame: &Frame, safe: bool, advice: Option<(Action, [usize; 3])>) -> Self {
        ServerMessage::Frame {
            step,
            w: frame.width,
            h: frame.height,
            pixels: STANDARD.encode(&frame.pixels),
            safe,
            recommended: advice.map(|a| a.0),
            scores: advice.map(|a| a.1.into()),
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error { message: message.into() }
    }

    /// Pixels of a frame message, decoded.
    pub fn decode_pixels(&self) -> Option<Vec<u8>> {
        match self {
            ServerMessage::Frame { pixels, .. } => STANDARD.decode(pixels).ok(),
            _ => None,
        }
    }
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        assert_eq!(
            ClientMessage::parse(r#"{"type":"start","seed":7,"record":true}"#).unwrap(),
            ClientMessage::Start { seed: 7, record: true }
        );
        assert_eq!(
            ClientMessage::parse(r#"{"type":"action","step":3,"action":"left"}"#).unwrap(),
            ClientMessage::Action { step: 3, action: Action::Left }
        );
        assert_eq!(ClientMessage::parse(r#"{"type":"stop"}"#).unwrap(), ClientMessage::Stop);
        assert!(ClientMessage::parse(r#"{"type":"action","step":0,"action":"down"}"#).is_err());
    }

    #[test]
    fn frame_reply_shape() {
        let frame = Frame {
            width: 2,
            height: 1,
            pixels: vec![32, 255],
        };
        let msg = ServerMessage::frame(4, &frame, true, None);
        let v: serde_json::Value = serde_json::to_value(&msg).unwrap();
        assert_eq!(v["type"], "frame");
        assert_eq!(v["step"], 4);
        assert_eq!(v["recommended"], serde_json::Value::Null);
        assert_eq!(v["scores"], serde_json::Value::Null);
        assert_eq!(msg.decode_pixels().unwrap(), vec![32, 255]);

        let msg = ServerMessage::frame(4, &frame, true, Some((Action::Right, [0, 1, 3])));
        let v: serde_json::Value = serde_json::to_value(&msg).unwrap();
        assert_eq!(v["recommended"], "right");
        assert_eq!(v["scores"]["right"], 3);
        let over = serde_json::to_value(ServerMessage::SessionOver {
            survived: 2,
            log_path: "x".into(),
        })
        .unwrap();
        assert_eq!(over["type"], "session_over");
    }
}
