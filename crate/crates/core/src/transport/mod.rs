//! Wire protocol: message schemas, framing and the heartbeat schedule.
//!
//! A frame is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON. The JSON object carries the message fields plus a `crc`
//! member: CRC-32 of the canonical (sorted-key, compact) JSON encoding of
//! the message without it. Any corruption that still parses is caught by
//! the checksum, so a damaged frame never decodes to a different message.

mod message;

pub use message::{
    AckPayload, Body, ConsumerRegistration, Cursor, Endpoint, ErrorBody, ErrorKind, Message, ProducerFailure,
    ProducerRegistration, ResultRow, StartQuery, KINDS,
};

use serde_json::Value as Json;

/// Largest accepted frame body.
pub const MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("frame error: {0}")]
    Frame(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

fn frame_err(msg: impl Into<String>) -> TransportError {
    TransportError::Frame(msg.into())
}

pub fn frame(message: &Message) -> Result<Vec<u8>, TransportError> {
    let mut value = serde_json::to_value(message).map_err(|e| TransportError::Protocol(e.to_string()))?;
    let crc = crc_of(&value);
    value
        .as_object_mut()
        .ok_or_else(|| TransportError::Protocol("message did not encode as an object".into()))?
        .insert("crc".into(), Json::from(crc));
    let body = serde_json::to_vec(&value).map_err(|e| TransportError::Protocol(e.to_string()))?;
    if body.len() > MAX_FRAME {
        return Err(frame_err(format!("frame of {} bytes exceeds limit", body.len())));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Validates a length prefix read off a stream.
pub fn frame_len(prefix: [u8; 4]) -> Result<usize, TransportError> {
    let n = u32::from_be_bytes(prefix) as usize;
    if n == 0 {
        return Err(frame_err("zero-length frame"));
    }
    if n > MAX_FRAME {
        return Err(frame_err(format!("frame length {n} exceeds limit")));
    }
    Ok(n)
}

/// Decodes one complete frame (prefix included).
pub fn unframe(bytes: &[u8]) -> Result<Message, TransportError> {
    if bytes.len() < 4 {
        return Err(frame_err("truncated length prefix"));
    }
    let n = frame_len(bytes[..4].try_into().expect("4 bytes"))?;
    if bytes.len() - 4 != n {
        return Err(frame_err(format!("length prefix says {n} bytes, frame has {}", bytes.len() - 4)));
    }
    decode_body(&bytes[4..])
}

/// Decodes a frame body whose length prefix has already been consumed.
pub fn decode_body(body: &[u8]) -> Result<Message, TransportError> {
    let text = std::str::from_utf8(body).map_err(|_| frame_err("body is not UTF-8"))?;
    let mut value: Json = serde_json::from_str(text).map_err(|e| frame_err(format!("bad JSON: {e}")))?;
    let obj = value.as_object_mut().ok_or_else(|| frame_err("body is not an object"))?;
    let crc = obj.remove("crc").and_then(|c| c.as_u64()).ok_or_else(|| frame_err("missing checksum"))?;
    if crc != crc_of(&value) as u64 {
        return Err(frame_err("checksum mismatch"));
    }
    let kind = value.get("kind").and_then(Json::as_str).unwrap_or("").to_string();
    if !KINDS.contains(&kind.as_str()) {
        return Err(TransportError::Protocol(format!("unknown message kind '{kind}'")));
    }
    serde_json::from_value(value).map_err(|e| TransportError::Protocol(format!("malformed {kind}: {e}")))
}

fn crc_of(value: &Json) -> u32 {
    // serde_json's default map is ordered by key, so this encoding is canonical
    crc32fast::hash(&serde_json::to_vec(value).expect("JSON values always encode"))
}

/// Agreed time within which a component must heartbeat.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TerminationInterval(u64);

impl TerminationInterval {
    pub fn new(ms: u64) -> Result<Self, TransportError> {
        if ms == 0 {
            return Err(TransportError::Protocol("termination interval must be positive".into()));
        }
        Ok(TerminationInterval(ms))
    }

    pub fn ms(self) -> u64 {
        self.0
    }
}

/// Delay until the next heartbeat: half the interval, kept at least 100 ms
/// after the previous send and at least 100 ms before the deadline. For
/// intervals under 200 ms the two bounds cross and the deadline side wins.
pub fn heartbeat_schedule(interval: TerminationInterval) -> u64 {
    let i = interval.ms();
    let half = i / 2;
    let upper = i.saturating_sub(100);
    half.max(100).min(upper).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hb(id: &str) -> Message {
        Message::new(7, Body::Heartbeat { component_id: id.into() })
    }

    #[test]
    fn heartbeat_round_trip() {
        let m = hb("p1");
        assert_eq!(unframe(&frame(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn zero_length_frame() {
        assert!(matches!(unframe(&[0, 0, 0, 0]), Err(TransportError::Frame(_))));
    }

    #[test]
    fn truncated_frame() {
        let bytes = frame(&hb("p1")).unwrap();
        assert!(matches!(unframe(&bytes[..bytes.len() - 1]), Err(TransportError::Frame(_))));
    }

    #[test]
    fn unknown_kind_is_protocol_error() {
        let mut v = serde_json::json!({"request_id": 1, "kind": "Gossip", "body": {}});
        let crc = crc_of(&v);
        v.as_object_mut().unwrap().insert("crc".into(), Json::from(crc));
        let body = serde_json::to_vec(&v).unwrap();
        let mut bytes = (body.len() as u32).to_be_bytes().to_vec();
        bytes.extend(body);
        assert!(matches!(unframe(&bytes), Err(TransportError::Protocol(_))));
    }

    #[test]
    fn schedule_examples() {
        let s = |ms| heartbeat_schedule(TerminationInterval::new(ms).unwrap());
        assert_eq!(s(60_000), 30_000);
        assert_eq!(s(300), 150);
        assert_eq!(s(1000), 500);
        assert_eq!(s(250), 125);
        assert!(TerminationInterval::new(0).is_err());
    }
}
