//! Wire encoding for agent <-> environment traffic.
//!
//! Every message travels in one length-prefixed frame: a 4-byte big-endian
//! payload length followed by that many bytes of UTF-8. Agent-to-environment
//! payloads are raw text (`GetStatus`, or `ACTION:` followed by the
//! serialized plan). Environment-to-agent payloads are JSON envelopes of the
//! form `{"msgType": ..., "data": ...}`. `docs/protocol.md` is the normative
//! byte-level description.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

/// Frames above this size are treated as protocol violations.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

/// Logs and errors reported by the environment after executing a plan.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackPayload {
    #[serde(default)]
    pub logs: Vec<String>,
    #[serde(default)]
    pub errors: Vec<String>,
}

/// A typed inbound message from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "msgType", content = "data", rename_all = "lowercase")]
pub enum BridgeMessage {
    Command(String),
    Status(String),
    Feedback(FeedbackPayload),
}

/// An outbound request from the agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutboundFrame {
    GetStatus,
    /// The serialized plan, sent as `ACTION:<plan>`.
    Action(String),
}

pub const GET_STATUS_TEXT: &str = "GetStatus";
pub const ACTION_PREFIX: &str = "ACTION:";

impl OutboundFrame {
    pub fn encode(&self) -> String {
        match self {
            OutboundFrame::GetStatus => GET_STATUS_TEXT.to_string(),
            OutboundFrame::Action(plan) => format!("{ACTION_PREFIX}{plan}"),
        }
    }

    pub fn decode(text: &str) -> Result<Self, String> {
        if text == GET_STATUS_TEXT {
            return Ok(OutboundFrame::GetStatus);
        }
        if let Some(plan) = text.strip_prefix(ACTION_PREFIX) {
            return Ok(OutboundFrame::Action(plan.to_string()));
        }
        Err(format!("unrecognized outbound frame: {text:?}"))
    }
}

/// Write one length-prefixed frame.
pub fn write_frame(stream: &mut impl Write, payload: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "frame too large"))?;
    stream.write_all(&len.to_be_bytes())?;
    stream.write_all(payload)?;
    stream.flush()
}

/// Read one length-prefixed frame. Returns `Ok(None)` on a clean EOF at a
/// frame boundary; EOF mid-frame is an error.
pub fn read_frame(stream: &mut impl Read) -> std::io::Result<Option<Vec<u8>>> {
    let mut len_buf = [0u8; 4];
    match stream.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_FRAME_LEN {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame length {len} exceeds {MAX_FRAME_LEN}"),
        ));
    }
    let mut payload = vec![0u8; len];
    stream.read_exact(&mut payload)?;
    Ok(Some(payload))
}

pub fn encode_message(msg: &BridgeMessage) -> Vec<u8> {
    serde_json::to_vec(msg).expect("bridge messages serialize")
}

pub fn decode_message(payload: &[u8]) -> Result<BridgeMessage, String> {
    serde_json::from_slice(payload).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn action_frames_start_byte_exactly_with_prefix() {
        let frame = OutboundFrame::Action("{\"action\":\"move\"}".into());
        let text = frame.encode();
        assert!(text.as_bytes().starts_with(b"ACTION:"));
        assert_eq!(OutboundFrame::decode(&text).unwrap(), frame);
    }

    #[test]
    fn get_status_is_exact_text() {
        assert_eq!(OutboundFrame::GetStatus.encode(), "GetStatus");
        assert!(OutboundFrame::decode("getstatus").is_err());
    }

    #[test]
    fn envelope_wire_shape_is_stable() {
        let msg = BridgeMessage::Command("b".into());
        assert_eq!(
            String::from_utf8(encode_message(&msg)).unwrap(),
            r#"{"msgType":"command","data":"b"}"#
        );
        let fb = BridgeMessage::Feedback(FeedbackPayload::default());
        assert_eq!(
            String::from_utf8(encode_message(&fb)).unwrap(),
            r#"{"msgType":"feedback","data":{"logs":[],"errors":[]}}"#
        );
    }

    #[test]
    fn feedback_lists_default_to_empty() {
        let msg = decode_message(br#"{"msgType":"feedback","data":{}}"#).unwrap();
        assert_eq!(msg, BridgeMessage::Feedback(FeedbackPayload::default()));
    }

    #[test]
    fn frame_round_trip_over_a_buffer() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"GetStatus").unwrap();
        write_frame(&mut buf, b"second").unwrap();
        let mut cursor = std::io::Cursor::new(buf);
        assert_eq!(read_frame(&mut cursor).unwrap().unwrap(), b"GetStatus");
        assert_eq!(read_frame(&mut cursor).unwrap().unwrap(), b"second");
        assert_eq!(read_frame(&mut cursor).unwrap(), None);
    }

    #[test]
    fn eof_mid_frame_is_an_error() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        buf.truncate(6);
        let mut cursor = std::io::Cursor::new(buf);
        assert!(read_frame(&mut cursor).is_err());
    }

    #[test]
    fn oversized_length_rejected() {
        let mut buf = Vec::from(((MAX_FRAME_LEN + 1) as u32).to_be_bytes());
        buf.extend_from_slice(b"x");
        let mut cursor = std::io::Cursor::new(buf);
        assert!(read_frame(&mut cursor).is_err());
    }

    proptest! {
        #[test]
        fn message_codec_round_trips(kind in 0u8..3, text in ".*", logs in proptest::collection::vec(".*", 0..4), errors in proptest::collection::vec(".*", 0..4)) {
            let msg = match kind {
                0 => BridgeMessage::Command(text),
                1 => BridgeMessage::Status(text),
                _ => BridgeMessage::Feedback(FeedbackPayload { logs, errors }),
            };
            let decoded = decode_message(&encode_message(&msg)).unwrap();
            prop_assert_eq!(decoded, msg);
        }

        #[test]
        fn outbound_codec_round_trips(is_action in proptest::bool::ANY, plan in "[^\u{0}]*") {
            let frame = if is_action {
                OutboundFrame::Action(plan)
            } else {
                OutboundFrame::GetStatus
            };
            let decoded = OutboundFrame::decode(&frame.encode()).unwrap();
            prop_assert_eq!(decoded, frame);
        }

        #[test]
        fn byte_frames_round_trip(payload in proptest::collection::vec(proptest::num::u8::ANY, 0..2048)) {
            let mut buf = Vec::new();
            write_frame(&mut buf, &payload).unwrap();
            let mut cursor = std::io::Cursor::new(buf);
            prop_assert_eq!(read_frame(&mut cursor).unwrap().unwrap(), payload);
        }
    }
}
