//! Frames: 4-byte big-endian length, then a UTF-8 JSON envelope
//! `{"type": ..., "id": ..., "body": ...}`.

use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Largest accepted frame body.
pub const MAX_FRAME_LEN: u32 = 4 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageType {
    EnrollReq,
    EnrollResp,
    ChallengeReq,
    ChallengeResp,
    AuthReq,
    AuthResp,
    VerifyTask,
    VerifyResult,
    RevokeReq,
    RevokeResp,
    StatusReq,
    StatusResp,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub id: u64,
    pub body: Value,
}

impl Envelope {
    pub fn new<T: Serialize>(kind: MessageType, id: u64, body: &T) -> Self {
        Envelope {
            kind,
            id,
            body: serde_json::to_value(body).expect("wire bodies serialize"),
        }
    }

    pub fn error(id: u64, code: &str, message: impl Into<String>) -> Self {
        Envelope::new(
            MessageType::Error,
            id,
            &ErrorBody {
                code: code.to_owned(),
                message: message.into(),
            },
        )
    }

    /// Decode the body, expecting `kind`. An ERROR envelope becomes
    /// [`WireError::Remote`].
    pub fn into_body<T: DeserializeOwned>(self, kind: MessageType) -> Result<T, WireError> {
        if self.kind == MessageType::Error {
            let e: ErrorBody = serde_json::from_value(self.body)?;
            return Err(WireError::Remote(e));
        }
        if self.kind != kind {
            return Err(WireError::Unexpected(self.kind));
        }
        Ok(serde_json::from_value(self.body)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeReq {
    pub subject_did: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevokeResp {
    pub height: u64,
    #[serde(with = "hex::serde")]
    pub block_hash: [u8; 32],
}

/// STATUS_RESP from the gateway: its own status plus the ledger height that
/// clients use as the proof epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStatusBody {
    #[serde(flatten)]
    pub status: crate::gateway::GatewayStatus,
    pub ledger_height: u64,
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(u32),
    #[error("bad envelope: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unexpected message type {0:?}")]
    Unexpected(MessageType),
    #[error("remote error {}: {}", .0.code, .0.message)]
    Remote(ErrorBody),
}

pub fn write_frame<W: Write>(w: &mut W, env: &Envelope) -> Result<(), WireError> {
    let body = serde_json::to_vec(env)?;
    let len = u32::try_from(body.len())
        .ok()
        .filter(|l| *l <= MAX_FRAME_LEN)
        .ok_or(WireError::TooLarge(body.len().min(u32::MAX as usize) as u32))?;
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&len.to_be_bytes());
    frame.extend_from_slice(&body);
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}

/// Read one frame. `Ok(None)` on a clean end of stream before a header.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Envelope>, WireError> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(header);
    if len > MAX_FRAME_LEN {
        return Err(WireError::TooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    // from_slice rejects invalid UTF-8
    Ok(Some(serde_json::from_slice(&body)?))
}
