//! Blocking request/response client over one TCP connection.

use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    read_frame, write_frame, ChallengeReq, Envelope, GatewayStatusBody, MessageType, RevokeResp,
    WireError,
};
use crate::gateway::{
    AuthRequest, AuthResponse, Challenge, EnrollRequest, EnrollResponse, RevokeRequest,
};
use crate::identity::Did;
use crate::node::NodeStatus;

pub struct Connection {
    stream: TcpStream,
    next_id: u64,
}

impl Connection {
    pub fn connect(addr: SocketAddr, timeout: Duration) -> Result<Self, WireError> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_nodelay(true)?;
        Ok(Connection { stream, next_id: 1 })
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> Result<(), WireError> {
        Ok(self.stream.set_read_timeout(t)?)
    }

    /// Send one request and wait for the reply with the same id.
    pub fn call<B: Serialize, R: DeserializeOwned>(
        &mut self,
        kind: MessageType,
        body: &B,
        reply: MessageType,
    ) -> Result<R, WireError> {
        let id = self.next_id;
        self.next_id += 1;
        write_frame(&mut self.stream, &Envelope::new(kind, id, body))?;
        loop {
            let env = read_frame(&mut self.stream)?
                .ok_or_else(|| WireError::Io(std::io::ErrorKind::UnexpectedEof.into()))?;
            if env.id == id {
                return env.into_body(reply);
            }
        }
    }

    pub fn enroll(&mut self, req: &EnrollRequest) -> Result<EnrollResponse, WireError> {
        self.call(MessageType::EnrollReq, req, MessageType::EnrollResp)
    }

    pub fn challenge(&mut self, subject: &Did) -> Result<Challenge, WireError> {
        let body = ChallengeReq {
            subject_did: subject.to_string(),
        };
        self.call(MessageType::ChallengeReq, &body, MessageType::ChallengeResp)
    }

    pub fn auth(&mut self, req: &AuthRequest) -> Result<AuthResponse, WireError> {
        self.call(MessageType::AuthReq, req, MessageType::AuthResp)
    }

    pub fn revoke(&mut self, req: &RevokeRequest) -> Result<RevokeResp, WireError> {
        self.call(MessageType::RevokeReq, req, MessageType::RevokeResp)
    }

    pub fn gateway_status(&mut self) -> Result<GatewayStatusBody, WireError> {
        self.call(
            MessageType::StatusReq,
            &serde_json::json!({}),
            MessageType::StatusResp,
        )
    }

    pub fn node_status(&mut self) -> Result<NodeStatus, WireError> {
        self.call(
            MessageType::StatusReq,
            &serde_json::json!({}),
            MessageType::StatusResp,
        )
    }
}
