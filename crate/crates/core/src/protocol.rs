//! Kernel messaging wire format (protocol version 5.3).
//!
//! A message travels as a list of frames:
//!
//! ```text
//! identities... | <IDS|MSG> | hmac hex | header | parent_header | metadata | content | buffers...
//! ```
//!
//! The four structured parts are compact JSON. The signature is HMAC-SHA256
//! over those four frames in order, keyed with the connection file's `key`;
//! an empty key disables signing.

use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use sha2::Sha256;

use crate::canonical::to_compact_sorted;

pub const DELIMITER: &[u8] = b"<IDS|MSG>";
pub const PROTOCOL_VERSION: &str = "5.3";
pub const SIGNATURE_SCHEME: &str = "hmac-sha256";

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("malformed connection document: {0}")]
    MalformedDocument(String),
    #[error("connection document is missing field `{0}`")]
    MissingField(&'static str),
    #[error("unsupported signature scheme `{0}`")]
    UnsupportedScheme(String),
    #[error("failed to serialize message: {0}")]
    SerializationFailure(String),
    #[error("frames contain no <IDS|MSG> delimiter")]
    MissingDelimiter,
    #[error("message signature does not verify")]
    BadSignature,
    #[error("malformed message part: {0}")]
    MalformedPart(Part),
}

/// Which of the structured frames failed to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Signature,
    Header,
    ParentHeader,
    Metadata,
    Content,
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Part::Signature => "signature",
            Part::Header => "header",
            Part::ParentHeader => "parent_header",
            Part::Metadata => "metadata",
            Part::Content => "content",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Ipc,
}

/// Contents of a kernel connection file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionInfo {
    pub transport: Transport,
    pub ip: String,
    pub shell_port: u16,
    pub iopub_port: u16,
    pub stdin_port: u16,
    pub control_port: u16,
    pub hb_port: u16,
    pub key: Vec<u8>,
    pub signature_scheme: String,
    pub kernel_name: Option<String>,
}

#[derive(Deserialize)]
struct RawConnection {
    transport: Option<String>,
    ip: Option<String>,
    shell_port: Option<i64>,
    iopub_port: Option<i64>,
    stdin_port: Option<i64>,
    control_port: Option<i64>,
    hb_port: Option<i64>,
    key: Option<String>,
    signature_scheme: Option<String>,
    kernel_name: Option<String>,
}

fn port(value: Option<i64>, name: &'static str) -> Result<u16, ProtocolError> {
    let value = value.ok_or(ProtocolError::MissingField(name))?;
    u16::try_from(value)
        .ok()
        .filter(|p| *p != 0)
        .ok_or_else(|| ProtocolError::MalformedDocument(format!("{name} {value} is not in 1..=65535")))
}

/// Parse a connection file. `transport` defaults to tcp and
/// `signature_scheme` to hmac-sha256.
pub fn parse_connection_file(raw: &[u8]) -> Result<ConnectionInfo, ProtocolError> {
    let raw: RawConnection =
        serde_json::from_slice(raw).map_err(|e| ProtocolError::MalformedDocument(e.to_string()))?;
    let transport = match raw.transport.as_deref() {
        None | Some("tcp") => Transport::Tcp,
        Some("ipc") => Transport::Ipc,
        Some(other) => return Err(ProtocolError::MalformedDocument(format!("unknown transport `{other}`"))),
    };
    let info = ConnectionInfo {
        transport,
        ip: raw.ip.ok_or(ProtocolError::MissingField("ip"))?,
        shell_port: port(raw.shell_port, "shell_port")?,
        iopub_port: port(raw.iopub_port, "iopub_port")?,
        stdin_port: port(raw.stdin_port, "stdin_port")?,
        control_port: port(raw.control_port, "control_port")?,
        hb_port: port(raw.hb_port, "hb_port")?,
        key: raw.key.ok_or(ProtocolError::MissingField("key"))?.into_bytes(),
        signature_scheme: raw.signature_scheme.unwrap_or_else(|| SIGNATURE_SCHEME.to_owned()),
        kernel_name: raw.kernel_name,
    };
    if info.signature_scheme != SIGNATURE_SCHEME && !info.key.is_empty() {
        return Err(ProtocolError::UnsupportedScheme(info.signature_scheme));
    }
    if info.transport == Transport::Tcp {
        let ports = info.ports();
        for (i, a) in ports.iter().enumerate() {
            if ports[i + 1..].contains(a) {
                return Err(ProtocolError::MalformedDocument(format!("port {a} used twice")));
            }
        }
    }
    Ok(info)
}

impl ConnectionInfo {
    /// shell, iopub, stdin, control, hb.
    pub fn ports(&self) -> [u16; 5] {
        [self.shell_port, self.iopub_port, self.stdin_port, self.control_port, self.hb_port]
    }

    pub fn endpoint(&self, port: u16) -> String {
        match self.transport {
            Transport::Tcp => format!("tcp://{}:{}", self.ip, port),
            Transport::Ipc => format!("ipc://{}-{}", self.ip, port),
        }
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "transport": self.transport,
            "ip": self.ip,
            "shell_port": self.shell_port,
            "iopub_port": self.iopub_port,
            "stdin_port": self.stdin_port,
            "control_port": self.control_port,
            "hb_port": self.hb_port,
            "key": String::from_utf8_lossy(&self.key),
            "signature_scheme": self.signature_scheme,
            "kernel_name": self.kernel_name,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MsgType {
    KernelInfoRequest,
    KernelInfoReply,
    ExecuteRequest,
    ExecuteReply,
    ExecuteInput,
    Stream,
    Error,
    Status,
    ShutdownRequest,
    ShutdownReply,
    InterruptRequest,
    InterruptReply,
    /// Anything this kernel does not implement (comm, completion, ...).
    Other(String),
}

impl MsgType {
    pub const KNOWN: [MsgType; 12] = [
        MsgType::KernelInfoRequest,
        MsgType::KernelInfoReply,
        MsgType::ExecuteRequest,
        MsgType::ExecuteReply,
        MsgType::ExecuteInput,
        MsgType::Stream,
        MsgType::Error,
        MsgType::Status,
        MsgType::ShutdownRequest,
        MsgType::ShutdownReply,
        MsgType::InterruptRequest,
        MsgType::InterruptReply,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            MsgType::KernelInfoRequest => "kernel_info_request",
            MsgType::KernelInfoReply => "kernel_info_reply",
            MsgType::ExecuteRequest => "execute_request",
            MsgType::ExecuteReply => "execute_reply",
            MsgType::ExecuteInput => "execute_input",
            MsgType::Stream => "stream",
            MsgType::Error => "error",
            MsgType::Status => "status",
            MsgType::ShutdownRequest => "shutdown_request",
            MsgType::ShutdownReply => "shutdown_reply",
            MsgType::InterruptRequest => "interrupt_request",
            MsgType::InterruptReply => "interrupt_reply",
            MsgType::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> MsgType {
        Self::KNOWN.iter().find(|t| t.as_str() == s).cloned().unwrap_or_else(|| MsgType::Other(s.to_owned()))
    }

    /// The reply type paired with a request type.
    pub fn reply(&self) -> Option<MsgType> {
        match self {
            MsgType::KernelInfoRequest => Some(MsgType::KernelInfoReply),
            MsgType::ExecuteRequest => Some(MsgType::ExecuteReply),
            MsgType::ShutdownRequest => Some(MsgType::ShutdownReply),
            MsgType::InterruptRequest => Some(MsgType::InterruptReply),
            _ => None,
        }
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for MsgType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MsgType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(MsgType::parse(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageHeader {
    pub msg_id: String,
    pub session: String,
    pub username: String,
    /// Kept as received so that re-encoding is lossless.
    pub date: String,
    pub msg_type: MsgType,
    pub version: String,
}

impl MessageHeader {
    /// Fresh header with a random id and the current UTC time.
    pub fn new(msg_type: MsgType, session: &str, username: &str) -> Self {
        MessageHeader {
            msg_id: uuid::Uuid::new_v4().to_string(),
            session: session.to_owned(),
            username: username.to_owned(),
            date: utc_timestamp(chrono::Utc::now()),
            msg_type,
            version: PROTOCOL_VERSION.to_owned(),
        }
    }
}

/// ISO-8601 UTC with millisecond precision, e.g. `2024-05-01T12:00:00.000Z`.
pub fn utc_timestamp(at: chrono::DateTime<chrono::Utc>) -> String {
    at.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMessage {
    pub identities: Vec<Vec<u8>>,
    pub header: MessageHeader,
    pub parent_header: Option<MessageHeader>,
    pub metadata: Map<String, Value>,
    pub content: Map<String, Value>,
    pub buffers: Vec<Vec<u8>>,
}

impl KernelMessage {
    pub fn new(header: MessageHeader, content: Value) -> Self {
        KernelMessage {
            identities: Vec::new(),
            header,
            parent_header: None,
            metadata: Map::new(),
            content: into_object(content),
            buffers: Vec::new(),
        }
    }

    /// A message answering (or published on behalf of) `self`: parent header
    /// set, identities copied so a router socket can route it back.
    pub fn child(&self, msg_type: MsgType, content: Value) -> KernelMessage {
        let header = MessageHeader::new(msg_type, &self.header.session, &self.header.username);
        KernelMessage {
            identities: self.identities.clone(),
            header,
            parent_header: Some(self.header.clone()),
            metadata: Map::new(),
            content: into_object(content),
            buffers: Vec::new(),
        }
    }

    pub fn msg_type(&self) -> &MsgType {
        &self.header.msg_type
    }
}

fn into_object(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(map) => map,
        Value::Null => Map::new(),
        other => {
            let mut map = Map::new();
            map.insert("value".to_owned(), other);
            map
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WireFrames {
    pub frames: Vec<Vec<u8>>,
}

impl From<Vec<Vec<u8>>> for WireFrames {
    fn from(frames: Vec<Vec<u8>>) -> Self {
        WireFrames { frames }
    }
}

/// Lowercase hex HMAC-SHA256 over the four parts; empty key gives `""`.
pub fn compute_signature(key: &[u8], header: &[u8], parent: &[u8], metadata: &[u8], content: &[u8]) -> String {
    match signer(key, [header, parent, metadata, content]) {
        Some(mac) => hex::encode(mac.finalize().into_bytes()),
        None => String::new(),
    }
}

fn signer(key: &[u8], parts: [&[u8]; 4]) -> Option<HmacSha256> {
    if key.is_empty() {
        return None;
    }
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts keys of any length");
    for part in parts {
        mac.update(part);
    }
    Some(mac)
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, ProtocolError> {
    let value = serde_json::to_value(value).map_err(|e| ProtocolError::SerializationFailure(e.to_string()))?;
    Ok(to_compact_sorted(&value))
}

pub fn encode(msg: &KernelMessage, key: &[u8]) -> Result<WireFrames, ProtocolError> {
    if msg.identities.iter().any(|id| id.as_slice() == DELIMITER) {
        return Err(ProtocolError::SerializationFailure("identity frame equals the <IDS|MSG> delimiter".into()));
    }
    let header = to_json_bytes(&msg.header)?;
    let parent = match &msg.parent_header {
        Some(parent) => to_json_bytes(parent)?,
        None => b"{}".to_vec(),
    };
    let metadata = to_json_bytes(&msg.metadata)?;
    let content = to_json_bytes(&msg.content)?;
    let signature = compute_signature(key, &header, &parent, &metadata, &content);

    let mut frames = Vec::with_capacity(msg.identities.len() + 6 + msg.buffers.len());
    frames.extend(msg.identities.iter().cloned());
    frames.push(DELIMITER.to_vec());
    frames.push(signature.into_bytes());
    frames.extend([header, parent, metadata, content]);
    frames.extend(msg.buffers.iter().cloned());
    Ok(WireFrames { frames })
}

pub fn decode(frames: &WireFrames, key: &[u8]) -> Result<KernelMessage, ProtocolError> {
    let frames = &frames.frames;
    let delim = frames.iter().position(|f| f.as_slice() == DELIMITER).ok_or(ProtocolError::MissingDelimiter)?;
    let rest = &frames[delim + 1..];
    if rest.len() < 5 {
        let missing = [Part::Signature, Part::Header, Part::ParentHeader, Part::Metadata, Part::Content];
        return Err(ProtocolError::MalformedPart(missing[rest.len()]));
    }
    let (signature, header, parent, metadata, content) = (&rest[0], &rest[1], &rest[2], &rest[3], &rest[4]);

    if let Some(mac) = signer(key, [header, parent, metadata, content]) {
        // the digest is exchanged as lowercase hex and compared as such
        if !signature.iter().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(ProtocolError::BadSignature);
        }
        let claimed = hex::decode(signature).map_err(|_| ProtocolError::BadSignature)?;
        mac.verify_slice(&claimed).map_err(|_| ProtocolError::BadSignature)?;
    }

    let header: MessageHeader =
        serde_json::from_slice(header).map_err(|_| ProtocolError::MalformedPart(Part::Header))?;
    let parent_value: Value =
        serde_json::from_slice(parent).map_err(|_| ProtocolError::MalformedPart(Part::ParentHeader))?;
    let parent_header = match parent_value {
        Value::Object(ref map) if map.is_empty() => None,
        other => Some(serde_json::from_value(other).map_err(|_| ProtocolError::MalformedPart(Part::ParentHeader))?),
    };
    let metadata: Map<String, Value> =
        serde_json::from_slice(metadata).map_err(|_| ProtocolError::MalformedPart(Part::Metadata))?;
    let content: Map<String, Value> =
        serde_json::from_slice(content).map_err(|_| ProtocolError::MalformedPart(Part::Content))?;

    Ok(KernelMessage {
        identities: frames[..delim].to_vec(),
        header,
        parent_header,
        metadata,
        content,
        buffers: rest[5..].to_vec(),
    })
}
