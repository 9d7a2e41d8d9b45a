//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::net::TcpListener;
use std::path::Path;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use bytes::Bytes;
use ompbook_core::kernel::serve;
use ompbook_core::protocol::{decode, encode, Transport};
use ompbook_core::{ConnectionInfo, KernelMessage, MessageHeader, MsgType, ToolchainConfig, WireFrames};
use proptest::prelude::*;
use serde_json::{json, Map, Value};
use tokio::time::timeout;
use zeromq::{DealerSocket, Socket, SocketRecv, SocketSend, SubSocket, ZmqMessage};

pub const KEY: &[u8] = b"a0436f6c-1916-498b-8eb9-e81ab9368e84";
pub const WAIT: Duration = Duration::from_secs(60);

/// Five distinct free ports; the listeners stay open until all are picked.
pub fn free_ports() -> [u16; 5] {
    let listeners: Vec<TcpListener> = (0..5).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
    let ports: Vec<u16> = listeners.iter().map(|l| l.local_addr().unwrap().port()).collect();
    ports.try_into().unwrap()
}

pub fn connection() -> ConnectionInfo {
    let [shell_port, iopub_port, stdin_port, control_port, hb_port] = free_ports();
    ConnectionInfo {
        transport: Transport::Tcp,
        ip: "127.0.0.1".into(),
        shell_port,
        iopub_port,
        stdin_port,
        control_port,
        hb_port,
        key: KEY.to_vec(),
        signature_scheme: "hmac-sha256".into(),
        kernel_name: Some("ompbook".into()),
    }
}

pub fn fig2a() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/programs/fig2a_simd_sum.c");
    std::fs::read_to_string(path).unwrap()
}

pub const SLEEPER: &str = "//%timeout: 60\n#include <unistd.h>\nint main(void) { sleep(30); return 0; }\n";

pub struct Client {
    pub conn: ConnectionInfo,
    pub shell: DealerSocket,
    pub control: DealerSocket,
    pub iopub: SubSocket,
    pub kernel: Option<JoinHandle<()>>,
}

pub fn to_zmq(frames: WireFrames) -> ZmqMessage {
    ZmqMessage::try_from(frames.frames.into_iter().map(Bytes::from).collect::<Vec<_>>()).unwrap()
}

pub fn from_zmq(msg: ZmqMessage) -> KernelMessage {
    let frames = WireFrames { frames: msg.into_vec().into_iter().map(|b| b.to_vec()).collect() };
    decode(&frames, KEY).unwrap()
}

pub fn request(msg_type: MsgType, content: Value) -> KernelMessage {
    KernelMessage::new(MessageHeader::new(msg_type, "test-session", "tester"), content)
}

pub fn execute_request(code: &str) -> KernelMessage {
    request(
        MsgType::ExecuteRequest,
        json!({"code": code, "silent": false, "store_history": true, "user_expressions": {}, "allow_stdin": false}),
    )
}

impl Client {
    pub async fn start() -> Client {
        let conn = connection();
        let kconn = conn.clone();
        let kernel = std::thread::spawn(move || serve(&kconn, &ToolchainConfig::default()).unwrap());
        let mut shell = DealerSocket::new();
        let mut control = DealerSocket::new();
        let mut iopub = SubSocket::new();
        iopub.subscribe("").await.unwrap();
        let deadline = Instant::now() + Duration::from_secs(10);
        // the kernel binds in its own thread; retry until it listens
        loop {
            if shell.connect(&conn.endpoint(conn.shell_port)).await.is_ok() {
                break;
            }
            assert!(Instant::now() < deadline, "kernel did not start");
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        control.connect(&conn.endpoint(conn.control_port)).await.unwrap();
        iopub.connect(&conn.endpoint(conn.iopub_port)).await.unwrap();
        let mut client = Client { conn, shell, control, iopub, kernel: Some(kernel) };
        client.sync().await;
        client
    }

    /// A subscriber misses whatever was published before it joined; repeat
    /// kernel_info until its busy/idle pair shows up on iopub.
    pub async fn sync(&mut self) {
        for _ in 0..100 {
            let req = request(MsgType::KernelInfoRequest, json!({}));
            let id = req.header.msg_id.clone();
            self.send_shell(&req).await;
            self.shell_reply().await;
            let seen = timeout(Duration::from_millis(300), async {
                loop {
                    let msg = from_zmq(self.iopub.recv().await.unwrap());
                    if msg.parent_header.as_ref().is_some_and(|p| p.msg_id == id)
                        && msg.content["execution_state"] == "idle"
                    {
                        return;
                    }
                }
            })
            .await;
            if seen.is_ok() {
                return;
            }
        }
        panic!("iopub never delivered");
    }

    pub async fn send_shell(&mut self, msg: &KernelMessage) {
        self.shell.send(to_zmq(encode(msg, KEY).unwrap())).await.unwrap();
    }

    pub async fn send_control(&mut self, msg: &KernelMessage) {
        self.control.send(to_zmq(encode(msg, KEY).unwrap())).await.unwrap();
    }

    pub async fn shell_reply(&mut self) -> KernelMessage {
        from_zmq(timeout(WAIT, self.shell.recv()).await.expect("shell reply").unwrap())
    }

    pub async fn control_reply(&mut self) -> KernelMessage {
        from_zmq(timeout(WAIT, self.control.recv()).await.expect("control reply").unwrap())
    }

    /// iopub messages caused by `parent`, through its idle status.
    pub async fn published(&mut self, parent: &KernelMessage) -> Vec<KernelMessage> {
        let mut out = Vec::new();
        loop {
            let msg = from_zmq(timeout(WAIT, self.iopub.recv()).await.expect("iopub").unwrap());
            if msg.parent_header.as_ref().map(|p| &p.msg_id) != Some(&parent.header.msg_id) {
                continue;
            }
            let idle = *msg.msg_type() == MsgType::Status && msg.content["execution_state"] == "idle";
            out.push(msg);
            if idle {
                return out;
            }
        }
    }

    pub async fn execute(&mut self, code: &str) -> (KernelMessage, Vec<KernelMessage>) {
        let req = execute_request(code);
        self.send_shell(&req).await;
        let reply = self.shell_reply().await;
        let published = self.published(&req).await;
        (reply, published)
    }

    pub async fn shutdown(mut self) {
        let req = request(MsgType::ShutdownRequest, json!({"restart": false}));
        self.send_control(&req).await;
        let reply = self.control_reply().await;
        assert_eq!(reply.content["status"], "ok");
        assert_eq!(reply.content["restart"], false);
        let kernel = self.kernel.take().unwrap();
        tokio::task::spawn_blocking(move || kernel.join().unwrap()).await.unwrap();
    }
}

pub fn kinds(published: &[KernelMessage]) -> Vec<String> {
    published
        .iter()
        .map(|m| match m.msg_type() {
            MsgType::Status => format!("status:{}", m.content["execution_state"].as_str().unwrap()),
            MsgType::Stream => format!("stream:{}", m.content["name"].as_str().unwrap()),
            other => other.to_string(),
        })
        .collect()
}

/// Arbitrary protocol messages and keys.
pub fn json_leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        (-1e9f64..1e9).prop_map(Value::from),
        ".{0,12}".prop_map(Value::from),
    ]
}

pub fn json_value() -> impl Strategy<Value = Value> {
    json_leaf().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::from),
            prop::collection::btree_map("[a-z_]{1,8}", inner, 0..4)
                .prop_map(|m| Value::Object(m.into_iter().collect::<Map<_, _>>())),
        ]
    })
}

pub fn json_object() -> impl Strategy<Value = Map<String, Value>> {
    prop::collection::btree_map("[a-z_]{1,8}", json_value(), 0..5).prop_map(|m| m.into_iter().collect())
}

pub fn msg_type() -> impl Strategy<Value = MsgType> {
    prop_oneof![prop::sample::select(MsgType::KNOWN.to_vec()), "[a-z_]{3,16}".prop_map(|s| MsgType::parse(&s))]
}

prop_compose! {
    pub fn header()(msg_type in msg_type(), session in "[a-f0-9-]{1,36}", username in ".{0,10}") -> MessageHeader {
        MessageHeader::new(msg_type, &session, &username)
    }
}

prop_compose! {
    pub fn arb_message()(
        identities in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..8), 0..3),
        header in header(),
        parent in prop::option::of(header()),
        metadata in json_object(),
        content in json_object(),
        buffers in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..16), 0..2),
    ) -> KernelMessage {
        KernelMessage { identities, header, parent_header: parent, metadata, content, buffers }
    }
}

pub fn key() -> impl Strategy<Value = Vec<u8>> {
    prop_oneof![Just(Vec::new()), prop::collection::vec(any::<u8>(), 1..48)]
}
