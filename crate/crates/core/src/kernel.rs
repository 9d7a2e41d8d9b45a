//! The notebook kernel: five sockets, one cell at a time.
//!
//! Heartbeat, control and shell are served by separate tasks so that an
//! interrupt or a heartbeat is answered while a cell is running. Shell
//! requests are handled strictly in arrival order. All iopub publications
//! go through one channel, so their order is the order they were made in.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bytes::Bytes;
use serde_json::{json, Value};
use tokio::sync::{mpsc, watch};
use zeromq::{PubSocket, RepSocket, RouterSocket, Socket, SocketRecv, SocketSend, ZmqMessage};

use crate::canonical::to_canonical_bytes;
use crate::exec::{self, CancelFlag, ExecError, ExecutionOutcome, ToolchainConfig};
use crate::protocol::{self, ConnectionInfo, KernelMessage, MessageHeader, MsgType, WireFrames, PROTOCOL_VERSION};

pub const IMPLEMENTATION: &str = "ompbook";

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("cannot bind port {port}: {reason}")]
    BindFailure { port: u16, reason: String },
    #[error("kernelspec directory {0} already exists")]
    AlreadyExists(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("runtime: {0}")]
    Runtime(String),
}

/// Mutable state of a running kernel.
#[derive(Debug)]
pub struct KernelState {
    pub execution_count: u64,
    pub session_id: String,
    pub key: Vec<u8>,
    pub busy: bool,
    /// Cancels the cell currently running, if any.
    pub active_child: CancelFlag,
}

impl KernelState {
    pub fn new(key: &[u8]) -> Self {
        KernelState {
            execution_count: 0,
            session_id: uuid::Uuid::new_v4().to_string(),
            key: key.to_vec(),
            busy: false,
            active_child: CancelFlag::new(),
        }
    }
}

pub fn kernel_info_content() -> Value {
    json!({
        "status": "ok",
        "protocol_version": PROTOCOL_VERSION,
        "implementation": IMPLEMENTATION,
        "implementation_version": env!("CARGO_PKG_VERSION"),
        "language_info": {
            "name": "c",
            "version": "",
            "mimetype": "text/x-csrc",
            "file_extension": ".c",
        },
        "banner": format!(
            "{} {}: compiles and runs each cell as a complete program",
            crate::KERNEL_DISPLAY_NAME,
            env!("CARGO_PKG_VERSION")
        ),
        "help_links": [],
    })
}

pub fn handle_kernel_info(req: &KernelMessage) -> KernelMessage {
    req.child(MsgType::KernelInfoReply, kernel_info_content())
}

fn status(parent: Option<&KernelMessage>, state: &str, session: &str) -> KernelMessage {
    let content = json!({ "execution_state": state });
    match parent {
        Some(p) => {
            let mut msg = p.child(MsgType::Status, content);
            msg.identities = vec![b"status".to_vec()];
            msg
        }
        None => {
            let mut msg = KernelMessage::new(MessageHeader::new(MsgType::Status, session, IMPLEMENTATION), content);
            msg.identities = vec![b"status".to_vec()];
            msg
        }
    }
}

/// A message for iopub: same parent, topic in place of the routing ids.
fn publication(req: &KernelMessage, msg_type: MsgType, content: Value) -> KernelMessage {
    let mut msg = req.child(msg_type.clone(), content);
    msg.identities = vec![msg_type.as_str().as_bytes().to_vec()];
    msg
}

fn stream(req: &KernelMessage, name: &str, text: &str) -> KernelMessage {
    publication(req, MsgType::Stream, json!({ "name": name, "text": text }))
}

fn lines(text: &str) -> Vec<String> {
    text.lines().map(str::to_owned).collect()
}

struct Failure {
    ename: &'static str,
    evalue: String,
    traceback: Vec<String>,
}

/// The reply-level verdict of an execution. Expectation directives are
/// not consulted here; the validator judges those.
fn failure_of(outcome: &ExecutionOutcome) -> Option<Failure> {
    if !outcome.compile.ok {
        return Some(Failure {
            ename: "CompileError",
            evalue: "compilation failed".to_owned(),
            traceback: lines(&outcome.compile.diagnostics),
        });
    }
    if outcome.interrupted() {
        return Some(Failure { ename: "Interrupted", evalue: "execution interrupted".to_owned(), traceback: vec![] });
    }
    if outcome.timed_out() {
        return Some(Failure { ename: "Timeout", evalue: "time limit exceeded".to_owned(), traceback: vec![] });
    }
    outcome.runs.iter().find(|r| !r.exit_code.success()).map(|r| Failure {
        ename: "RuntimeError",
        evalue: format!("program ended with {}", r.exit_code),
        traceback: lines(&String::from_utf8_lossy(&r.stderr)),
    })
}

/// Run one execute_request and return its reply. Everything between the
/// busy and idle statuses goes to `publish` as it happens.
pub fn handle_execute(
    req: &KernelMessage,
    state: &mut KernelState,
    cfg: &ToolchainConfig,
    publish: &mut dyn FnMut(KernelMessage),
) -> KernelMessage {
    let content = &req.content;
    let code = content.get("code").and_then(Value::as_str).unwrap_or("");
    let silent = content.get("silent").and_then(Value::as_bool).unwrap_or(false);
    let store_history = content.get("store_history").and_then(Value::as_bool).unwrap_or(!silent);
    if store_history && !silent {
        state.execution_count += 1;
    }
    let count = state.execution_count;

    if !silent {
        publish(publication(req, MsgType::ExecuteInput, json!({ "code": code, "execution_count": count })));
    }

    state.busy = true;
    let result = exec::parse_directives(code)
        .map_err(ExecError::from)
        .and_then(|(d, body)| exec::execute(&d, body, cfg, &state.active_child).map(|o| (d, o)));
    state.busy = false;

    let failure = match result {
        Err(e) => Some(Failure { ename: "CompileError", evalue: e.to_string(), traceback: vec![e.to_string()] }),
        Ok((_, outcome)) => {
            if !silent {
                if outcome.compile.ok && !outcome.compile.diagnostics.is_empty() {
                    publish(stream(req, "stderr", &outcome.compile.diagnostics));
                }
                if let Some(first) = outcome.runs.first() {
                    if !first.stdout.is_empty() {
                        publish(stream(req, "stdout", &String::from_utf8_lossy(&first.stdout)));
                    }
                    if !first.stderr.is_empty() {
                        publish(stream(req, "stderr", &String::from_utf8_lossy(&first.stderr)));
                    }
                }
                if outcome.runs.len() > 1 {
                    let note = match outcome.deterministic {
                        Some(true) => format!("[{} runs, identical output]\n", outcome.runs.len()),
                        _ => {
                            format!("[{} runs, {} distinct outputs]\n", outcome.runs.len(), outcome.distinct_outputs())
                        }
                    };
                    publish(stream(req, "stderr", &note));
                }
                if let Some(bad) = outcome.runs.iter().find(|r| !r.exit_code.success() && !r.interrupted) {
                    publish(stream(req, "stderr", &format!("[program ended with {}]\n", bad.exit_code)));
                }
            }
            if state.active_child.is_cancelled() {
                // the interrupt may land between compiling and running
                Some(Failure { ename: "Interrupted", evalue: "execution interrupted".to_owned(), traceback: vec![] })
            } else {
                failure_of(&outcome)
            }
        }
    };

    match failure {
        None => req.child(
            MsgType::ExecuteReply,
            json!({ "status": "ok", "execution_count": count, "user_expressions": {}, "payload": [] }),
        ),
        Some(f) => {
            if f.ename == "CompileError" && !silent {
                publish(publication(
                    req,
                    MsgType::Error,
                    json!({ "ename": f.ename, "evalue": f.evalue, "traceback": f.traceback }),
                ));
            }
            req.child(
                MsgType::ExecuteReply,
                json!({
                    "status": "error",
                    "execution_count": count,
                    "ename": f.ename,
                    "evalue": f.evalue,
                    "traceback": f.traceback,
                }),
            )
        }
    }
}

/// Stop the running cell, if any.
pub fn handle_interrupt(req: &KernelMessage, active: &CancelFlag) -> KernelMessage {
    active.cancel();
    req.child(MsgType::InterruptReply, json!({ "status": "ok" }))
}

fn to_zmq(frames: WireFrames) -> ZmqMessage {
    let frames: Vec<Bytes> = frames.frames.into_iter().map(Bytes::from).collect();
    ZmqMessage::try_from(frames).expect("encoded messages are never empty")
}

fn from_zmq(msg: ZmqMessage) -> WireFrames {
    WireFrames { frames: msg.into_vec().into_iter().map(|b| b.to_vec()).collect() }
}

async fn bind<S: Socket>(socket: &mut S, conn: &ConnectionInfo, port: u16) -> Result<(), KernelError> {
    socket
        .bind(&conn.endpoint(port))
        .await
        .map(|_| ())
        .map_err(|e| KernelError::BindFailure { port, reason: e.to_string() })
}

async fn send(socket: &mut impl SocketSend, msg: &KernelMessage, key: &[u8]) {
    match protocol::encode(msg, key) {
        Ok(frames) => {
            if let Err(e) = socket.send(to_zmq(frames)).await {
                log::warn!("send {}: {e}", msg.msg_type());
            }
        }
        Err(e) => log::error!("encode {}: {e}", msg.msg_type()),
    }
}

async fn receive(socket: &mut impl SocketRecv, key: &[u8], channel: &str) -> Option<KernelMessage> {
    match socket.recv().await {
        Ok(raw) => match protocol::decode(&from_zmq(raw), key) {
            Ok(msg) => Some(msg),
            Err(e) => {
                log::warn!("{channel}: dropped message: {e}");
                None
            }
        },
        Err(e) => {
            log::warn!("{channel}: receive failed: {e}");
            None
        }
    }
}

type Publisher = mpsc::UnboundedSender<KernelMessage>;

async fn heartbeat(mut socket: RepSocket) {
    loop {
        match socket.recv().await {
            Ok(ping) => {
                if let Err(e) = socket.send(ping).await {
                    log::warn!("heartbeat: {e}");
                }
            }
            Err(e) => log::warn!("heartbeat: {e}"),
        }
    }
}

async fn iopub(mut socket: PubSocket, key: Vec<u8>, mut queue: mpsc::UnboundedReceiver<KernelMessage>) {
    while let Some(msg) = queue.recv().await {
        send(&mut socket, &msg, &key).await;
    }
}

fn shutdown_reply(req: &KernelMessage) -> KernelMessage {
    let restart = req.content.get("restart").and_then(Value::as_bool).unwrap_or(false);
    req.child(MsgType::ShutdownReply, json!({ "status": "ok", "restart": restart }))
}

async fn control(mut socket: RouterSocket, key: Vec<u8>, active: CancelFlag, stop: watch::Sender<bool>) {
    loop {
        let Some(req) = receive(&mut socket, &key, "control").await else {
            continue;
        };
        let reply = match req.msg_type() {
            MsgType::InterruptRequest => handle_interrupt(&req, &active),
            MsgType::KernelInfoRequest => handle_kernel_info(&req),
            MsgType::ShutdownRequest => {
                active.cancel();
                send(&mut socket, &shutdown_reply(&req), &key).await;
                let _ = stop.send(true);
                return;
            }
            other => {
                log::debug!("control: ignoring {other}");
                continue;
            }
        };
        send(&mut socket, &reply, &key).await;
    }
}

async fn shell(
    mut socket: RouterSocket,
    state: Arc<tokio::sync::Mutex<KernelState>>,
    cfg: ToolchainConfig,
    publish: Publisher,
    stop: watch::Sender<bool>,
) {
    let key = state.lock().await.key.clone();
    let session = state.lock().await.session_id.clone();
    loop {
        let Some(req) = receive(&mut socket, &key, "shell").await else {
            continue;
        };
        let known =
            matches!(req.msg_type(), MsgType::KernelInfoRequest | MsgType::ExecuteRequest | MsgType::ShutdownRequest);
        if !known {
            log::debug!("shell: ignoring {}", req.msg_type());
            continue;
        }
        let _ = publish.send(status(Some(&req), "busy", &session));
        let reply = match req.msg_type() {
            MsgType::ExecuteRequest => {
                let state = state.clone();
                let cfg = cfg.clone();
                let req_for_exec = req.clone();
                let publish = publish.clone();
                let joined = tokio::task::spawn_blocking(move || {
                    let mut guard = state.blocking_lock();
                    guard.active_child.reset();
                    handle_execute(&req_for_exec, &mut guard, &cfg, &mut |msg| {
                        let _ = publish.send(msg);
                    })
                })
                .await;
                match joined {
                    Ok(reply) => reply,
                    Err(e) => {
                        log::error!("execution task failed: {e}");
                        req.child(
                            MsgType::ExecuteReply,
                            json!({"status": "error", "ename": "RuntimeError", "evalue": e.to_string(), "traceback": []}),
                        )
                    }
                }
            }
            MsgType::ShutdownRequest => {
                send(&mut socket, &shutdown_reply(&req), &key).await;
                let _ = publish.send(status(Some(&req), "idle", &session));
                let _ = stop.send(true);
                return;
            }
            _ => handle_kernel_info(&req),
        };
        send(&mut socket, &reply, &key).await;
        let _ = publish.send(status(Some(&req), "idle", &session));
    }
}

/// Serve the connection until a shutdown_request arrives.
pub fn serve(conn: &ConnectionInfo, cfg: &ToolchainConfig) -> Result<(), KernelError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| KernelError::Runtime(e.to_string()))?;
    let state = KernelState::new(&conn.key);
    let active = state.active_child.clone();
    let result = runtime.block_on(serve_async(conn, cfg.clone(), state));
    // A cell still running at shutdown is killed rather than waited for.
    active.cancel();
    runtime.shutdown_timeout(std::time::Duration::from_secs(2));
    result
}

async fn serve_async(conn: &ConnectionInfo, cfg: ToolchainConfig, state: KernelState) -> Result<(), KernelError> {
    let mut hb = RepSocket::new();
    bind(&mut hb, conn, conn.hb_port).await?;
    let mut iopub_socket = PubSocket::new();
    bind(&mut iopub_socket, conn, conn.iopub_port).await?;
    let mut control_socket = RouterSocket::new();
    bind(&mut control_socket, conn, conn.control_port).await?;
    let mut stdin_socket = RouterSocket::new();
    bind(&mut stdin_socket, conn, conn.stdin_port).await?;
    let mut shell_socket = RouterSocket::new();
    bind(&mut shell_socket, conn, conn.shell_port).await?;
    log::info!("kernel listening on {} (shell port {})", conn.ip, conn.shell_port);

    let key = state.key.clone();
    let session = state.session_id.clone();
    let active = state.active_child.clone();
    let (publish, queue) = mpsc::unbounded_channel();
    let _ = publish.send(status(None, "starting", &session));
    let (stop_tx, mut stop_rx) = watch::channel(false);

    let state = Arc::new(tokio::sync::Mutex::new(state));
    let tasks = [
        tokio::spawn(heartbeat(hb)),
        tokio::spawn(iopub(iopub_socket, key.clone(), queue)),
        tokio::spawn(control(control_socket, key, active, stop_tx.clone())),
        tokio::spawn(shell(shell_socket, state, cfg, publish, stop_tx)),
    ];
    let _ = stop_rx.wait_for(|stop| *stop).await;
    // let the last replies and publications leave before tearing down
    tokio::time::sleep(std::time::Duration::from_millis(100)).await;
    for task in &tasks {
        task.abort();
    }
    drop(stdin_socket);
    Ok(())
}

/// The kernel.json document for `exe`.
pub fn kernelspec_json(exe: &Path) -> Value {
    json!({
        "argv": [exe.to_string_lossy(), "kernel", "run", "--connection-file", "{connection_file}"],
        "display_name": crate::KERNEL_DISPLAY_NAME,
        "language": "c",
        "interrupt_mode": "message",
        "metadata": {},
    })
}

/// Default kernelspec directory: `$JUPYTER_DATA_DIR/kernels`, else
/// `~/.local/share/jupyter/kernels`.
pub fn default_kernelspec_prefix() -> Option<PathBuf> {
    if let Some(dir) = std::env::var_os("JUPYTER_DATA_DIR") {
        return Some(PathBuf::from(dir).join("kernels"));
    }
    std::env::var_os("HOME").map(|home| PathBuf::from(home).join(".local/share/jupyter/kernels"))
}

/// Write `<prefix>/<name>/kernel.json` pointing at the running executable.
pub fn install_kernelspec(name: &str, prefix: &Path, force: bool) -> Result<PathBuf, KernelError> {
    let exe = std::env::current_exe().map_err(|source| KernelError::Io { path: PathBuf::from("<self>"), source })?;
    install_kernelspec_for(name, prefix, force, &exe)
}

pub fn install_kernelspec_for(name: &str, prefix: &Path, force: bool, exe: &Path) -> Result<PathBuf, KernelError> {
    let dir = prefix.join(name);
    if dir.exists() && !force {
        return Err(KernelError::AlreadyExists(dir));
    }
    fs::create_dir_all(&dir).map_err(|source| KernelError::Io { path: dir.clone(), source })?;
    let path = dir.join("kernel.json");
    fs::write(&path, to_canonical_bytes(&kernelspec_json(exe)))
        .map_err(|source| KernelError::Io { path: path.clone(), source })?;
    Ok(path)
}
