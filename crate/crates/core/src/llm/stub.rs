//! A scripted HTTP completion endpoint for tests and offline demos.
//!
//! The server runs on its own thread and runtime, speaks just enough
//! HTTP/1.1 for [`LlmClient`](super::LlmClient), and answers each request
//! with whatever [`Reply`] the handler returns.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::oneshot;

#[derive(Debug, Clone)]
pub enum Reply {
    Sequences(Vec<String>),
    /// `{"error": msg}` with status 200.
    Error(String),
    /// A raw body with status 200.
    Malformed(String),
    /// Close the connection without answering.
    Drop,
    Delay(Duration, Box<Reply>),
    Status(u16, String),
}

impl Reply {
    pub fn sequences<S: Into<String>>(xs: impl IntoIterator<Item = S>) -> Self {
        Reply::Sequences(xs.into_iter().map(Into::into).collect())
    }

    pub fn delayed(self, d: Duration) -> Self {
        Reply::Delay(d, Box::new(self))
    }
}

/// What the handler sees of a request.
#[derive(Debug, Clone)]
pub struct StubRequest {
    /// Zero-based arrival order across all connections.
    pub seq: usize,
    pub body: Value,
}

impl StubRequest {
    pub fn prompt(&self) -> &str {
        self.body.get("prompt").and_then(Value::as_str).unwrap_or_default()
    }
}

#[derive(Debug, Default)]
struct Stats {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

type Handler = dyn Fn(&StubRequest) -> Reply + Send + Sync;

pub struct StubServer {
    addr: SocketAddr,
    stats: Arc<Stats>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(handler: impl Fn(&StubRequest) -> Reply + Send + Sync + 'static) -> io::Result<Self> {
        let handler: Arc<Handler> = Arc::new(handler);
        let stats = Arc::new(Stats::default());
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let listener = runtime.block_on(TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        let (tx, mut rx) = oneshot::channel();
        let st = stats.clone();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                loop {
                    tokio::select! {
                        _ = &mut rx => break,
                        accepted = listener.accept() => {
                            if let Ok((sock, _)) = accepted {
                                tokio::spawn(serve(sock, handler.clone(), st.clone()));
                            }
                        }
                    }
                }
            });
            runtime.shutdown_background();
        });
        Ok(Self { addr, stats, shutdown: Some(tx), thread: Some(thread) })
    }

    /// Answers every request with the same sequences.
    pub fn fixed<S: Into<String> + Clone>(seqs: &[S]) -> io::Result<Self> {
        let reply = Reply::sequences(seqs.iter().cloned());
        Self::start(move |_| reply.clone())
    }

    pub fn url(&self) -> String {
        format!("http://{}/generate", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.stats.requests.load(Ordering::SeqCst)
    }

    /// Highest number of requests being answered at once.
    pub fn max_in_flight(&self) -> usize {
        self.stats.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

async fn serve(mut sock: TcpStream, handler: Arc<Handler>, stats: Arc<Stats>) {
    let Some(body) = read_request(&mut sock).await else { return };
    let seq = stats.requests.fetch_add(1, Ordering::SeqCst);
    let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
    let body = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let mut reply = handler(&StubRequest { seq, body });
    while let Reply::Delay(d, inner) = reply {
        // A client that gave up closes its end; stop counting it as in flight.
        let mut probe = [0u8; 1];
        tokio::select! {
            _ = tokio::time::sleep(d) => reply = *inner,
            _ = sock.read(&mut probe) => reply = Reply::Drop,
        }
    }
    let response = match reply {
        Reply::Sequences(seqs) => Some((200, json!({ "sequences": seqs }).to_string())),
        Reply::Error(msg) => Some((200, json!({ "error": msg }).to_string())),
        Reply::Malformed(raw) => Some((200, raw)),
        Reply::Status(code, raw) => Some((code, raw)),
        Reply::Drop | Reply::Delay(..) => None,
    };
    if let Some((code, text)) = response {
        let head = format!(
            "HTTP/1.1 {code} Stub\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
            text.len()
        );
        let _ = sock.write_all(head.as_bytes()).await;
        let _ = sock.write_all(text.as_bytes()).await;
        let _ = sock.shutdown().await;
    }
    stats.in_flight.fetch_sub(1, Ordering::SeqCst);
}

async fn read_request(sock: &mut TcpStream) -> Option<Vec<u8>> {
    let mut buf = Vec::with_capacity(4096);
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        if let Some(i) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break i + 4;
        }
        let n = sock.read(&mut chunk).await.ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
    };
    let head = std::str::from_utf8(&buf[..header_end]).ok()?;
    let len = head
        .lines()
        .filter_map(|l| l.split_once(':'))
        .find(|(k, _)| k.trim().eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    while buf.len() < header_end + len {
        let n = sock.read(&mut chunk).await.ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    Some(buf[header_end..header_end + len].to_vec())
}
