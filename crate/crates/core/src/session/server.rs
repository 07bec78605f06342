//! Line-delimited JSON over TCP. A connection that sends `create_session`
//! owns a new session; others may `subscribe` to an existing one. Each
//! session runs on its own thread at the configured frame interval.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::transcript::Recorder;
use super::{Envelope, Outbound, Session, SessionMessage, SessionPhase, SCHEMA_VERSION};

pub const ADDR_ENV: &str = "HANDNAV_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: String,
    pub frame_interval: Duration,
    /// Per-subscriber backlog; the oldest lines are dropped past this.
    pub queue_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            addr: DEFAULT_ADDR.to_string(),
            frame_interval: Duration::from_secs_f64(1.0 / 30.0),
            queue_capacity: 64,
        }
    }
}

/// Bounded line queue that drops the oldest entry when full.
pub struct OutQueue {
    inner: Mutex<(VecDeque<String>, bool)>,
    cv: Condvar,
    capacity: usize,
}

impl OutQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Mutex::new((VecDeque::new(), false)),
            cv: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&self, line: String) {
        let mut g = self.inner.lock().unwrap();
        if g.1 {
            return;
        }
        if g.0.len() == self.capacity {
            g.0.pop_front();
        }
        g.0.push_back(line);
        self.cv.notify_one();
    }

    pub fn close(&self) {
        self.inner.lock().unwrap().1 = true;
        self.cv.notify_all();
    }

    /// Blocks for the next line; `None` once closed and drained.
    pub fn pop(&self) -> Option<String> {
        let mut g = self.inner.lock().unwrap();
        loop {
            if let Some(l) = g.0.pop_front() {
                return Some(l);
            }
            if g.1 {
                return None;
            }
            g = self.cv.wait(g).unwrap();
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct SessionHandle {
    inbox: mpsc::Sender<(SessionMessage, Arc<OutQueue>)>,
    subscribers: Arc<Mutex<Vec<Arc<OutQueue>>>>,
    latest: Arc<Mutex<Option<String>>>,
}

impl SessionHandle {
    fn subscribe(&self, q: &Arc<OutQueue>) {
        if let Some(l) = self.latest.lock().unwrap().clone() {
            q.push(l);
        }
        self.subscribers.lock().unwrap().push(q.clone());
    }
}

struct Shared {
    config: ServerConfig,
    sessions: Mutex<BTreeMap<u64, SessionHandle>>,
    next_id: AtomicU64,
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Control {
    Subscribe { session: u64 },
}

impl Server {
    pub fn bind(config: ServerConfig) -> io::Result<Self> {
        let addr = config
            .addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "address resolves to nothing"))?;
        let listener = TcpListener::bind(addr)?;
        Ok(Self {
            listener,
            shared: Arc::new(Shared {
                config,
                sessions: Mutex::new(BTreeMap::new()),
                next_id: AtomicU64::new(1),
            }),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until the listener fails.
    pub fn run(self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let shared = self.shared.clone();
            thread::spawn(move || {
                let _ = serve_connection(stream, shared);
            });
        }
        Ok(())
    }

    pub fn spawn(self) -> thread::JoinHandle<io::Result<()>> {
        thread::spawn(move || self.run())
    }
}

fn error_line(code: &str, message: impl Into<String>) -> String {
    Outbound::Error {
        code: code.to_string(),
        message: message.into(),
    }
    .to_line()
}

fn serve_connection(stream: TcpStream, shared: Arc<Shared>) -> io::Result<()> {
    let out = Arc::new(OutQueue::new(shared.config.queue_capacity));
    let mut writer = stream.try_clone()?;
    let wq = out.clone();
    let writer_thread = thread::spawn(move || {
        while let Some(line) = wq.pop() {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                break;
            }
        }
    });

    let mut own: Option<u64> = None;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(Control::Subscribe { session }) = serde_json::from_str::<Control>(&line) {
            match shared.sessions.lock().unwrap().get(&session) {
                Some(h) => h.subscribe(&out),
                None => out.push(error_line("no_session", format!("session {session} does not exist"))),
            }
            continue;
        }
        let env: Envelope = match serde_json::from_str(&line) {
            Ok(e) => e,
            Err(e) => {
                out.push(error_line("bad_message", e.to_string()));
                continue;
            }
        };
        if env.v != SCHEMA_VERSION {
            out.push(error_line("bad_version", format!("expected v {SCHEMA_VERSION}, got {}", env.v)));
            continue;
        }
        if own.is_none() && matches!(env.msg, SessionMessage::CreateSession { .. }) {
            let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
            let handle = spawn_session(id, shared.clone());
            handle.subscribe(&out);
            shared.sessions.lock().unwrap().insert(id, handle);
            out.push(Outbound::Created { session: id }.to_line());
            own = Some(id);
        }
        let sent = own.and_then(|id| {
            shared
                .sessions
                .lock()
                .unwrap()
                .get(&id)
                .map(|h| h.inbox.send((env.msg.clone(), out.clone())).is_ok())
        });
        if sent != Some(true) {
            out.push(error_line("no_session", "send create_session first"));
        }
    }
    out.close();
    let _ = writer_thread.join();
    Ok(())
}

fn spawn_session(id: u64, shared: Arc<Shared>) -> SessionHandle {
    let (tx, rx) = mpsc::channel::<(SessionMessage, Arc<OutQueue>)>();
    let subscribers: Arc<Mutex<Vec<Arc<OutQueue>>>> = Arc::default();
    let latest: Arc<Mutex<Option<String>>> = Arc::default();
    let subs = subscribers.clone();
    let last = latest.clone();
    let interval = shared.config.frame_interval;
    thread::spawn(move || {
        let mut rec = Recorder::new(Session::default());
        let broadcast = |line: &str| {
            subs.lock().unwrap().retain(|q: &Arc<OutQueue>| {
                q.push(line.to_string());
                Arc::strong_count(q) > 1
            });
        };
        let mut next = Instant::now();
        loop {
            // messages apply between frames
            loop {
                match rx.try_recv() {
                    Ok((msg, reply_to)) => reply_to.push(rec.handle(msg).to_line()),
                    Err(mpsc::TryRecvError::Empty) => break,
                    Err(mpsc::TryRecvError::Disconnected) => return,
                }
            }
            if rec.session.phase() == SessionPhase::Closed {
                let line = Outbound::Snapshot(rec.session.snapshot()).to_line();
                broadcast(&line);
                shared.sessions.lock().unwrap().remove(&id);
                return;
            }
            match rec.tick() {
                Ok(outs) => {
                    for o in outs {
                        let line = o.to_line();
                        if matches!(o, Outbound::Snapshot(_)) {
                            *last.lock().unwrap() = Some(line.clone());
                        }
                        broadcast(&line);
                    }
                }
                Err(e) => broadcast(&error_line(e.code(), e.to_string())),
            }
            next += interval;
            let now = Instant::now();
            if next > now {
                thread::sleep(next - now);
            } else {
                next = now;
            }
        }
    });
    SessionHandle {
        inbox: tx,
        subscribers,
        latest,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_drops_oldest() {
        let q = OutQueue::new(3);
        for i in 0..5 {
            q.push(i.to_string());
        }
        assert_eq!(q.len(), 3);
        assert_eq!(q.pop().as_deref(), Some("2"));
        q.close();
        assert_eq!(q.pop().as_deref(), Some("3"));
        assert_eq!(q.pop().as_deref(), Some("4"));
        assert_eq!(q.pop(), None);
    }
}
