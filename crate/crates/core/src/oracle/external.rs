use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::protocol::{Message, PROTOCOL_VERSION};
use super::{check_batch, ClassifierOracle, OracleError, Result};

/// How to reach an adapter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// Program and arguments; the adapter speaks on stdin/stdout.
    Subprocess(Vec<String>),
    /// `host:port`.
    Tcp(String),
}

/// An adapter location plus the handshake values it must declare.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endpoint {
    pub transport: Transport,
    pub expected_classes: Option<usize>,
    pub expected_input_dim: Option<usize>,
}

impl Endpoint {
    pub fn new(transport: Transport) -> Self {
        Self {
            transport,
            expected_classes: None,
            expected_input_dim: None,
        }
    }

    pub fn expect_classes(mut self, classes: usize) -> Self {
        self.expected_classes = Some(classes);
        self
    }

    pub fn expect_input_dim(mut self, dim: usize) -> Self {
        self.expected_input_dim = Some(dim);
        self
    }
}

/// Parses `exec:COMMAND ARGS...` (shell-style quoting) or `tcp:HOST:PORT`.
impl FromStr for Transport {
    type Err = OracleError;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("exec:") {
            match shlex::split(cmd) {
                Some(argv) if !argv.is_empty() => Ok(Self::Subprocess(argv)),
                _ => Err(OracleError::InvalidEndpoint(s.to_string())),
            }
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            match addr.rsplit_once(':') {
                Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(Self::Tcp(addr.to_string())),
                _ => Err(OracleError::InvalidEndpoint(s.to_string())),
            }
        } else {
            Err(OracleError::InvalidEndpoint(s.to_string()))
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Subprocess(argv) => write!(f, "exec:{}", shlex::try_join(argv.iter().map(String::as_str)).unwrap_or_default()),
            Self::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExternalOptions {
    /// Limit for the handshake and for every response.
    pub timeout: Duration,
    /// Most connections opened concurrently; each serves one request at a time.
    pub max_connections: usize,
}

impl Default for ExternalOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(10),
            max_connections: 1,
        }
    }
}

enum Line {
    Complete(String),
    Partial(String),
    Closed,
    Failed(String),
}

/// One open adapter connection. A reader thread turns the byte stream into
/// lines so waits can time out.
struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<Line>,
    child: Option<Child>,
    next_id: u64,
    timeout: Duration,
    broken: bool,
}

fn spawn_reader<R: Read + Send + 'static>(source: R) -> Receiver<Line> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut reader = BufReader::new(source);
        loop {
            let mut buf = String::new();
            let msg = match reader.read_line(&mut buf) {
                Ok(0) => Line::Closed,
                Ok(_) if buf.ends_with('\n') => Line::Complete(buf),
                Ok(_) => Line::Partial(buf),
                Err(e) => Line::Failed(e.to_string()),
            };
            let done = !matches!(msg, Line::Complete(_));
            if tx.send(msg).is_err() || done {
                break;
            }
        }
    });
    rx
}

impl Connection {
    fn open(transport: &Transport, timeout: Duration) -> Result<Self> {
        match transport {
            Transport::Subprocess(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| OracleError::Transport(format!("cannot start {}: {e}", argv[0])))?;
                let stdin = child.stdin.take().expect("stdin is piped");
                let stdout = child.stdout.take().expect("stdout is piped");
                Ok(Self {
                    writer: Box::new(stdin),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                    next_id: 0,
                    timeout,
                    broken: false,
                })
            }
            Transport::Tcp(addr) => {
                let stream = connect_tcp(addr, timeout)?;
                let _ = stream.set_nodelay(true);
                let reader = stream
                    .try_clone()
                    .map_err(|e| OracleError::Transport(format!("{addr}: {e}")))?;
                Ok(Self {
                    writer: Box::new(stream),
                    lines: spawn_reader(reader),
                    child: None,
                    next_id: 0,
                    timeout,
                    broken: false,
                })
            }
        }
    }

    fn send(&mut self, msg: &Message) -> Result<()> {
        let line = msg.to_line();
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| {
                self.broken = true;
                OracleError::Transport(format!("write failed: {e}"))
            })
    }

    fn receive(&mut self) -> Result<Message> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Line::Complete(l)) => l,
            Ok(Line::Partial(l)) => {
                self.broken = true;
                return Err(OracleError::MalformedResponse(format!(
                    "connection closed mid-line after {:?}",
                    truncate(&l)
                )));
            }
            Ok(Line::Closed) | Err(RecvTimeoutError::Disconnected) => {
                self.broken = true;
                return Err(OracleError::Transport("adapter closed the connection".into()));
            }
            Ok(Line::Failed(e)) => {
                self.broken = true;
                return Err(OracleError::Transport(format!("read failed: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                self.broken = true;
                return Err(OracleError::Timeout(self.timeout));
            }
        };
        serde_json::from_str(&line).map_err(|e| {
            self.broken = true;
            OracleError::MalformedResponse(format!("{e} in {:?}", truncate(&line)))
        })
    }

    fn handshake(&mut self, endpoint: &Endpoint) -> Result<(usize, usize)> {
        self.send(&Message::Hello {
            protocol: PROTOCOL_VERSION,
        })?;
        match self.receive()? {
            Message::Ready { classes, input_dim } => {
                let class_ok = endpoint.expected_classes.is_none_or(|c| c == classes);
                let dim_ok = endpoint.expected_input_dim.is_none_or(|d| d == input_dim);
                if !(class_ok && dim_ok) {
                    return Err(OracleError::HandshakeMismatch {
                        expected: describe(endpoint.expected_classes, endpoint.expected_input_dim),
                        declared: describe(Some(classes), Some(input_dim)),
                    });
                }
                if classes < 2 || input_dim == 0 {
                    return Err(OracleError::HandshakeMismatch {
                        expected: "classes >= 2 and input_dim >= 1".into(),
                        declared: describe(Some(classes), Some(input_dim)),
                    });
                }
                Ok((classes, input_dim))
            }
            Message::Error { msg, .. } => Err(OracleError::Remote(msg)),
            other => Err(OracleError::MalformedResponse(format!("expected ready, got {other:?}"))),
        }
    }

    fn classify(&mut self, batch: &[f64], count: usize, dim: usize, classes: usize) -> Result<Vec<usize>> {
        let id = self.next_id;
        self.next_id += 1;
        self.send(&Message::Classify {
            id,
            count,
            dim,
            data: batch.to_vec(),
        })?;
        match self.receive()? {
            Message::Labels { id: got, labels } => {
                if got != id {
                    self.broken = true;
                    return Err(OracleError::MalformedResponse(format!("response id {got} for request {id}")));
                }
                if labels.len() != count {
                    self.broken = true;
                    return Err(OracleError::MalformedResponse(format!(
                        "{} labels for {count} inputs",
                        labels.len()
                    )));
                }
                if let Some(l) = labels.iter().find(|&&l| l >= classes) {
                    return Err(OracleError::MalformedResponse(format!("label {l} outside [0, {classes})")));
                }
                Ok(labels)
            }
            Message::Error { msg, .. } => Err(OracleError::Remote(msg)),
            other => {
                self.broken = true;
                Err(OracleError::MalformedResponse(format!("expected labels, got {other:?}")))
            }
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if !self.broken {
            let _ = self.send(&Message::Bye);
        }
        if let Some(child) = self.child.as_mut() {
            // Closing stdin lets a well-behaved adapter exit on its own.
            self.writer = Box::new(std::io::sink());
            let deadline = Instant::now() + Duration::from_millis(500);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
        }
    }
}

fn connect_tcp(addr: &str, timeout: Duration) -> Result<TcpStream> {
    use std::net::ToSocketAddrs;
    let addrs = addr
        .to_socket_addrs()
        .map_err(|e| OracleError::Transport(format!("{addr}: {e}")))?;
    let mut last = None;
    for a in addrs {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(OracleError::Transport(match last {
        Some(e) => format!("{addr}: {e}"),
        None => format!("{addr}: no addresses"),
    }))
}

fn describe(classes: Option<usize>, dim: Option<usize>) -> String {
    let show = |v: Option<usize>| v.map_or_else(|| "any".to_string(), |v| v.to_string());
    format!("classes={} input_dim={}", show(classes), show(dim))
}

fn truncate(s: &str) -> String {
    let t = s.trim_end();
    if t.len() > 120 {
        let mut end = 120;
        while !t.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &t[..end])
    } else {
        t.to_string()
    }
}

struct Pool {
    idle: Vec<Connection>,
    open: usize,
}

/// A classifier living in another process, reached over the line protocol.
///
/// Connections are opened lazily up to `max_connections`; each carries at
/// most one outstanding request. A connection that saw a protocol or
/// transport error is discarded rather than reused.
pub struct ExternalOracle {
    endpoint: Endpoint,
    options: ExternalOptions,
    classes: usize,
    dim: usize,
    pool: Mutex<Pool>,
    available: Condvar,
}

impl ExternalOracle {
    /// Opens the first connection and validates the handshake.
    pub fn connect(endpoint: Endpoint, options: ExternalOptions) -> Result<Self> {
        let mut conn = Connection::open(&endpoint.transport, options.timeout)?;
        let (classes, dim) = conn.handshake(&endpoint)?;
        Ok(Self {
            endpoint,
            options: ExternalOptions {
                max_connections: options.max_connections.max(1),
                ..options
            },
            classes,
            dim,
            pool: Mutex::new(Pool {
                idle: vec![conn],
                open: 1,
            }),
            available: Condvar::new(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn checkout(&self) -> Result<Connection> {
        let mut pool = self.pool.lock().expect("pool lock poisoned");
        loop {
            if let Some(c) = pool.idle.pop() {
                return Ok(c);
            }
            if pool.open < self.options.max_connections {
                pool.open += 1;
                drop(pool);
                let opened = Connection::open(&self.endpoint.transport, self.options.timeout).and_then(|mut c| {
                    let declared = c.handshake(&self.endpoint)?;
                    if declared != (self.classes, self.dim) {
                        return Err(OracleError::HandshakeMismatch {
                            expected: describe(Some(self.classes), Some(self.dim)),
                            declared: describe(Some(declared.0), Some(declared.1)),
                        });
                    }
                    Ok(c)
                });
                if opened.is_err() {
                    self.release_slot();
                }
                return opened;
            }
            pool = self.available.wait(pool).expect("pool lock poisoned");
        }
    }

    fn release_slot(&self) {
        self.pool.lock().expect("pool lock poisoned").open -= 1;
        self.available.notify_one();
    }

    fn checkin(&self, conn: Connection) {
        if conn.broken {
            drop(conn);
            self.release_slot();
        } else {
            self.pool.lock().expect("pool lock poisoned").idle.push(conn);
            self.available.notify_one();
        }
    }
}

impl ClassifierOracle for ExternalOracle {
    fn num_classes(&self) -> usize {
        self.classes
    }
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn classify_batch(&self, batch: &[f64], count: usize) -> Result<Vec<usize>> {
        check_batch(batch, count, self.dim)?;
        if count == 0 {
            return Ok(Vec::new());
        }
        let mut conn = self.checkout()?;
        let out = conn.classify(batch, count, self.dim, self.classes);
        self.checkin(conn);
        out
    }
}
