//! Newline-delimited JSON protocol for out-of-process base classifiers.
//!
//! ```text
//! → {"id":N,"clouds":[[[x,y,z],...],...]}
//! ← {"id":N,"labels":[k,...]}      or      {"id":N,"error":"msg"}
//! ```
//!
//! One request is in flight per connection; the response echoes the request
//! id and carries one label per cloud. A line that is not JSON at all, or has
//! no readable `id`, closes the connection.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, Label};
use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub clouds: Vec<Vec<Point>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Labels { id: u64, labels: Vec<u64> },
    Error { id: u64, error: String },
}

impl Response {
    pub fn id(&self) -> u64 {
        match self {
            Response::Labels { id, .. } | Response::Error { id, .. } => *id,
        }
    }
}

/// Encodes one frame, including the trailing newline.
pub fn encode_line<T: Serialize>(frame: &T) -> Result<String> {
    let mut s = serde_json::to_string(frame)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Per-batch response deadline on the client side.
    pub timeout: Duration,
    /// Longest accepted line, in bytes, excluding the newline.
    pub max_frame: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

/// Where an oracle lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// Serving: this process's stdin/stdout. Connecting: a child process
    /// started from the given shell command line.
    Stdio(Option<String>),
    Tcp(String),
}

impl FromStr for Transport {
    type Err = Error;

    /// Parses `stdio`, `stdio:CMD` or `tcp:HOST:PORT`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "stdio" {
            return Ok(Transport::Stdio(None));
        }
        if let Some(cmd) = s.strip_prefix("stdio:") {
            return Ok(Transport::Stdio(Some(cmd.to_string())));
        }
        if let Some(addr) = s.strip_prefix("tcp:") {
            return Ok(Transport::Tcp(addr.to_string()));
        }
        Err(Error::InvalidArgument(format!(
            "transport must be `stdio`, `stdio:CMD` or `tcp:HOST:PORT`, got `{s}`"
        )))
    }
}

/// Reads one newline-terminated frame. `Ok(None)` on clean EOF.
fn read_frame<R: BufRead>(reader: &mut R, max_frame: usize) -> Result<Option<String>> {
    let mut buf = Vec::new();
    let limit = max_frame as u64 + 1;
    let read = reader.take(limit).read_until(b'\n', &mut buf)?;
    if read == 0 {
        return Ok(None);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
    } else if buf.len() > max_frame {
        return Err(Error::Protocol(format!("frame exceeds {max_frame} bytes")));
    }
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| Error::Protocol("frame is not valid UTF-8".into()))
}

fn handle_request<C: Classifier + ?Sized>(classifier: &C, line: &str) -> Result<Response> {
    let request: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            let value: serde_json::Value = serde_json::from_str(line)
                .map_err(|_| Error::Protocol(format!("unparsable frame: {e}")))?;
            let id = value
                .get("id")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::Protocol(format!("frame without a usable id: {e}")))?;
            return Ok(Response::Error {
                id,
                error: format!("malformed request: {e}"),
            });
        }
    };
    let id = request.id;
    let clouds: Result<Vec<PointCloud>> = request.clouds.into_iter().map(PointCloud::new).collect();
    let outcome = clouds.and_then(|c| classifier.classify_batch(&c));
    Ok(match outcome {
        Ok(labels) => Response::Labels {
            id,
            labels: labels.into_iter().map(|l| l as u64).collect(),
        },
        Err(e) => Response::Error {
            id,
            error: e.to_string(),
        },
    })
}

/// Answers frames from `reader` on `writer` until EOF.
///
/// Returns `Ok(())` on clean EOF and an error when the peer sends something
/// that cannot be answered (no parsable id, oversized frame, bad UTF-8).
pub fn serve<C, R, W>(
    classifier: &C,
    mut reader: R,
    mut writer: W,
    config: &OracleConfig,
) -> Result<()>
where
    C: Classifier + ?Sized,
    R: BufRead,
    W: Write,
{
    while let Some(line) = read_frame(&mut reader, config.max_frame)? {
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_request(classifier, &line)?;
        writer.write_all(encode_line(&response)?.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Serves this process's stdin/stdout.
pub fn serve_stdio<C: Classifier + ?Sized>(classifier: &C, config: &OracleConfig) -> Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve(classifier, stdin.lock(), stdout.lock(), config)
}

/// A TCP oracle server running on a background thread; each accepted
/// connection gets its own handler thread.
pub struct TcpOracleServer {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<thread::JoinHandle<()>>,
}

impl TcpOracleServer {
    pub fn spawn(
        classifier: Arc<dyn Classifier>,
        addr: impl ToSocketAddrs,
        config: OracleConfig,
    ) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = Arc::clone(&stop);
        let accept_thread = thread::spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let classifier = Arc::clone(&classifier);
                thread::spawn(move || {
                    let _ = serve_connection(&*classifier, stream, &config);
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends (it only ends via [`Self::shutdown`]).
    pub fn join(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TcpOracleServer {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop_accepting();
        }
    }
}

fn serve_connection<C: Classifier + ?Sized>(
    classifier: &C,
    stream: TcpStream,
    config: &OracleConfig,
) -> Result<()> {
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    let result = serve(classifier, reader, io::BufWriter::new(&stream), config);
    let _ = stream.shutdown(Shutdown::Both);
    result
}

struct Connection {
    writer: Box<dyn Write + Send>,
    frames: Receiver<Result<String>>,
    next_id: u64,
    tcp: Option<TcpStream>,
    child: Option<Child>,
    broken: bool,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(s) = &self.tcp {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A classifier answered by a remote oracle. Queries are serialized: one
/// frame per batch, one batch in flight.
pub struct OracleClient {
    conn: Mutex<Connection>,
    config: OracleConfig,
}

fn spawn_reader<R: BufRead + Send + 'static>(
    mut reader: R,
    max_frame: usize,
) -> Receiver<Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || loop {
        let frame = match read_frame(&mut reader, max_frame) {
            Ok(Some(line)) => Ok(line),
            Ok(None) => Err(Error::Protocol("oracle closed the connection".into())),
            Err(e) => Err(e),
        };
        let done = frame.is_err();
        if tx.send(frame).is_err() || done {
            break;
        }
    });
    rx
}

impl OracleClient {
    pub fn connect(transport: &Transport, config: OracleConfig) -> Result<Self> {
        match transport {
            Transport::Tcp(addr) => Self::connect_tcp(addr.as_str(), config),
            Transport::Stdio(Some(cmd)) => Self::spawn_command(cmd, config),
            Transport::Stdio(None) => Err(Error::InvalidArgument(
                "connecting over stdio needs a command (`stdio:CMD`)".into(),
            )),
        }
    }

    pub fn connect_tcp(addr: impl ToSocketAddrs, config: OracleConfig) -> Result<Self> {
        let addrs: Vec<_> = addr.to_socket_addrs()?.collect();
        let mut last_err = None;
        let mut stream = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, config.timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        let stream = match stream {
            Some(s) => s,
            None => {
                return Err(last_err
                    .map(Error::Io)
                    .unwrap_or_else(|| Error::Protocol("no address to connect to".into())))
            }
        };
        stream.set_nodelay(true)?;
        let frames = spawn_reader(BufReader::new(stream.try_clone()?), config.max_frame);
        Ok(Self {
            conn: Mutex::new(Connection {
                writer: Box::new(stream.try_clone()?),
                frames,
                next_id: 0,
                tcp: Some(stream),
                child: None,
                broken: false,
            }),
            config,
        })
    }

    /// Starts `cmd` through the shell and talks to it over its stdin/stdout.
    pub fn spawn_command(cmd: &str, config: OracleConfig) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let frames = spawn_reader(BufReader::new(stdout), config.max_frame);
        Ok(Self {
            conn: Mutex::new(Connection {
                writer: Box::new(stdin),
                frames,
                next_id: 0,
                tcp: None,
                child: Some(child),
                broken: false,
            }),
            config,
        })
    }

    fn round_trip(&self, clouds: &[PointCloud]) -> Result<Vec<Label>> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| Error::Protocol("oracle connection poisoned".into()))?;
        if conn.broken {
            return Err(Error::Protocol("oracle connection is unusable".into()));
        }
        let id = conn.next_id;
        conn.next_id += 1;
        let request = Request {
            id,
            clouds: clouds.iter().map(|c| c.points().to_vec()).collect(),
        };
        let line = encode_line(&request)?;
        let sent = conn
            .writer
            .write_all(line.as_bytes())
            .and_then(|_| conn.writer.flush());
        if let Err(e) = sent {
            conn.broken = true;
            return Err(e.into());
        }
        let frame = match conn.frames.recv_timeout(self.config.timeout) {
            Ok(frame) => frame,
            Err(RecvTimeoutError::Timeout) => {
                conn.broken = true;
                return Err(Error::Timeout(self.config.timeout.as_secs_f64()));
            }
            Err(RecvTimeoutError::Disconnected) => {
                conn.broken = true;
                return Err(Error::Protocol("oracle reader stopped".into()));
            }
        };
        let frame = frame.inspect_err(|_| conn.broken = true)?;
        let response: Response = serde_json::from_str(&frame).map_err(|e| {
            conn.broken = true;
            Error::Protocol(format!("bad response frame: {e}"))
        })?;
        if response.id() != id {
            conn.broken = true;
            return Err(Error::Protocol(format!(
                "response id {} does not match request id {id}",
                response.id()
            )));
        }
        match response {
            Response::Error { error, .. } => Err(Error::Classifier(error)),
            Response::Labels { labels, .. } => {
                if labels.len() != clouds.len() {
                    return Err(Error::Protocol(format!(
                        "sent {} clouds, received {} labels",
                        clouds.len(),
                        labels.len()
                    )));
                }
                Ok(labels.into_iter().map(|l| l as Label).collect())
            }
        }
    }
}

impl Classifier for OracleClient {
    fn classify_batch(&self, clouds: &[PointCloud]) -> Result<Vec<Label>> {
        if clouds.is_empty() {
            return Ok(Vec::new());
        }
        self.round_trip(clouds)
    }

    fn is_serial(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ConstantClassifier;

    fn run(input: &str) -> (Result<()>, String) {
        let mut out = Vec::new();
        let r = serve(
            &ConstantClassifier(3),
            input.as_bytes(),
            &mut out,
            &OracleConfig::default(),
        );
        (r, String::from_utf8(out).unwrap())
    }

    #[test]
    fn request_encoding_is_exact() {
        let req = Request {
            id: 7,
            clouds: vec![
                vec![[0.5, -1.0, 2.25]],
                vec![[0.0, 0.0, 1e-3], [1.0, 2.0, 3.0]],
            ],
        };
        assert_eq!(
            encode_line(&req).unwrap(),
            "{\"id\":7,\"clouds\":[[[0.5,-1.0,2.25]],[[0.0,0.0,0.001],[1.0,2.0,3.0]]]}\n"
        );
        let resp = Response::Labels {
            id: 7,
            labels: vec![1, 0],
        };
        assert_eq!(encode_line(&resp).unwrap(), "{\"id\":7,\"labels\":[1,0]}\n");
        let err = Response::Error {
            id: 7,
            error: "boom".into(),
        };
        assert_eq!(
            encode_line(&err).unwrap(),
            "{\"id\":7,\"error\":\"boom\"}\n"
        );
    }

    #[test]
    fn answers_two_clouds() {
        let (r, out) = run("{\"id\":4,\"clouds\":[[[0,0,0]],[[1,1,1],[2,2,2]]]}\n");
        r.unwrap();
        assert_eq!(out, "{\"id\":4,\"labels\":[3,3]}\n");
    }

    #[test]
    fn malformed_with_id_gets_error_frame() {
        let (r, out) = run("{\"id\":9,\"clouds\":\"nope\"}\n{\"id\":10,\"clouds\":[]}\n");
        r.unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert!(lines[0].starts_with("{\"id\":9,\"error\":"));
        assert_eq!(lines[1], "{\"id\":10,\"labels\":[]}");
    }

    #[test]
    fn invalid_cloud_gets_error_frame() {
        let (r, out) = run("{\"id\":2,\"clouds\":[[]]}\n");
        r.unwrap();
        assert!(out.starts_with("{\"id\":2,\"error\":"));
    }

    #[test]
    fn garbage_line_disconnects() {
        let (r, out) = run("this is not json\n{\"id\":1,\"clouds\":[]}\n");
        assert!(matches!(r, Err(Error::Protocol(_))));
        assert!(out.is_empty());
    }

    #[test]
    fn oversized_frame_is_rejected() {
        let mut out = Vec::new();
        let config = OracleConfig {
            max_frame: 16,
            ..OracleConfig::default()
        };
        let r = serve(
            &ConstantClassifier(0),
            "{\"id\":1,\"clouds\":[[[0,0,0]]]}\n".as_bytes(),
            &mut out,
            &config,
        );
        assert!(matches!(r, Err(Error::Protocol(_))));
    }

    #[test]
    fn transports_parse() {
        assert_eq!(
            "stdio".parse::<Transport>().unwrap(),
            Transport::Stdio(None)
        );
        assert_eq!(
            "stdio:python3 adapter.py --stdio"
                .parse::<Transport>()
                .unwrap(),
            Transport::Stdio(Some("python3 adapter.py --stdio".into()))
        );
        assert_eq!(
            "tcp:127.0.0.1:9000".parse::<Transport>().unwrap(),
            Transport::Tcp("127.0.0.1:9000".into())
        );
        assert!("udp:1".parse::<Transport>().is_err());
    }
}
