//! A tiny HTTP/1.1 GET client and a fixture file server, enough to exercise
//! the MUD fetch path in tests and demos without a real web stack.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::ManagerError;

/// Issues a plain HTTP GET and returns the response body.
pub fn http_get(url: &str, timeout: Duration) -> Result<String, ManagerError> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| ManagerError::Scheme { url: url.to_string() })?;
    let (host_port, path) = match rest.split_once('/') {
        Some((hp, p)) => (hp, format!("/{p}")),
        None => (rest, "/".to_string()),
    };
    let authority = if host_port.contains(':') {
        host_port.to_string()
    } else {
        format!("{host_port}:80")
    };

    let addr: SocketAddr = authority
        .parse()
        .or_else(|_| {
            std::net::ToSocketAddrs::to_socket_addrs(&authority)
                .map_err(|e| ManagerError::Fetch {
                    url: url.to_string(),
                    detail: format!("cannot resolve {authority}: {e}"),
                })
                .and_then(|mut it| {
                    it.next().ok_or_else(|| ManagerError::Fetch {
                        url: url.to_string(),
                        detail: format!("no address for {authority}"),
                    })
                })
        })?;

    let timeout_err = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::WouldBlock || e.kind() == std::io::ErrorKind::TimedOut {
            ManagerError::Timeout { url: url.to_string() }
        } else {
            ManagerError::Fetch {
                url: url.to_string(),
                detail: e.to_string(),
            }
        }
    };

    let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(timeout_err)?;
    stream.set_read_timeout(Some(timeout)).map_err(timeout_err)?;
    stream.set_write_timeout(Some(timeout)).map_err(timeout_err)?;
    write!(
        stream,
        "GET {path} HTTP/1.1\r\nHost: {host_port}\r\nConnection: close\r\n\r\n"
    )
    .map_err(timeout_err)?;

    let mut response = Vec::new();
    stream.read_to_end(&mut response).map_err(timeout_err)?;

    let header_end = response
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or_else(|| ManagerError::Fetch {
            url: url.to_string(),
            detail: "malformed HTTP response".to_string(),
        })?;
    let head = String::from_utf8_lossy(&response[..header_end]);
    let status_line = head.lines().next().unwrap_or_default();
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ManagerError::Fetch {
            url: url.to_string(),
            detail: format!("bad status line '{status_line}'"),
        })?;
    if status != 200 {
        return Err(ManagerError::Fetch {
            url: url.to_string(),
            detail: format!("HTTP status {status}"),
        });
    }
    String::from_utf8(response[header_end + 4..].to_vec()).map_err(|_| ManagerError::Fetch {
        url: url.to_string(),
        detail: "response body is not UTF-8".to_string(),
    })
}

/// Serves the files of one directory over HTTP GET, JSON content type.
/// Connections are handled on short-lived threads; the request counter lets
/// tests assert cache hits without instrumenting the network.
pub struct FixtureServer {
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl FixtureServer {
    /// Binds 127.0.0.1 on the given port (0 picks an ephemeral one) and
    /// starts serving `root`.
    pub fn start(root: impl Into<PathBuf>, port: u16) -> std::io::Result<FixtureServer> {
        let root = root.into();
        let listener = TcpListener::bind(("127.0.0.1", port))?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));

        let accept_thread = {
            let requests = Arc::clone(&requests);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let root = root.clone();
                    let requests = Arc::clone(&requests);
                    std::thread::spawn(move || {
                        let _ = serve_one(stream, &root, &requests);
                    });
                }
            })
        };

        Ok(FixtureServer {
            addr,
            requests: Arc::clone(&requests),
            stop,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// URL for a file under the served directory.
    pub fn url_for(&self, name: &str) -> String {
        format!("http://{}/{name}", self.addr)
    }

    /// Number of requests handled so far.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop so it observes the stop flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

fn serve_one(
    stream: TcpStream,
    root: &Path,
    requests: &AtomicUsize,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    if request_line.trim().is_empty() {
        return Ok(()); // wake-up connection from Drop
    }
    // Drain headers.
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
    }
    requests.fetch_add(1, Ordering::SeqCst);

    let mut stream = reader.into_inner();
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default();
    let raw_path = parts.next().unwrap_or("/");

    if method != "GET" {
        return respond(&mut stream, 405, "method not allowed", b"");
    }
    let rel = raw_path.trim_start_matches('/');
    let traversal = Path::new(rel)
        .components()
        .any(|c| !matches!(c, Component::Normal(_)));
    if traversal {
        return respond(&mut stream, 403, "forbidden", b"");
    }
    let candidate = root.join(rel);
    match std::fs::read(&candidate) {
        Ok(body) => respond(&mut stream, 200, "ok", &body),
        Err(_) => respond(&mut stream, 404, "not found", b""),
    }
}

fn respond(stream: &mut TcpStream, status: u16, phrase: &str, body: &[u8]) -> std::io::Result<()> {
    write!(
        stream,
        "HTTP/1.1 {status} {phrase}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(body)?;
    stream.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serves_files_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.json"), br#"{"k": 1}"#).unwrap();
        let server = FixtureServer::start(dir.path(), 0).unwrap();

        let body = http_get(&server.url_for("a.json"), Duration::from_secs(5)).unwrap();
        assert_eq!(body, r#"{"k": 1}"#);
        assert_eq!(server.request_count(), 1);
    }

    #[test]
    fn missing_files_yield_a_status_error() {
        let dir = tempfile::tempdir().unwrap();
        let server = FixtureServer::start(dir.path(), 0).unwrap();
        match http_get(&server.url_for("nope.json"), Duration::from_secs(5)) {
            Err(ManagerError::Fetch { detail, .. }) => assert!(detail.contains("404")),
            other => panic!("expected 404 fetch error, got {other:?}"),
        }
    }

    #[test]
    fn parent_traversal_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.json"), b"x").unwrap();
        let server = FixtureServer::start(dir.path(), 0).unwrap();
        let url = format!("http://{}/../a.json", server.addr());
        assert!(http_get(&url, Duration::from_secs(5)).is_err());
    }

    #[test]
    fn concurrent_requests_are_all_served() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.json"), b"abc").unwrap();
        let server = FixtureServer::start(dir.path(), 0).unwrap();
        let url = server.url_for("a.json");
        std::thread::scope(|s| {
            for _ in 0..8 {
                let url = url.clone();
                s.spawn(move || {
                    assert_eq!(http_get(&url, Duration::from_secs(5)).unwrap(), "abc");
                });
            }
        });
        assert_eq!(server.request_count(), 8);
    }
}
