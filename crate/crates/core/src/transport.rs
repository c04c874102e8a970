//! Pluggable HTTP GET transport shared by the harvester and the term lookup
//! client, with a live implementation and an on-disk record/replay pair so
//! that tests never touch the network.
//!
//! Replay directory layout: `index.tsv` with `status<TAB>body_file<TAB>url`
//! lines; each body file holds the raw response body.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

use crate::fsutil::{append_line, write_atomic};

pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);
pub const REPLAY_INDEX: &str = "index.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// The request never produced an HTTP response (DNS, connect, timeout...).
#[derive(Debug, Clone, Error)]
#[error("transport failure for {url}: {message}")]
pub struct TransportError {
    pub url: String,
    pub message: String,
}

pub trait Transport: Send + Sync {
    fn get(&self, url: &str, accept: &str) -> Result<HttpResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for &T {
    fn get(&self, url: &str, accept: &str) -> Result<HttpResponse, TransportError> {
        (**self).get(url, accept)
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn get(&self, url: &str, accept: &str) -> Result<HttpResponse, TransportError> {
        (**self).get(url, accept)
    }
}

/// Blocking HTTP client with a 30 s per-request timeout.
pub struct LiveTransport {
    agent: ureq::Agent,
}

impl Default for LiveTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl LiveTransport {
    pub fn new() -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(REQUEST_TIMEOUT))
            .http_status_as_error(false)
            .user_agent(concat!("tagbridge/", env!("CARGO_PKG_VERSION")))
            .build();
        Self { agent: config.into() }
    }
}

impl Transport for LiveTransport {
    fn get(&self, url: &str, accept: &str) -> Result<HttpResponse, TransportError> {
        let fail = |message: String| TransportError {
            url: url.to_string(),
            message,
        };
        let mut resp = self
            .agent
            .get(url)
            .header("Accept", accept)
            .call()
            .map_err(|e| fail(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| fail(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Serves canned responses keyed by exact URL; unknown URLs get a 404.
#[derive(Debug, Default)]
pub struct ReplayTransport {
    responses: HashMap<String, Result<HttpResponse, String>>,
    calls: Mutex<Vec<String>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    latency: Duration,
}

impl ReplayTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_response(mut self, url: impl Into<String>, resp: HttpResponse) -> Self {
        self.insert(url, resp);
        self
    }

    pub fn insert(&mut self, url: impl Into<String>, resp: HttpResponse) {
        self.responses.insert(url.into(), Ok(resp));
    }

    /// Makes `url` fail at the transport level (no HTTP response).
    pub fn insert_failure(&mut self, url: impl Into<String>, message: impl Into<String>) {
        self.responses.insert(url.into(), Err(message.into()));
    }

    /// Simulated per-request latency, useful for concurrency tests.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut this = Self::new();
        this.extend_from_dir(dir)?;
        Ok(this)
    }

    pub fn extend_from_dir(&mut self, dir: &Path) -> std::io::Result<()> {
        let index = fs::read_to_string(dir.join(REPLAY_INDEX))?;
        for (n, line) in index.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(status), Some(file), Some(url)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: expected status, file, url", REPLAY_INDEX, n + 1),
                ));
            };
            let status: u16 = status.parse().map_err(|_| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: bad status {status:?}", REPLAY_INDEX, n + 1),
                )
            })?;
            let body = if file == "-" {
                String::new()
            } else {
                fs::read_to_string(dir.join(file))?
            };
            self.insert(url, HttpResponse { status, body });
        }
        Ok(())
    }

    /// URLs requested so far, in order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    pub fn calls_matching(&self, needle: &str) -> usize {
        self.calls.lock().unwrap().iter().filter(|u| u.contains(needle)).count()
    }

    /// Highest number of concurrently executing `get` calls observed.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Transport for ReplayTransport {
    fn get(&self, url: &str, _accept: &str) -> Result<HttpResponse, TransportError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        self.calls.lock().unwrap().push(url.to_string());
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let out = match self.responses.get(url) {
            Some(Ok(r)) => Ok(r.clone()),
            Some(Err(m)) => Err(TransportError {
                url: url.to_string(),
                message: m.clone(),
            }),
            None => Ok(HttpResponse {
                status: 404,
                body: String::new(),
            }),
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

/// Forwards to an inner transport and writes every response into a replay
/// directory readable by [`ReplayTransport::load_dir`].
pub struct RecordingTransport<T> {
    inner: T,
    dir: PathBuf,
    counter: Mutex<usize>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let existing = fs::read_to_string(dir.join(REPLAY_INDEX))
            .map(|s| s.lines().count())
            .unwrap_or(0);
        Ok(Self {
            inner,
            dir,
            counter: Mutex::new(existing),
        })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn get(&self, url: &str, accept: &str) -> Result<HttpResponse, TransportError> {
        let resp = self.inner.get(url, accept)?;
        let mut n = self.counter.lock().unwrap();
        *n += 1;
        let file = format!("{:05}.body", *n);
        let io = |e: std::io::Error| TransportError {
            url: url.to_string(),
            message: format!("recording failed: {e}"),
        };
        write_atomic(&self.dir.join(&file), resp.body.as_bytes()).map_err(io)?;
        append_line(
            &self.dir.join(REPLAY_INDEX),
            &format!("{}\t{}\t{}", resp.status, file, url),
        )
        .map_err(io)?;
        Ok(resp)
    }
}
