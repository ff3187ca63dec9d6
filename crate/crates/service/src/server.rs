use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use adi_core::oracle::TargetModel;
use tiny_http::{Header, Method, Request, Response, Server};

use crate::{decode_f64s, encode_f64s, CLIENT_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {reason}")]
    BindFailure { addr: String, reason: String },

    #[error("cannot load model {path}: {source}")]
    ModelLoadFailure {
        path: PathBuf,
        #[source]
        source: adi_core::Error,
    },

    #[error("cannot open access log {path}: {source}")]
    AccessLog {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// `host:port`; port 0 picks a free port.
    pub bind: String,
    pub model: PathBuf,
    /// Defaults to `access_log.csv` next to the model file.
    pub access_log: Option<PathBuf>,
    /// Requests per second across all clients; unlimited when `None`.
    pub rate_limit: Option<u32>,
    pub workers: usize,
}

impl ServiceConfig {
    pub fn new(bind: impl Into<String>, model: impl Into<PathBuf>) -> Self {
        Self {
            bind: bind.into(),
            model: model.into(),
            access_log: None,
            rate_limit: None,
            workers: 8,
        }
    }

    fn log_path(&self) -> PathBuf {
        self.access_log.clone().unwrap_or_else(|| {
            self.model
                .parent()
                .map(|p| p.join("access_log.csv"))
                .unwrap_or_else(|| PathBuf::from("access_log.csv"))
        })
    }
}

struct AccessLog {
    out: Mutex<BufWriter<File>>,
    count: AtomicU64,
}

impl AccessLog {
    fn record(&self, client: &str, bytes_in: usize) {
        let ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis());
        let client = client.replace([',', '\n', '\r', '"'], "_");
        let mut out = self.out.lock().expect("access log lock poisoned");
        // A failed log write must not take the service down.
        let _ = writeln!(out, "{ms},{client},{bytes_in}").and_then(|_| out.flush());
        self.count.fetch_add(1, Ordering::SeqCst);
    }
}

/// Token bucket refilled continuously at `rate` tokens per second.
struct RateLimiter {
    rate: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    fn new(rate: u32) -> Self {
        Self {
            rate: rate as f64,
            state: Mutex::new((rate as f64, Instant::now())),
        }
    }

    /// `None` when admitted, otherwise seconds to wait.
    fn admit(&self) -> Option<u64> {
        let mut state = self.state.lock().expect("rate limiter lock poisoned");
        let now = Instant::now();
        let (tokens, last) = &mut *state;
        *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate).min(self.rate);
        *last = now;
        if *tokens >= 1.0 {
            *tokens -= 1.0;
            None
        } else {
            Some((((1.0 - *tokens) / self.rate).ceil() as u64).max(1))
        }
    }
}

struct Shared {
    model: TargetModel,
    log: AccessLog,
    limiter: Option<RateLimiter>,
}

/// A running service; dropping it stops the workers.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Classify requests logged so far.
    pub fn access_count(&self) -> u64 {
        self.shared.log.count.load(Ordering::SeqCst)
    }

    /// Blocks until the service is stopped from another thread.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

/// Loads the model, binds, and starts the worker threads.
pub fn serve(config: &ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    let model = TargetModel::load(&config.model).map_err(|source| ServiceError::ModelLoadFailure {
        path: config.model.clone(),
        source,
    })?;
    let log_path = config.log_path();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|source| ServiceError::AccessLog {
            path: log_path.clone(),
            source,
        })?;
    let server = Server::http(&config.bind).map_err(|e| ServiceError::BindFailure {
        addr: config.bind.clone(),
        reason: e.to_string(),
    })?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| ServiceError::BindFailure {
            addr: config.bind.clone(),
            reason: "not an IP listener".into(),
        })?;

    let server = Arc::new(server);
    let shared = Arc::new(Shared {
        model,
        log: AccessLog {
            out: Mutex::new(BufWriter::new(file)),
            count: AtomicU64::new(0),
        },
        limiter: config.rate_limit.map(RateLimiter::new),
    });
    let stop = Arc::new(AtomicBool::new(false));
    let workers = (0..config.workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let shared = Arc::clone(&shared);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(request)) => handle(&shared, request),
                        Ok(None) => {}
                        Err(_) => break,
                    }
                }
            })
        })
        .collect();
    Ok(ServiceHandle {
        addr,
        stop,
        shared,
        workers,
    })
}

fn text(status: u16, body: impl Into<String>) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body.into()).with_status_code(status)
}

fn handle(shared: &Shared, mut request: Request) {
    let d = shared.model.input_dim();
    let m = shared.model.num_classes();
    let response = match (request.method(), request.url()) {
        (Method::Get, "/meta") => text(200, format!("{d} {m}")),
        (Method::Post, "/classify") => {
            if let Some(wait) = shared.limiter.as_ref().and_then(RateLimiter::admit) {
                let header = Header::from_bytes("Retry-After", wait.to_string()).expect("valid header");
                let _ = request.respond(text(429, "rate limit exceeded").with_header(header));
                return;
            }
            let client = request
                .headers()
                .iter()
                .find(|h| h.field.equiv(CLIENT_HEADER))
                .map(|h| h.value.to_string())
                .or_else(|| request.remote_addr().map(|a| a.ip().to_string()))
                .unwrap_or_else(|| "unknown".into());
            let mut body = Vec::with_capacity(8 * d);
            let read = request
                .as_reader()
                .take(8 * d as u64 + 1)
                .read_to_end(&mut body);
            shared.log.record(&client, body.len());
            match read {
                Err(e) => text(400, format!("cannot read body: {e}")),
                Ok(_) if body.len() != 8 * d => {
                    text(400, format!("expected {} bytes, got {}", 8 * d, body.len()))
                }
                Ok(_) => {
                    let x = decode_f64s(&body).expect("length checked");
                    match shared.model.probabilities(&x) {
                        Ok(p) => Response::from_data(encode_f64s(&p)).with_header(
                            Header::from_bytes("Content-Type", "application/octet-stream")
                                .expect("valid header"),
                        ),
                        Err(e) => text(400, e.to_string()),
                    }
                }
            }
        }
        _ => text(404, "not found"),
    };
    let _ = request.respond(response);
}
