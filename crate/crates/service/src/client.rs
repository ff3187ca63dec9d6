use std::time::Duration;

use adi_core::oracle::{ConfidenceVector, Oracle, OracleStats};
use adi_core::{Error, Result};
use ureq::Agent;

use crate::{decode_f64s, encode_f64s, CLIENT_HEADER};

const MAX_RETRIES: usize = 20;

/// Oracle backed by a remote classify service. Gradients are unavailable.
pub struct RemoteOracle {
    agent: Agent,
    endpoint: String,
    client_id: String,
    dim: usize,
    classes: usize,
    stats: OracleStats,
}

impl RemoteOracle {
    /// Connects and reads the service's `d` and `m`.
    pub fn connect(endpoint: &str) -> Result<Self> {
        Self::connect_as(endpoint, "adi", Duration::from_secs(10))
    }

    pub fn connect_as(endpoint: &str, client_id: &str, timeout: Duration) -> Result<Self> {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let mut response = agent
            .get(format!("{endpoint}/meta"))
            .call()
            .map_err(|e| Error::ConnectionFailure(e.to_string()))?;
        if response.status().as_u16() != 200 {
            return Err(Error::Protocol(format!("meta returned {}", response.status())));
        }
        let meta = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::ConnectionFailure(e.to_string()))?;
        let (dim, classes) = parse_meta(&meta)?;
        Ok(Self {
            agent,
            endpoint,
            client_id: client_id.to_string(),
            dim,
            classes,
            stats: OracleStats::new(),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn parse_meta(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::Protocol(format!("malformed meta response `{text}`"));
    let mut parts = text.split_whitespace();
    let d = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let m = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((d, m))
}

impl Oracle for RemoteOracle {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn classify(&self, x: &[f64]) -> Result<ConfidenceVector> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        self.stats.record();
        let payload = encode_f64s(x);
        for _ in 0..MAX_RETRIES {
            let mut response = self
                .agent
                .post(format!("{}/classify", self.endpoint))
                .header(CLIENT_HEADER, &self.client_id)
                .header("Content-Type", "application/octet-stream")
                .send(&payload[..])
                .map_err(|e| Error::ConnectionFailure(e.to_string()))?;
            let status = response.status().as_u16();
            if status == 429 {
                let wait = response
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.parse::<u64>().ok())
                    .unwrap_or(1);
                std::thread::sleep(Duration::from_secs(wait));
                continue;
            }
            let body = response
                .body_mut()
                .read_to_vec()
                .map_err(|e| Error::ConnectionFailure(e.to_string()))?;
            if status != 200 {
                return Err(Error::Protocol(format!(
                    "classify returned {status}: {}",
                    String::from_utf8_lossy(&body)
                )));
            }
            let probs = decode_f64s(&body)
                .filter(|p| p.len() == self.classes)
                .ok_or_else(|| {
                    Error::Protocol(format!(
                        "expected {} response bytes, got {}",
                        8 * self.classes,
                        body.len()
                    ))
                })?;
            return ConfidenceVector::new(probs);
        }
        Err(Error::Protocol(format!("still rate limited after {MAX_RETRIES} attempts")))
    }

    fn stats(&self) -> &OracleStats {
        &self.stats
    }
}
