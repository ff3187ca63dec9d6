//! Serving a target model over HTTP and attacking it across the wire.
//!
//! The service exposes two endpoints and nothing else:
//!
//! * `GET /meta` returns `"d m"`, the input dimension and class count.
//! * `POST /classify` takes `8·d` bytes of little-endian `f64` and returns
//!   `8·m` bytes of little-endian `f64` probabilities.
//!
//! Every classify request is appended to a CSV access log
//! (`timestamp_ms,client,bytes_in`). Clients identify themselves with the
//! `X-Client-Id` header; otherwise the peer IP is used.

mod client;
mod server;

pub use client::RemoteOracle;
pub use server::{serve, ServiceConfig, ServiceError, ServiceHandle};

pub(crate) const CLIENT_HEADER: &str = "X-Client-Id";

pub(crate) fn encode_f64s(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn decode_f64s(bytes: &[u8]) -> Option<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    )
}
