use std::time::Duration;

use reqwest::blocking::Client;

use super::wire::{BackendMeta, Op, WireRequest, WireResponse};
use super::{Role, Transport, TransportError};

/// Blocking HTTP transport for one endpoint base URL.
///
/// Must not be created or dropped on an async runtime thread.
pub struct HttpTransport {
    base_url: String,
    client: Client,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>) -> Result<Self, TransportError> {
        let client = Client::builder()
            .build()
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            client,
        })
    }

    fn classify(err: reqwest::Error) -> TransportError {
        if err.is_timeout() {
            TransportError::Timeout
        } else if err.is_connect() || err.is_request() {
            TransportError::Connect(err.to_string())
        } else {
            TransportError::Protocol(err.to_string())
        }
    }

    fn read<T: serde::de::DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T, TransportError> {
        let status = resp.status();
        let body = resp.text().map_err(Self::classify)?;
        if !status.is_success() {
            return Err(TransportError::Status {
                code: status.as_u16(),
                body,
            });
        }
        serde_json::from_str(&body).map_err(|e| TransportError::Protocol(format!("bad response body: {e}")))
    }
}

impl Transport for HttpTransport {
    fn meta(&self, _role: Role) -> Result<BackendMeta, TransportError> {
        let resp = self
            .client
            .get(format!("{}/v1/meta", self.base_url))
            .timeout(Duration::from_secs(30))
            .send()
            .map_err(Self::classify)?;
        Self::read(resp)
    }

    fn send(&self, op: Op, request: &WireRequest, timeout: Duration) -> Result<WireResponse, TransportError> {
        let resp = self
            .client
            .post(format!("{}/v1/{}", self.base_url, op.path()))
            .timeout(timeout)
            .json(request)
            .send()
            .map_err(Self::classify)?;
        Self::read(resp)
    }

    fn identity(&self, role: Role) -> String {
        format!("http:{}:{}", role.name(), self.base_url)
    }
}
