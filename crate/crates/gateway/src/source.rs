//! The data-source contract: what the gateway needs from a local SCADA node,
//! whether it runs in-process or behind HTTP.

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use cimgw_core::mapping::ManifestEntry;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadRequest {
    pub tags: Vec<String>,
}

/// One tag's answer: a literal with the source timestamp, or an error marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reading {
    Value { value: String, timestamp_ms: u64 },
    Error { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadResponse {
    /// Source clock when the read was served.
    pub time_ms: u64,
    pub readings: BTreeMap<String, Reading>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteRequest {
    pub tag: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteAck {
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl WriteAck {
    pub fn accepted() -> Self {
        WriteAck {
            accepted: true,
            reason: None,
        }
    }

    pub fn rejected(reason: impl Into<String>) -> Self {
        WriteAck {
            accepted: false,
            reason: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum SourceError {
    #[error("source unreachable: {0}")]
    Unreachable(String),
    #[error("source protocol error: {0}")]
    Protocol(String),
}

#[async_trait]
pub trait DataSource: Send + Sync + 'static {
    /// Current CIM/XML/RDF topology bytes.
    async fn topology(&self) -> Result<Vec<u8>, SourceError>;
    async fn manifest(&self) -> Result<Vec<ManifestEntry>, SourceError>;
    async fn read(&self, tags: &[String]) -> Result<ReadResponse, SourceError>;
    async fn write(&self, tag: &str, value: &str) -> Result<WriteAck, SourceError>;
}

/// Client for a node speaking the wire form of the contract.
#[derive(Debug, Clone)]
pub struct HttpSource {
    base: String,
    client: reqwest::Client,
}

impl HttpSource {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, SourceError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| SourceError::Protocol(e.to_string()))?;
        Ok(HttpSource {
            base: base_url.trim_end_matches('/').to_string(),
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn send(&self, req: reqwest::RequestBuilder) -> Result<reqwest::Response, SourceError> {
        let resp = req.send().await.map_err(transport)?;
        if resp.status() == reqwest::StatusCode::SERVICE_UNAVAILABLE {
            return Err(SourceError::Unreachable("node reports unavailable".into()));
        }
        Ok(resp)
    }
}

fn transport(e: reqwest::Error) -> SourceError {
    if e.is_connect() || e.is_timeout() || e.is_request() {
        SourceError::Unreachable(e.to_string())
    } else {
        SourceError::Protocol(e.to_string())
    }
}

fn expect_ok(resp: reqwest::Response) -> Result<reqwest::Response, SourceError> {
    if resp.status().is_success() {
        Ok(resp)
    } else {
        Err(SourceError::Protocol(format!(
            "unexpected status {}",
            resp.status()
        )))
    }
}

#[async_trait]
impl DataSource for HttpSource {
    async fn topology(&self) -> Result<Vec<u8>, SourceError> {
        let resp = expect_ok(self.send(self.client.get(self.url("/topology"))).await?)?;
        Ok(resp.bytes().await.map_err(transport)?.to_vec())
    }

    async fn manifest(&self) -> Result<Vec<ManifestEntry>, SourceError> {
        let resp = expect_ok(self.send(self.client.get(self.url("/manifest"))).await?)?;
        resp.json()
            .await
            .map_err(|e| SourceError::Protocol(e.to_string()))
    }

    async fn read(&self, tags: &[String]) -> Result<ReadResponse, SourceError> {
        let body = ReadRequest {
            tags: tags.to_vec(),
        };
        let resp = expect_ok(
            self.send(self.client.post(self.url("/read")).json(&body))
                .await?,
        )?;
        resp.json()
            .await
            .map_err(|e| SourceError::Protocol(e.to_string()))
    }

    async fn write(&self, tag: &str, value: &str) -> Result<WriteAck, SourceError> {
        let body = WriteRequest {
            tag: tag.to_string(),
            value: value.to_string(),
        };
        let resp = self
            .send(self.client.post(self.url("/write")).json(&body))
            .await?;
        // A rejection is a normal answer carried with 409.
        if !resp.status().is_success() && resp.status() != reqwest::StatusCode::CONFLICT {
            return Err(SourceError::Protocol(format!(
                "unexpected status {}",
                resp.status()
            )));
        }
        resp.json()
            .await
            .map_err(|e| SourceError::Protocol(e.to_string()))
    }
}
