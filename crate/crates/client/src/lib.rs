//! Thin blocking client for the `/v1/` API.

use std::time::Duration;

use reqwest::blocking::{RequestBuilder, Response};
use serde::de::DeserializeOwned;

use rewardtree_core::agent::EpisodeTrace;
use rewardtree_core::api::{CreateRun, ErrorBody, LabelAccepted, LabelRequest, PairResponse, RunSummary};
use rewardtree_core::orchestrator::{ReportCard, TimelineExport};
use rewardtree_core::tree::{RectangleProjection, TreeExport};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{status}: {message}")]
    Api { status: u16, message: String },
}

impl ClientError {
    /// HTTP status of an API rejection.
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status().map(|s| s.as_u16()),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()?;
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            http,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/v1/{path}", self.base)
    }

    fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T> {
        let res: Response = req.send()?;
        let status = res.status();
        if status.is_success() {
            return Ok(res.json()?);
        }
        let text = res.text().unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map_or(text, |b| b.error);
        Err(ClientError::Api {
            status: status.as_u16(),
            message,
        })
    }

    pub fn runs(&self) -> Result<Vec<RunSummary>> {
        self.send(self.http.get(self.url("runs")))
    }

    pub fn create_run(&self, req: &CreateRun) -> Result<RunSummary> {
        self.send(self.http.post(self.url("runs")).json(req))
    }

    pub fn run(&self, id: &str) -> Result<RunSummary> {
        self.send(self.http.get(self.url(&format!("runs/{id}"))))
    }

    pub fn pair(&self, id: &str) -> Result<PairResponse> {
        self.send(self.http.get(self.url(&format!("runs/{id}/pair"))))
    }

    pub fn label(&self, id: &str, nonce: &str, y: f64) -> Result<LabelAccepted> {
        let body = LabelRequest {
            nonce: nonce.to_string(),
            y,
        };
        self.send(self.http.post(self.url(&format!("runs/{id}/label"))).json(&body))
    }

    pub fn tree(&self, id: &str, version: Option<u64>) -> Result<TreeExport> {
        let mut req = self.http.get(self.url(&format!("runs/{id}/tree")));
        if let Some(v) = version {
            req = req.query(&[("version", v)]);
        }
        self.send(req)
    }

    pub fn timeline(&self, id: &str) -> Result<TimelineExport> {
        self.send(self.http.get(self.url(&format!("runs/{id}/timeline"))))
    }

    pub fn traces(&self, id: &str) -> Result<Vec<EpisodeTrace>> {
        self.send(self.http.get(self.url(&format!("runs/{id}/traces"))))
    }

    /// Dimensions by index or name.
    pub fn rectangles(&self, id: &str, d1: &str, d2: &str) -> Result<RectangleProjection> {
        let req = self
            .http
            .get(self.url(&format!("runs/{id}/rectangles")))
            .query(&[("d1", d1), ("d2", d2)]);
        self.send(req)
    }

    pub fn report(&self, id: &str, episode: usize) -> Result<ReportCard> {
        self.send(self.http.get(self.url(&format!("runs/{id}/report/{episode}"))))
    }

    /// Polls the pending pair until the run is no longer paused.
    pub fn wait_pair(&self, id: &str, poll: Duration, attempts: usize) -> Result<PairResponse> {
        for _ in 0..attempts {
            match self.pair(id)? {
                PairResponse::Paused => std::thread::sleep(poll),
                other => return Ok(other),
            }
        }
        Ok(PairResponse::Paused)
    }
}
