use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LogitsProvider, LogitsResponse, MaskQuery, PromptContext};
use crate::error::ProviderError;

pub const REMOTE_URL_ENV: &str = "DIFFURANK_REMOTE_URL";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Serialize)]
struct WireDoc<'a> {
    label: &'a str,
    text: &'a str,
}

#[derive(Debug, Serialize)]
struct WireFilled<'a> {
    pos: usize,
    label: &'a str,
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    template_id: &'a str,
    query_text: &'a str,
    docs: Vec<WireDoc<'a>>,
    masked_positions: &'a [usize],
    filled: Vec<WireFilled<'a>>,
    allowed_tokens: &'a [String],
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    rows: Vec<Vec<f64>>,
}

/// Client for a mask-predictor server exposing `POST /v1/mask_logits`.
///
/// Rows on the wire are probabilities, not logits.
pub struct RemoteProvider {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        RemoteProvider {
            endpoint: format!("{}/v1/mask_logits", base_url.trim_end_matches('/')),
            agent,
        }
    }

    /// Reads the base URL from `DIFFURANK_REMOTE_URL`.
    pub fn from_env(timeout: Duration) -> Result<Self, ProviderError> {
        let url = std::env::var(REMOTE_URL_ENV)
            .map_err(|_| ProviderError::Transport(format!("{REMOTE_URL_ENV} is not set")))?;
        Ok(Self::new(&url, timeout))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl LogitsProvider for RemoteProvider {
    fn provide(
        &self,
        ctx: &PromptContext,
        mq: &MaskQuery,
    ) -> Result<LogitsResponse, ProviderError> {
        mq.validate(ctx)?;
        let body = WireRequest {
            template_id: &ctx.template_id,
            query_text: &ctx.query.text,
            docs: ctx
                .tagged_docs
                .iter()
                .map(|t| WireDoc {
                    label: &t.label,
                    text: &t.doc.text,
                })
                .collect(),
            masked_positions: &mq.masked_positions,
            filled: mq
                .filled_slots
                .iter()
                .map(|(pos, label)| WireFilled { pos: *pos, label })
                .collect(),
            allowed_tokens: &mq.allowed_tokens,
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let wire: WireResponse =
            serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        Ok(LogitsResponse::checked(wire.rows, mq)?.with_meta("backend", "remote"))
    }
}
