//! Blocking client for OpenAI-compatible endpoints.
//!
//! * `POST {base}/chat/completions` with `{model, messages, temperature, max_tokens, seed?}`
//! * `POST {base}/embeddings` with `{model, input}`
//! * `POST {base}/score` with `{model, kind, prompt, responses}` returning
//!   `{"scores": [..]}`; pairwise scorers receive two responses and return the
//!   preference of the first, scalar scorers receive one.
//!
//! Transport failures, HTTP 429 and 5xx are retried with exponential backoff.
//! Every exchange can be appended to a newline-delimited log for replay.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_candidates, check_generate, check_kind, BackendError, Completion, GenerationParams,
    ModelBackend, ModelRef, ScoreKind, ScoreResult, Scorer,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub log_path: Option<PathBuf>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 120,
            max_retries: 3,
            backoff_base_ms: 500,
            log_path: None,
        }
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    config: HttpConfig,
    api_key: Option<String>,
    log: Option<Mutex<File>>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok())
            .filter(|k| !k.is_empty());
        let log = match &config.log_path {
            Some(p) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| BackendError::Transport {
                        attempts: 0,
                        message: format!("cannot open log {}: {e}", p.display()),
                    })?,
            )),
            None => None,
        };
        Ok(HttpBackend {
            client,
            config,
            api_key,
            log,
        })
    }

    fn url(base: &str, path: &str) -> String {
        format!("{}/{path}", base.trim_end_matches('/'))
    }

    fn record(&self, endpoint: &str, request: &Value, response: &Result<Value, String>) {
        let Some(log) = &self.log else { return };
        let entry = match response {
            Ok(v) => json!({"endpoint": endpoint, "request": request, "response": v}),
            Err(e) => json!({"endpoint": endpoint, "request": request, "error": e}),
        };
        if let Ok(mut f) = log.lock() {
            let _ = writeln!(f, "{entry}");
        }
    }

    fn post(&self, endpoint: &str, body: &Value) -> Result<Value, BackendError> {
        let attempts_allowed = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts_allowed {
            if attempt > 1 {
                let wait = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 2).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            let mut req = self.client.post(endpoint).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        let parsed: Result<Value, _> = serde_json::from_str(&text);
                        let logged = parsed.as_ref().map(Clone::clone).map_err(|e| e.to_string());
                        self.record(endpoint, body, &logged);
                        return parsed.map_err(|e| BackendError::Decode(e.to_string()));
                    }
                    self.record(endpoint, body, &Err(format!("status {status}: {text}")));
                    if status.as_u16() == 429 || status.is_server_error() {
                        last = format!("status {status}: {text}");
                        continue;
                    }
                    return Err(BackendError::Status {
                        status: status.as_u16(),
                        body: text,
                    });
                }
                Err(e) => {
                    last = e.to_string();
                    self.record(endpoint, body, &Err(last.clone()));
                }
            }
        }
        Err(BackendError::Transport {
            attempts: attempts_allowed,
            message: last,
        })
    }

    /// Request body for a chat completion; exposed for inspection in tests.
    pub fn chat_body(model: &ModelRef, prompt: &str, params: &GenerationParams) -> Value {
        let mut body = json!({
            "model": model.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn score(&self, scorer: &Scorer, prompt: &str, responses: &[&str]) -> Result<f64, BackendError> {
        let body = json!({
            "model": scorer.model.model_name,
            "kind": scorer.kind,
            "prompt": prompt,
            "responses": responses,
        });
        let v = self.post(&Self::url(&scorer.model.endpoint_or_seed, "score"), &body)?;
        v["scores"][0]
            .as_f64()
            .ok_or_else(|| BackendError::Decode("missing scores[0]".into()))
    }
}

impl ModelBackend for HttpBackend {
    fn generate(
        &self,
        model: &ModelRef,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<Completion, BackendError> {
        check_generate(prompt, params)?;
        let body = Self::chat_body(model, prompt, params);
        let v = self.post(&Self::url(&model.endpoint_or_seed, "chat/completions"), &body)?;
        let choice = &v["choices"][0];
        let text = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Decode("missing choices[0].message.content".into()))?;
        if text.trim().is_empty() {
            return Err(BackendError::EmptyOutput {
                model: model.model_name.clone(),
            });
        }
        Ok(Completion {
            text: text.to_string(),
            truncated: choice["finish_reason"].as_str() == Some("length"),
        })
    }

    fn score_pair(
        &self,
        scorer: &Scorer,
        prompt: &str,
        a: &str,
        b: &str,
    ) -> Result<ScoreResult, BackendError> {
        check_kind(scorer, ScoreKind::Pairwise)?;
        check_candidates(&[a, b])?;
        ScoreResult::new(ScoreKind::Pairwise, self.score(scorer, prompt, &[a, b])?)
    }

    fn score_single(
        &self,
        scorer: &Scorer,
        prompt: &str,
        response: &str,
    ) -> Result<ScoreResult, BackendError> {
        check_kind(scorer, ScoreKind::Scalar)?;
        check_candidates(&[response])?;
        ScoreResult::new(ScoreKind::Scalar, self.score(scorer, prompt, &[response])?)
    }

    fn embed(&self, model: &ModelRef, text: &str) -> Result<Vec<f64>, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyText);
        }
        let body = json!({"model": model.model_name, "input": text});
        let v = self.post(&Self::url(&model.endpoint_or_seed, "embeddings"), &body)?;
        v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| BackendError::Decode("missing data[0].embedding".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| BackendError::Decode("non-numeric embedding entry".into()))
            })
            .collect()
    }
}
