//! Uniform access to generation, scoring and embedding models.
//!
//! A [`ModelRef`] names a model on a backend; [`Backends`] routes each call
//! to the HTTP client or to the seeded mock. Scorers carry a fixed
//! [`ScoreKind`], and calling the wrong scoring entry point is an error
//! rather than a silent conversion.

mod http;
mod mock;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use http::{HttpBackend, HttpConfig};
pub use mock::MockBackend;

/// Decoding temperature used for all sampling.
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
/// Completion length cap.
pub const DEFAULT_MAX_TOKENS: u32 = 2048;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("empty input text")]
    EmptyText,
    #[error("model `{model}` returned an empty completion")]
    EmptyOutput { model: String },
    #[error("invalid generation params: {0}")]
    InvalidParams(String),
    #[error("invalid model ref: {0}")]
    InvalidRef(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("scorer kind mismatch: expected {expected}, scorer is {actual}")]
    KindMismatch { expected: ScoreKind, actual: ScoreKind },
    #[error("empty candidate text")]
    EmptyCandidate,
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("embedding dimension mismatch in batch: expected {expected}, got {actual} at index {index}")]
    BatchDimension {
        expected: usize,
        actual: usize,
        index: usize,
    },
    #[error("no http backend configured for `{0}`")]
    NoHttp(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature.is_finite() && (0.0..=2.0).contains(&self.temperature)) {
            return Err(BackendError::InvalidParams(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidParams("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelRef {
    pub backend_kind: BackendKind,
    /// Base URL for `http`, decimal seed for `mock`.
    pub endpoint_or_seed: String,
    pub model_name: String,
}

impl ModelRef {
    pub fn mock(seed: u64, model_name: impl Into<String>) -> Self {
        ModelRef {
            backend_kind: BackendKind::Mock,
            endpoint_or_seed: seed.to_string(),
            model_name: model_name.into(),
        }
    }

    pub fn http(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        ModelRef {
            backend_kind: BackendKind::Http,
            endpoint_or_seed: base_url.into(),
            model_name: model_name.into(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.backend_kind {
            BackendKind::Mock => self.mock_seed().map(|_| ()),
            BackendKind::Http => {
                let url = self.endpoint_or_seed.as_str();
                if url.starts_with("http://") || url.starts_with("https://") {
                    Ok(())
                } else {
                    Err(BackendError::InvalidRef(format!(
                        "http ref `{}` needs an http(s) URL, got `{url}`",
                        self.model_name
                    )))
                }
            }
        }
    }

    pub fn mock_seed(&self) -> Result<u64, BackendError> {
        self.endpoint_or_seed.trim().parse().map_err(|_| {
            BackendError::InvalidRef(format!(
                "mock ref `{}` needs a decimal seed, got `{}`",
                self.model_name, self.endpoint_or_seed
            ))
        })
    }
}

impl std::str::FromStr for ModelRef {
    type Err = BackendError;

    /// Parses the `kind:target#name` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BackendError::InvalidRef(format!("`{s}` is not of the form kind:target#name"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let (target, name) = rest.split_once('#').ok_or_else(bad)?;
        if name.is_empty() {
            return Err(bad());
        }
        let backend_kind = match kind {
            "mock" => BackendKind::Mock,
            "http" => BackendKind::Http,
            _ => return Err(bad()),
        };
        let r = ModelRef {
            backend_kind,
            endpoint_or_seed: target.to_string(),
            model_name: name.to_string(),
        };
        r.validate()?;
        Ok(r)
    }
}

impl fmt::Display for ModelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.backend_kind {
            BackendKind::Http => "http",
            BackendKind::Mock => "mock",
        };
        write!(f, "{kind}:{}#{}", self.endpoint_or_seed, self.model_name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Unbounded preference logit of `a` over `b`.
    Pairwise,
    /// Per-response reward in `[0, 1]`.
    Scalar,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Pairwise => "pairwise",
            ScoreKind::Scalar => "scalar",
        })
    }
}

/// A scoring model together with its fixed output kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    pub kind: ScoreKind,
    pub model: ModelRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub kind: ScoreKind,
    pub value: f64,
    pub scale_note: String,
}

impl ScoreResult {
    pub(crate) fn new(kind: ScoreKind, value: f64) -> Result<Self, BackendError> {
        if !value.is_finite() {
            return Err(BackendError::NonFiniteScore(value));
        }
        let scale_note = match kind {
            ScoreKind::Pairwise => "raw pairwise logit, >0 prefers first",
            ScoreKind::Scalar => "scalar reward in [0,1]",
        };
        Ok(ScoreResult {
            kind,
            value,
            scale_note: scale_note.to_string(),
        })
    }
}

/// A completion plus whether it stopped on the token limit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub truncated: bool,
}

/// Operations every model backend provides.
pub trait ModelBackend: Send + Sync {
    fn generate(
        &self,
        model: &ModelRef,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<Completion, BackendError>;

    fn score_pair(
        &self,
        scorer: &Scorer,
        prompt: &str,
        a: &str,
        b: &str,
    ) -> Result<ScoreResult, BackendError>;

    fn score_single(
        &self,
        scorer: &Scorer,
        prompt: &str,
        response: &str,
    ) -> Result<ScoreResult, BackendError>;

    fn embed(&self, model: &ModelRef, text: &str) -> Result<Vec<f64>, BackendError>;

    /// Embeds a batch and checks that every vector has the same dimension.
    fn embed_batch(&self, model: &ModelRef, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
        let vectors = texts
            .iter()
            .map(|t| self.embed(model, t))
            .collect::<Result<Vec<_>, _>>()?;
        check_batch_dims(&vectors)?;
        Ok(vectors)
    }
}

pub fn check_batch_dims(vectors: &[Vec<f64>]) -> Result<(), BackendError> {
    if let Some(first) = vectors.first() {
        let expected = first.len();
        for (index, v) in vectors.iter().enumerate() {
            if v.len() != expected {
                return Err(BackendError::BatchDimension {
                    expected,
                    actual: v.len(),
                    index,
                });
            }
        }
    }
    Ok(())
}

pub(crate) fn check_generate(prompt: &str, params: &GenerationParams) -> Result<(), BackendError> {
    if prompt.is_empty() {
        return Err(BackendError::EmptyPrompt);
    }
    params.validate()
}

pub(crate) fn check_kind(scorer: &Scorer, expected: ScoreKind) -> Result<(), BackendError> {
    if scorer.kind != expected {
        return Err(BackendError::KindMismatch {
            expected,
            actual: scorer.kind,
        });
    }
    Ok(())
}

pub(crate) fn check_candidates(texts: &[&str]) -> Result<(), BackendError> {
    if texts.iter().any(|t| t.is_empty()) {
        return Err(BackendError::EmptyCandidate);
    }
    Ok(())
}

/// Score gap of `preferred` over `other` under `scorer`: the raw pairwise
/// value for pairwise scorers, the difference of scalar rewards otherwise.
pub fn score_gap(
    backend: &dyn ModelBackend,
    scorer: &Scorer,
    prompt: &str,
    preferred: &str,
    other: &str,
) -> Result<f64, BackendError> {
    match scorer.kind {
        ScoreKind::Pairwise => Ok(backend.score_pair(scorer, prompt, preferred, other)?.value),
        ScoreKind::Scalar => {
            let a = backend.score_single(scorer, prompt, preferred)?.value;
            let b = backend.score_single(scorer, prompt, other)?.value;
            Ok(a - b)
        }
    }
}

/// Routes calls to the mock or the HTTP client by [`BackendKind`].
#[derive(Debug, Default)]
pub struct Backends {
    mock: MockBackend,
    http: Option<HttpBackend>,
}

impl Backends {
    pub fn mock_only() -> Self {
        Backends::default()
    }

    pub fn with_http(http: HttpBackend) -> Self {
        Backends {
            mock: MockBackend,
            http: Some(http),
        }
    }

    fn route(&self, model: &ModelRef) -> Result<&dyn ModelBackend, BackendError> {
        model.validate()?;
        match model.backend_kind {
            BackendKind::Mock => Ok(&self.mock),
            BackendKind::Http => self
                .http
                .as_ref()
                .map(|h| h as &dyn ModelBackend)
                .ok_or_else(|| BackendError::NoHttp(model.to_string())),
        }
    }
}

impl ModelBackend for Backends {
    fn generate(
        &self,
        model: &ModelRef,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<Completion, BackendError> {
        self.route(model)?.generate(model, prompt, params)
    }

    fn score_pair(
        &self,
        scorer: &Scorer,
        prompt: &str,
        a: &str,
        b: &str,
    ) -> Result<ScoreResult, BackendError> {
        self.route(&scorer.model)?.score_pair(scorer, prompt, a, b)
    }

    fn score_single(
        &self,
        scorer: &Scorer,
        prompt: &str,
        response: &str,
    ) -> Result<ScoreResult, BackendError> {
        self.route(&scorer.model)?.score_single(scorer, prompt, response)
    }

    fn embed(&self, model: &ModelRef, text: &str) -> Result<Vec<f64>, BackendError> {
        self.route(model)?.embed(model, text)
    }
}

/// Runs `f` over `items` with at most `max_in_flight` concurrent calls and
/// returns results in input order.
pub fn dispatch<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = max_in_flight.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().expect("dispatch slot lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("dispatch slot lock")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}
