//! Prompt diversity and topic/intention reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::backend::{check_batch_dims, dispatch, GenerationParams, ModelBackend, ModelRef};
use crate::rng::seeded;
use crate::templates::{self, INTENTIONS, TOPICS};

/// Default number of prompts sampled for a report.
pub const DEFAULT_SAMPLE_SIZE: usize = 1_000;
pub const DEFAULT_BUCKETS: usize = 40;
pub const OTHERS: &str = "Others";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub buckets: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            lo: 0.0,
            hi: 1.0,
            buckets: DEFAULT_BUCKETS,
        }
    }
}

impl HistogramSpec {
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.buckets as f64
    }

    /// Bucket index; values outside `[lo, hi]` land in the edge buckets.
    pub fn bucket(&self, x: f64) -> usize {
        let raw = ((x - self.lo) / self.width()).floor();
        if raw < 0.0 || raw.is_nan() {
            0
        } else {
            (raw as usize).min(self.buckets - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub embedder: String,
    pub spec: HistogramSpec,
    /// Mean cosine similarity of each prompt to every other prompt, in input
    /// order (excluded prompts omitted).
    pub per_prompt_mean: Vec<f64>,
    pub histogram: Vec<usize>,
    pub overall_mean: f64,
    /// Values below `lo` or above `hi`, folded into the edge buckets.
    pub clipped: usize,
    pub excluded: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("need at least 2 prompts, got {0}")]
    TooFewPrompts(usize),
    #[error("fewer than 2 prompts could be embedded")]
    TooFewEmbedded,
    #[error("invalid histogram: {0}")]
    Histogram(String),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
}

/// Uniform sample of at most `n` prompts, kept in original order.
pub fn sample_prompts<T: Clone>(items: &[T], n: usize, seed: u64) -> Vec<T> {
    if items.len() <= n {
        return items.to_vec();
    }
    let mut idx = index::sample(&mut seeded(seed), items.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| x / norm).collect())
}

/// For each prompt, the mean cosine similarity to every other prompt.
// negated comparisons below also reject NaN bounds
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn inter_prompt_similarity(
    prompts: &[String],
    backend: &dyn ModelBackend,
    embedder: &ModelRef,
    spec: HistogramSpec,
    max_in_flight: usize,
) -> Result<SimilarityReport, AnalysisError> {
    if prompts.len() < 2 {
        return Err(AnalysisError::TooFewPrompts(prompts.len()));
    }
    if spec.buckets == 0 || !(spec.hi > spec.lo) {
        return Err(AnalysisError::Histogram(format!("{spec:?}")));
    }
    let embedded = dispatch(prompts, max_in_flight, |_, p| {
        backend.embed(embedder, p).ok().and_then(|v| normalize(&v))
    });
    let excluded = embedded.iter().filter(|e| e.is_none()).count();
    let vectors: Vec<Vec<f64>> = embedded.into_iter().flatten().collect();
    if vectors.len() < 2 {
        return Err(AnalysisError::TooFewEmbedded);
    }
    check_batch_dims(&vectors)?;
    let n = vectors.len();
    let mut sums = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let c: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            let c = c.clamp(-1.0, 1.0);
            sums[i] += c;
            sums[j] += c;
        }
    }
    let per_prompt_mean: Vec<f64> = sums.iter().map(|s| s / (n - 1) as f64).collect();
    let mut histogram = vec![0; spec.buckets];
    let mut clipped = 0;
    for &m in &per_prompt_mean {
        if m < spec.lo || m > spec.hi {
            clipped += 1;
        }
        histogram[spec.bucket(m)] += 1;
    }
    let overall_mean = per_prompt_mean.iter().sum::<f64>() / n as f64;
    Ok(SimilarityReport {
        embedder: embedder.to_string(),
        spec,
        per_prompt_mean,
        histogram,
        overall_mean,
        clipped,
        excluded,
    })
}

impl SimilarityReport {
    pub fn histogram_csv(&self) -> String {
        let mut out = format!(
            "# embedder={} lo={} hi={} buckets={} width={}\nbucket_lo,bucket_hi,count\n",
            self.embedder,
            self.spec.lo,
            self.spec.hi,
            self.spec.buckets,
            self.spec.width()
        );
        let w = self.spec.width();
        for (i, c) in self.histogram.iter().enumerate() {
            let lo = self.spec.lo + w * i as f64;
            let _ = writeln!(out, "{:.6},{:.6},{c}", lo, lo + w);
        }
        out
    }

    /// Minimal bar-chart rendering of the histogram.
    pub fn histogram_svg(&self) -> String {
        let (width, height, pad) = (640.0, 320.0, 30.0);
        let max = self.histogram.iter().copied().max().unwrap_or(0).max(1) as f64;
        let bar_w = (width - 2.0 * pad) / self.histogram.len() as f64;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        for (i, &c) in self.histogram.iter().enumerate() {
            let h = (height - 2.0 * pad) * c as f64 / max;
            let x = pad + bar_w * i as f64;
            let y = height - pad - h;
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"steelblue\"/>",
                (bar_w - 1.0).max(0.5)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{pad}\" y=\"{}\" font-size=\"12\">{}</text>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>",
            height - 10.0,
            self.spec.lo,
            width - pad,
            height - 10.0,
            self.spec.hi
        );
        svg.push_str("</svg>\n");
        svg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicIntentReport {
    pub classifier: String,
    pub topic_counts: BTreeMap<String, usize>,
    pub intention_counts: BTreeMap<String, usize>,
    /// Labels outside the canonical lists, tallied individually; their totals
    /// are also counted under [`OTHERS`] in the main maps.
    pub other_topics: BTreeMap<String, usize>,
    pub other_intentions: BTreeMap<String, usize>,
    pub parsed: usize,
    pub parse_failures: usize,
}

impl TopicIntentReport {
    pub fn total(&self) -> usize {
        self.parsed + self.parse_failures
    }
}

/// Classifies each prompt via the topic/intention template. Unknown labels go
/// to [`OTHERS`]; unparseable replies and backend errors are counted as
/// failures.
pub fn classify_prompts(
    prompts: &[String],
    backend: &dyn ModelBackend,
    classifier: &ModelRef,
    params: &GenerationParams,
    max_in_flight: usize,
) -> TopicIntentReport {
    let replies = dispatch(prompts, max_in_flight, |_, p| {
        backend
            .generate(classifier, &templates::render_topic_intent(p), params)
            .ok()
            .and_then(|c| templates::parse_topic_intent(&c.text).ok())
    });
    let mut report = TopicIntentReport {
        classifier: classifier.to_string(),
        ..Default::default()
    };
    for reply in replies {
        let Some(ti) = reply else {
            report.parse_failures += 1;
            continue;
        };
        report.parsed += 1;
        tally(&ti.topic, &TOPICS, &mut report.topic_counts, &mut report.other_topics);
        tally(
            &ti.intention,
            &INTENTIONS,
            &mut report.intention_counts,
            &mut report.other_intentions,
        );
    }
    report
}

fn tally(
    label: &str,
    canonical: &[&str],
    counts: &mut BTreeMap<String, usize>,
    others: &mut BTreeMap<String, usize>,
) {
    match canonical.iter().find(|c| c.eq_ignore_ascii_case(label)) {
        Some(c) => *counts.entry((*c).to_string()).or_default() += 1,
        None => {
            *counts.entry(OTHERS.to_string()).or_default() += 1;
            *others.entry(label.to_string()).or_default() += 1;
        }
    }
}
