//! Dataset construction: prompt-generator SFT data, response-improver SFT
//! data, synthetic prompts, preference candidates, filtering and capped
//! accumulation into the preference dataset.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::backend::{
    dispatch, score_gap, BackendError, GenerationParams, ModelBackend, ModelRef, Scorer,
};
use crate::keywords::{extract_seed_keywords, KeywordError, KeywordList, Lexicon};
use crate::rng::{derive_seed, seeded};
use crate::templates::{self, extract_rewrite, parse_generated_qa, GeneratedQA};

/// Character n-gram length for repetition detection.
pub const REPETITION_NGRAM: usize = 10;
/// Texts whose repetition ratio exceeds this are discarded.
pub const MAX_REPETITION: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("seed example `{id}`: {source}")]
    Keyword {
        id: String,
        #[source]
        source: KeywordError,
    },
    #[error("no model output for seed example `{0}`")]
    MissingOutput(String),
    #[error("threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("per-iteration cap must be >= 1")]
    InvalidCap,
    #[error("invalid seed data: {0}")]
    InvalidSeed(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedExample {
    pub id: String,
    pub prompt: String,
    pub gold_response: String,
}

/// Checks non-empty fields and unique ids.
pub fn validate_seed(seed: &[SeedExample]) -> Result<(), SynthesisError> {
    let mut ids = HashSet::new();
    for ex in seed {
        if ex.prompt.trim().is_empty() || ex.gold_response.trim().is_empty() {
            return Err(SynthesisError::InvalidSeed(format!("`{}` has an empty field", ex.id)));
        }
        if !ids.insert(ex.id.as_str()) {
            return Err(SynthesisError::InvalidSeed(format!("duplicate id `{}`", ex.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftPurpose {
    PromptGenerator,
    ResponseImprover,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub input: String,
    pub output: String,
    pub purpose: SftPurpose,
}

/// Completion text for a question-generation prompt, laid out exactly as the
/// template's output-format section shows it (including its `</solution>`
/// opener).
pub fn promptgen_completion(question: &str, solution: &str) -> String {
    format!("\n<question>\n{question}\n</question>\n\n</solution>\n{solution}\n</solution>")
}

/// One record per seed example: the rendered keyword prompt as input and the
/// example's own prompt and response as the tagged completion.
pub fn build_promptgen_sft(
    seed: &[SeedExample],
    rng_seed: u64,
    lexicon: &Lexicon,
) -> Result<Vec<SftRecord>, SynthesisError> {
    if seed.len() < 2 {
        return Err(SynthesisError::InvalidSeed(format!(
            "need at least 2 seed examples, got {}",
            seed.len()
        )));
    }
    validate_seed(seed)?;
    (0..seed.len())
        .map(|i| {
            let k_seed = derive_seed(rng_seed, &["seed-keywords", &i.to_string()]);
            let keywords = extract_seed_keywords(seed, i, k_seed, lexicon).map_err(|source| {
                SynthesisError::Keyword {
                    id: seed[i].id.clone(),
                    source,
                }
            })?;
            Ok(SftRecord {
                input: templates::render_promptgen(&keywords),
                output: promptgen_completion(&seed[i].prompt, &seed[i].gold_response),
                purpose: SftPurpose::PromptGenerator,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImproverDecision {
    pub id: String,
    pub gap: f64,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImproverSft {
    pub records: Vec<SftRecord>,
    pub decisions: Vec<ImproverDecision>,
}

/// Keeps seed examples where the gold response beats the current model's
/// output by more than `threshold`.
pub fn build_improver_sft(
    seed: &[SeedExample],
    model_outputs: &HashMap<String, String>,
    backend: &dyn ModelBackend,
    scorer: &Scorer,
    threshold: f64,
) -> Result<ImproverSft, SynthesisError> {
    check_threshold(threshold)?;
    let mut records = Vec::new();
    let mut decisions = Vec::with_capacity(seed.len());
    for ex in seed {
        let output = model_outputs
            .get(&ex.id)
            .ok_or_else(|| SynthesisError::MissingOutput(ex.id.clone()))?;
        let gap = score_gap(backend, scorer, &ex.prompt, &ex.gold_response, output)?;
        let included = gap > threshold;
        if included {
            records.push(SftRecord {
                input: templates::render_improver(&ex.prompt, output),
                output: ex.gold_response.clone(),
                purpose: SftPurpose::ResponseImprover,
            });
        }
        decisions.push(ImproverDecision {
            id: ex.id.clone(),
            gap,
            included,
        });
    }
    Ok(ImproverSft { records, decisions })
}

fn check_threshold(threshold: f64) -> Result<(), SynthesisError> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(SynthesisError::InvalidThreshold(threshold));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticPrompt {
    pub id: String,
    pub keywords: KeywordList,
    pub prompt: String,
    /// The generator's own reference solution; kept for audit only.
    pub solution: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptGenStats {
    pub requested: usize,
    pub generated: usize,
    pub parse_failures: usize,
    pub backend_failures: usize,
}

/// Draws `m` keyword lists from the pool (without replacement while the pool
/// lasts) and asks the generator for one question per list.
#[allow(clippy::too_many_arguments)]
pub fn generate_prompts(
    pool: &[KeywordList],
    m: usize,
    generator: &ModelRef,
    backend: &dyn ModelBackend,
    params: &GenerationParams,
    rng_seed: u64,
    id_prefix: &str,
    max_in_flight: usize,
) -> (Vec<SyntheticPrompt>, PromptGenStats) {
    let mut stats = PromptGenStats {
        requested: m,
        ..Default::default()
    };
    if pool.is_empty() || m == 0 {
        return (Vec::new(), stats);
    }
    let mut rng = seeded(rng_seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    while chosen.len() < m {
        let take = (m - chosen.len()).min(pool.len());
        chosen.extend(index::sample(&mut rng, pool.len(), take));
    }
    let results = dispatch(&chosen, max_in_flight, |n, &k| {
        let prompt = templates::render_promptgen(&pool[k]);
        let out = backend.generate(generator, &prompt, params);
        (n, k, out.map(|c| parse_generated_qa(&c.text)))
    });
    let mut prompts = Vec::new();
    for (n, k, res) in results {
        match res {
            Err(_) => stats.backend_failures += 1,
            Ok(Err(_)) => stats.parse_failures += 1,
            Ok(Ok(GeneratedQA { question, solution })) => prompts.push(SyntheticPrompt {
                id: format!("{id_prefix}{n}"),
                keywords: pool[k].clone(),
                prompt: question,
                solution,
            }),
        }
    }
    stats.generated = prompts.len();
    (prompts, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationRole {
    /// Current policy's answer to a synthetic prompt.
    Policy,
    /// Improver's rewrite of the policy answer.
    Improver,
    /// Initial policy's answer, used as the rejected side.
    Initial,
}

impl GenerationRole {
    fn tag(self) -> &'static str {
        match self {
            GenerationRole::Policy => "policy",
            GenerationRole::Improver => "improver",
            GenerationRole::Initial => "initial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub prompt_id: String,
    pub role: GenerationRole,
    /// Display form of the model ref that produced the text.
    pub model: String,
    pub text: String,
    pub truncated: bool,
}

/// The three models used to build candidates for one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModels {
    pub policy: ModelRef,
    pub improver: ModelRef,
    pub initial: ModelRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceCandidate {
    pub prompt_id: String,
    pub prompt: String,
    pub policy_output: String,
    pub refined: String,
    pub initial: String,
    /// Set by [`filter_candidates`]; `None` for candidates never scored.
    pub gap: Option<f64>,
    pub iteration: u32,
    pub policy_record: String,
    pub improver_record: String,
    pub initial_record: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub prompt_id: String,
    pub role: GenerationRole,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOutcome {
    pub candidates: Vec<PreferenceCandidate>,
    pub records: Vec<GenerationRecord>,
    pub failures: Vec<CandidateFailure>,
}

fn record_id(iteration: u32, prompt_id: &str, role: GenerationRole) -> String {
    format!("t{iteration}:{prompt_id}:{}", role.tag())
}

/// For each prompt: the policy answers, the improver rewrites that answer,
/// and the initial model answers independently. A failure drops only the
/// affected prompt.
pub fn synthesize_candidates(
    prompts: &[SyntheticPrompt],
    models: &CandidateModels,
    backend: &dyn ModelBackend,
    params: &GenerationParams,
    iteration: u32,
    max_in_flight: usize,
) -> SynthesisOutcome {
    let results = dispatch(prompts, max_in_flight, |_, p| {
        let gen = |role: GenerationRole, model: &ModelRef, text: &str| {
            backend
                .generate(model, text, params)
                .map(|c| GenerationRecord {
                    id: record_id(iteration, &p.id, role),
                    prompt_id: p.id.clone(),
                    role,
                    model: model.to_string(),
                    text: c.text,
                    truncated: c.truncated,
                })
                .map_err(|e| CandidateFailure {
                    prompt_id: p.id.clone(),
                    role,
                    error: e.to_string(),
                })
        };
        let policy = gen(GenerationRole::Policy, &models.policy, &p.prompt)?;
        let improver_prompt = templates::render_improver(&p.prompt, &policy.text);
        let mut improver = gen(GenerationRole::Improver, &models.improver, &improver_prompt)?;
        improver.text = extract_rewrite(&improver.text).to_string();
        if improver.text.is_empty() {
            return Err(CandidateFailure {
                prompt_id: p.id.clone(),
                role: GenerationRole::Improver,
                error: "empty rewrite".into(),
            });
        }
        let initial = gen(GenerationRole::Initial, &models.initial, &p.prompt)?;
        let cand = PreferenceCandidate {
            prompt_id: p.id.clone(),
            prompt: p.prompt.clone(),
            policy_output: policy.text.clone(),
            refined: improver.text.clone(),
            initial: initial.text.clone(),
            gap: None,
            iteration,
            policy_record: policy.id.clone(),
            improver_record: improver.id.clone(),
            initial_record: initial.id.clone(),
        };
        Ok((cand, [policy, improver, initial]))
    });
    let mut outcome = SynthesisOutcome {
        candidates: Vec::new(),
        records: Vec::new(),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok((cand, recs)) => {
                outcome.candidates.push(cand);
                outcome.records.extend(recs);
            }
            Err(f) => outcome.failures.push(f),
        }
    }
    outcome
}

/// Fraction of character positions covered by character 10-grams that
/// already occurred earlier in the same text.
pub fn repetition_ratio(text: &str) -> f64 {
    let chars: Vec<char> = text.chars().collect();
    let n = REPETITION_NGRAM;
    if chars.len() < n {
        return 0.0;
    }
    let mut seen: HashSet<&[char]> = HashSet::new();
    let mut covered = vec![false; chars.len()];
    for start in 0..=chars.len() - n {
        let gram = &chars[start..start + n];
        if !seen.insert(gram) {
            covered[start..start + n].iter_mut().for_each(|c| *c = true);
        }
    }
    covered.iter().filter(|c| **c).count() as f64 / chars.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub gap: f64,
    pub iteration: u32,
    pub chosen_record: String,
    pub rejected_record: String,
}

impl PreferencePair {
    fn key(&self) -> (String, String, String) {
        (self.prompt.clone(), self.chosen.clone(), self.rejected.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Identical,
    ScoringFailed,
    RepetitionChosen,
    RepetitionRejected,
    BelowThreshold,
}

impl FilterReason {
    pub fn label(self) -> &'static str {
        match self {
            FilterReason::Identical => "identical",
            FilterReason::ScoringFailed => "scoring_failed",
            FilterReason::RepetitionChosen => "repetition_chosen",
            FilterReason::RepetitionRejected => "repetition_rejected",
            FilterReason::BelowThreshold => "below_threshold",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub total: usize,
    pub retained: usize,
    pub rejected_by_reason: BTreeMap<String, usize>,
}

impl FilterStats {
    pub fn rejected(&self) -> usize {
        self.rejected_by_reason.values().sum()
    }
}

/// The acceptance predicates on an already-scored candidate. Returns the
/// first failing reason.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // a NaN gap is below threshold
pub fn judge(refined: &str, initial: &str, gap: f64, threshold: f64) -> Option<FilterReason> {
    if refined == initial {
        return Some(FilterReason::Identical);
    }
    if repetition_ratio(refined) > MAX_REPETITION {
        return Some(FilterReason::RepetitionChosen);
    }
    if repetition_ratio(initial) > MAX_REPETITION {
        return Some(FilterReason::RepetitionRejected);
    }
    if !(gap > threshold) {
        return Some(FilterReason::BelowThreshold);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub pairs: Vec<PreferencePair>,
    /// Input candidates with `gap` filled where scored.
    pub scored: Vec<PreferenceCandidate>,
    /// `None` for retained candidates.
    pub verdicts: Vec<Option<FilterReason>>,
    pub stats: FilterStats,
}

/// Scores each candidate (refined over initial) and keeps those with a gap
/// strictly above `threshold`, no side over the repetition limit, and
/// differing texts. Identical candidates are dropped before scoring.
pub fn filter_candidates(
    candidates: &[PreferenceCandidate],
    backend: &dyn ModelBackend,
    scorer: &Scorer,
    threshold: f64,
    max_in_flight: usize,
) -> Result<FilterOutcome, SynthesisError> {
    check_threshold(threshold)?;
    let gaps = dispatch(candidates, max_in_flight, |_, c| {
        if c.refined == c.initial {
            return None;
        }
        Some(score_gap(backend, scorer, &c.prompt, &c.refined, &c.initial))
    });
    let mut out = FilterOutcome {
        pairs: Vec::new(),
        scored: Vec::with_capacity(candidates.len()),
        verdicts: Vec::with_capacity(candidates.len()),
        stats: FilterStats {
            total: candidates.len(),
            ..Default::default()
        },
    };
    for (cand, gap) in candidates.iter().zip(gaps) {
        let mut scored = cand.clone();
        let verdict = match gap {
            None => Some(FilterReason::Identical),
            Some(Err(_)) => Some(FilterReason::ScoringFailed),
            Some(Ok(g)) => {
                scored.gap = Some(g);
                judge(&cand.refined, &cand.initial, g, threshold)
            }
        };
        match verdict {
            Some(reason) => {
                *out.stats
                    .rejected_by_reason
                    .entry(reason.label().to_string())
                    .or_default() += 1;
            }
            None => {
                out.stats.retained += 1;
                out.pairs.push(PreferencePair {
                    prompt_id: cand.prompt_id.clone(),
                    prompt: cand.prompt.clone(),
                    chosen: cand.refined.clone(),
                    rejected: cand.initial.clone(),
                    gap: scored.gap.expect("retained candidates are scored"),
                    iteration: cand.iteration,
                    chosen_record: cand.improver_record.clone(),
                    rejected_record: cand.initial_record.clone(),
                });
            }
        }
        out.scored.push(scored);
        out.verdicts.push(verdict);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccumulateReport {
    pub offered: usize,
    pub duplicates: usize,
    pub added: usize,
    pub dropped_by_cap: usize,
}

/// The append-only synthetic preference dataset.
#[derive(Debug, Clone, Default)]
pub struct PreferenceStore {
    pairs: Vec<PreferencePair>,
    keys: HashSet<(String, String, String)>,
}

impl PreferenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: Vec<PreferencePair>) -> Self {
        let mut store = PreferenceStore::new();
        for p in pairs {
            if store.keys.insert(p.key()) {
                store.pairs.push(p);
            }
        }
        store
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Adds new pairs: duplicates of stored (or earlier offered) triples are
    /// dropped and counted, then a uniform random subset of at most `cap`
    /// survivors is appended in offer order. Returns the appended pairs.
    pub fn accumulate(
        &mut self,
        pairs: &[PreferencePair],
        cap: usize,
        rng_seed: u64,
    ) -> Result<(Vec<PreferencePair>, AccumulateReport), SynthesisError> {
        if cap == 0 {
            return Err(SynthesisError::InvalidCap);
        }
        let mut report = AccumulateReport {
            offered: pairs.len(),
            ..Default::default()
        };
        let mut batch_keys = HashSet::new();
        let fresh: Vec<&PreferencePair> = pairs
            .iter()
            .filter(|p| {
                let k = p.key();
                let new = !self.keys.contains(&k) && batch_keys.insert(k);
                if !new {
                    report.duplicates += 1;
                }
                new
            })
            .collect();
        let selected: Vec<&PreferencePair> = if fresh.len() > cap {
            let mut idx = index::sample(&mut seeded(rng_seed), fresh.len(), cap).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| fresh[i]).collect()
        } else {
            fresh
        };
        report.dropped_by_cap = pairs.len() - report.duplicates - selected.len();
        report.added = selected.len();
        let added: Vec<PreferencePair> = selected.into_iter().cloned().collect();
        for p in &added {
            self.keys.insert(p.key());
            self.pairs.push(p.clone());
        }
        Ok((added, report))
    }
}
