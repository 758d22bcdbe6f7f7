//! Drives the self-improvement loop. Every stage reads its inputs from and
//! writes its outputs to the run directory, so a run can stop after any stage
//! and resume from the files alone.
//!
//! Layout under `<run_root>/<name>`:
//!
//! ```text
//! iter0/     keywords, promptgen_sft, delegation, manifest.json
//! iter<t>/   prompts, improver_sft, candidates, pairs, accepted, dataset,
//!            stats records, simpo report, delegation, progress.json,
//!            manifest.json
//! dataset.ndjson   cumulative dataset after the last finished iteration
//! summary.json     per-iteration summary rows
//! ```

mod config;

pub use config::*;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    classify_prompts, inter_prompt_similarity, sample_prompts, HistogramSpec, SimilarityReport,
    TopicIntentReport,
};
use crate::backend::{dispatch, Backends, HttpBackend, ModelBackend, ModelRef};
use crate::io::{
    atomic_write, read_json, read_records, sha256_file, write_json, write_records, SCHEMA_VERSION,
};
use crate::keywords::{build_keyword_pool, CorpusParagraph, KeywordList, KeywordPoolStats, Lexicon};
use crate::rng::{derive_seed, hash_parts};
use crate::simpo::{
    beta_report_csv, beta_search, text_to_tokens, trace_csv, BetaRow, TokenPair,
    ToyPolicy,
};
use crate::synthesis::{
    build_improver_sft, build_promptgen_sft, filter_candidates, generate_prompts,
    synthesize_candidates, validate_seed, AccumulateReport, CandidateModels, FilterStats,
    PreferenceCandidate, PreferencePair, PreferenceStore, PromptGenStats, SeedExample, SftRecord,
    SyntheticPrompt,
};
use crate::{Error, Result};

/// Stages of one iteration, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prompts,
    ImproverSft,
    Candidates,
    Filter,
    Accumulate,
    Optimize,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Prompts,
        Stage::ImproverSft,
        Stage::Candidates,
        Stage::Filter,
        Stage::Accumulate,
        Stage::Optimize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prompts => "prompts",
            Stage::ImproverSft => "improver_sft",
            Stage::Candidates => "candidates",
            Stage::Filter => "filter",
            Stage::Accumulate => "accumulate",
            Stage::Optimize => "optimize",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Where a run stops early. `Bootstrap` halts after the iteration-0 step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopPoint {
    Bootstrap,
    After { t: u32, stage: Stage },
}

impl std::str::FromStr for StopPoint {
    type Err = Error;

    /// `bootstrap` or `<t>:<stage>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "bootstrap" {
            return Ok(StopPoint::Bootstrap);
        }
        let (t, stage) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("stop point `{s}` is not <t>:<stage>")))?;
        let t = t
            .parse()
            .map_err(|_| Error::Config(format!("bad iteration in stop point `{s}`")))?;
        Ok(StopPoint::After {
            t,
            stage: stage.parse()?,
        })
    }
}

pub mod files {
    pub const KEYWORDS: &str = "keywords.ndjson";
    pub const KEYWORD_STATS: &str = "keyword_stats.ndjson";
    pub const PROMPTGEN_SFT: &str = "promptgen_sft.ndjson";
    pub const DELEGATION: &str = "delegation.ndjson";
    pub const PROMPTS: &str = "prompts.ndjson";
    pub const PROMPT_STATS: &str = "prompt_stats.ndjson";
    pub const POLICY_SEED_OUTPUTS: &str = "policy_seed_outputs.ndjson";
    pub const IMPROVER_SFT: &str = "improver_sft.ndjson";
    pub const IMPROVER_DECISIONS: &str = "improver_decisions.ndjson";
    pub const CANDIDATES: &str = "candidates.ndjson";
    pub const GENERATIONS: &str = "generations.ndjson";
    pub const CANDIDATE_FAILURES: &str = "candidate_failures.ndjson";
    pub const SCORED: &str = "scored.ndjson";
    pub const PAIRS: &str = "pairs.ndjson";
    pub const FILTER_STATS: &str = "filter_stats.ndjson";
    pub const ACCEPTED: &str = "accepted.ndjson";
    pub const DATASET: &str = "dataset.ndjson";
    pub const ACCUMULATE_REPORT: &str = "accumulate_report.ndjson";
    pub const SIMPO_REPORT: &str = "simpo_report.ndjson";
    pub const LOSS_TRACE: &str = "loss_trace.csv";
    pub const BETA_REPORT: &str = "beta_report.csv";
    pub const PROGRESS: &str = "progress.json";
    pub const MANIFEST: &str = "manifest.json";
    pub const SUMMARY: &str = "summary.json";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
}

/// A dataset emitted for training outside this tool, with the config slot
/// the resulting model should fill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delegation {
    pub purpose: String,
    pub dataset: String,
    pub sha256: String,
    pub records: usize,
    pub model_slot: String,
    /// Model currently configured for the slot.
    pub configured: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapState {
    pub schema_version: u32,
    pub keyword_stats: KeywordPoolStats,
    pub promptgen_records: usize,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub config_hash: String,
    pub manifest_checksum: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimpoReport {
    pub trained: bool,
    pub skipped_reason: Option<String>,
    pub dataset_pairs: usize,
    pub projected_pairs: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub vocab_size: usize,
    pub best_beta: Option<f64>,
    pub gamma: f64,
    pub initial_train_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub betas: Vec<BetaRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub schema_version: u32,
    pub t: u32,
    pub prompts_file: String,
    pub candidates_file: String,
    pub pairs_file: String,
    pub improver_dataset_file: String,
    pub dataset_file: String,
    pub prompt_stats: PromptGenStats,
    pub filter_stats: FilterStats,
    pub accumulate: AccumulateReport,
    pub dataset_size: usize,
    pub simpo_report: SimpoReport,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub config_hash: String,
    /// SHA-256 of this record serialized with an empty checksum field.
    pub manifest_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub schema_version: u32,
    pub t: u32,
    pub completed: Vec<Stage>,
    pub failed: Option<StageFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub t: u32,
    pub prompts: usize,
    pub candidates: usize,
    pub retained: usize,
    pub rejected_by_reason: BTreeMap<String, usize>,
    pub added: usize,
    pub dataset_size: usize,
    pub best_beta: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub manifest_checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub bootstrap: Option<BootstrapState>,
    pub states: Vec<IterationState>,
    pub halted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutput {
    pub id: String,
    pub model: String,
    pub text: String,
    pub truncated: bool,
}

/// Reads a file expected to hold exactly one record.
pub fn read_one<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let mut records: Vec<T> = read_records(path)?;
    if records.len() != 1 {
        return Err(Error::Record {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected one record, found {}", records.len()),
        });
    }
    Ok(records.remove(0))
}

fn checksum<T: Serialize>(value: &T) -> String {
    crate::io::sha256_hex(&serde_json::to_vec(value).expect("state serializes"))
}

fn stage_error(t: u32, stage: &str, e: Error) -> Error {
    match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            iteration: t,
            stage: stage.to_string(),
            message: other.to_string(),
            code: other.exit_code(),
        },
    }
}

/// Builds the backend router for a config: the mock always, the HTTP client
/// when any configured model is served over HTTP.
pub fn backends_for(cfg: &RunConfig) -> Result<Backends> {
    let m = &cfg.models;
    let mut refs: Vec<&ModelRef> = vec![
        &m.initial,
        &m.generator,
        &cfg.scorer.model,
        &cfg.analysis.embedder,
        &cfg.analysis.classifier,
    ];
    refs.extend(m.policies.iter().chain(&m.improvers));
    let needs_http = refs
        .iter()
        .any(|r| r.backend_kind == crate::backend::BackendKind::Http);
    if !needs_http {
        return Ok(Backends::mock_only());
    }
    let mut http = cfg.http.clone();
    if let Some(p) = &http.log_path {
        http.log_path = Some(cfg.resolve(p));
    }
    Ok(Backends::with_http(HttpBackend::new(http)?))
}

/// Executes stages for one configuration against one backend.
pub struct Runner<'a> {
    cfg: &'a RunConfig,
    backend: &'a dyn ModelBackend,
    lexicon: Lexicon,
    seed: Vec<SeedExample>,
    run_dir: PathBuf,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a RunConfig, backend: &'a dyn ModelBackend) -> Result<Self> {
        cfg.validate()?;
        let lexicon = Lexicon::load(
            cfg.stopwords_path.as_ref().map(|p| cfg.resolve(p)).as_deref(),
            cfg.names_path.as_ref().map(|p| cfg.resolve(p)).as_deref(),
        )?;
        let seed: Vec<SeedExample> = read_records(&cfg.resolve(&cfg.seed_data_path))?;
        validate_seed(&seed).map_err(|e| Error::Config(format!("seed data: {e}")))?;
        Ok(Runner {
            cfg,
            backend,
            lexicon,
            seed,
            run_dir: cfg.run_dir(),
        })
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn iter_dir(&self, t: u32) -> PathBuf {
        self.run_dir.join(format!("iter{t}"))
    }

    fn path(&self, t: u32, name: &str) -> PathBuf {
        self.iter_dir(t).join(name)
    }

    fn rel(&self, t: u32, name: &str) -> String {
        format!("iter{t}/{name}")
    }

    fn entry(&self, t: u32, name: &str) -> Result<(String, ArtifactEntry)> {
        Ok((
            name.to_string(),
            ArtifactEntry {
                path: self.rel(t, name),
                sha256: sha256_file(&self.path(t, name))?,
            },
        ))
    }

    fn seed_for(&self, t: u32, stage: &str) -> u64 {
        derive_seed(self.cfg.master_seed, &[&t.to_string(), stage])
    }

    fn ensure_dir(&self, t: u32) -> Result<()> {
        let dir = self.iter_dir(t);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir, e))
    }

    pub fn load_bootstrap(&self) -> Result<Option<BootstrapState>> {
        let p = self.path(0, files::MANIFEST);
        if !p.is_file() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }

    pub fn load_state(&self, t: u32) -> Result<Option<IterationState>> {
        let p = self.path(t, files::MANIFEST);
        if !p.is_file() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }

    pub fn load_progress(&self, t: u32) -> Result<Progress> {
        let p = self.path(t, files::PROGRESS);
        if !p.is_file() {
            return Ok(Progress {
                schema_version: SCHEMA_VERSION,
                t,
                ..Default::default()
            });
        }
        read_json(&p)
    }

    /// Iteration-0 work: the keyword pool and the generator's SFT data.
    pub fn bootstrap(&self) -> Result<BootstrapState> {
        if let Some(state) = self.load_bootstrap()? {
            return Ok(state);
        }
        self.bootstrap_inner().map_err(|e| stage_error(0, "bootstrap", e))
    }

    fn bootstrap_inner(&self) -> Result<BootstrapState> {
        self.ensure_dir(0)?;
        let corpus: Vec<CorpusParagraph> = read_records(&self.cfg.resolve(&self.cfg.corpus_path))?;
        let (pool, stats) = build_keyword_pool(
            &corpus,
            derive_seed(self.cfg.master_seed, &["keyword-pool"]),
            &self.lexicon,
            self.cfg.max_in_flight,
        );
        if pool.is_empty() {
            return Err(Error::Config("corpus yields no usable keyword lists".into()));
        }
        write_records(&self.path(0, files::KEYWORDS), &pool)?;
        write_records(&self.path(0, files::KEYWORD_STATS), std::slice::from_ref(&stats))?;
        let sft = build_promptgen_sft(&self.seed, self.seed_for(0, "promptgen_sft"), &self.lexicon)?;
        write_records(&self.path(0, files::PROMPTGEN_SFT), &sft)?;
        let delegation = vec![Delegation {
            purpose: "prompt generator fine-tuning".into(),
            dataset: self.rel(0, files::PROMPTGEN_SFT),
            sha256: sha256_file(&self.path(0, files::PROMPTGEN_SFT))?,
            records: sft.len(),
            model_slot: "models.generator".into(),
            configured: Some(self.cfg.models.generator.to_string()),
        }];
        write_records(&self.path(0, files::DELEGATION), &delegation)?;
        let artifacts = [
            files::KEYWORDS,
            files::KEYWORD_STATS,
            files::PROMPTGEN_SFT,
            files::DELEGATION,
        ]
        .into_iter()
        .map(|n| self.entry(0, n))
        .collect::<Result<_>>()?;
        let mut state = BootstrapState {
            schema_version: SCHEMA_VERSION,
            keyword_stats: stats,
            promptgen_records: sft.len(),
            artifacts,
            config_hash: self.cfg.hash(),
            manifest_checksum: String::new(),
        };
        state.manifest_checksum = checksum(&state);
        write_json(&self.path(0, files::MANIFEST), &state)?;
        Ok(state)
    }

    /// Runs (or resumes) iteration `t`. Returns `None` when `stop` halts it
    /// before the manifest is written.
    pub fn run_iteration(
        &self,
        t: u32,
        prior: Option<&IterationState>,
        stop: Option<StopPoint>,
    ) -> Result<Option<IterationState>> {
        if t == 0 {
            return Err(Error::Config("iterations are numbered from 1".into()));
        }
        if let Some(state) = self.load_state(t)? {
            return Ok(Some(state));
        }
        match (t, prior) {
            (1, _) => {}
            (_, Some(p)) if p.t == t - 1 => {}
            _ => {
                return Err(Error::Stage {
                    iteration: t,
                    stage: "prerequisite".into(),
                    message: format!("iteration {} has not completed", t - 1),
                    code: crate::error::exit_code::STAGE,
                })
            }
        }
        if self.load_bootstrap()?.is_none() {
            self.bootstrap()?;
        }
        self.ensure_dir(t)?;
        let mut progress = self.load_progress(t)?;
        for stage in Stage::ALL {
            if progress.completed.contains(&stage) {
                continue;
            }
            match self.run_stage(t, stage) {
                Ok(()) => {
                    progress.completed.push(stage);
                    progress.failed = None;
                    write_json(&self.path(t, files::PROGRESS), &progress)?;
                }
                Err(e) => {
                    let err = stage_error(t, stage.name(), e);
                    progress.failed = Some(StageFailure {
                        stage,
                        message: err.to_string(),
                    });
                    write_json(&self.path(t, files::PROGRESS), &progress)?;
                    return Err(err);
                }
            }
            if stop == Some(StopPoint::After { t, stage }) {
                return Ok(None);
            }
        }
        let state = self.finish_iteration(t)?;
        Ok(Some(state))
    }

    /// Runs one stage of iteration `t` from the files of earlier stages.
    pub fn run_stage(&self, t: u32, stage: Stage) -> Result<()> {
        self.ensure_dir(t)?;
        match stage {
            Stage::Prompts => self.stage_prompts(t),
            Stage::ImproverSft => self.stage_improver_sft(t),
            Stage::Candidates => self.stage_candidates(t),
            Stage::Filter => self.stage_filter(t),
            Stage::Accumulate => self.stage_accumulate(t),
            Stage::Optimize => self.stage_optimize(t),
        }
    }

    pub fn stage_prompts(&self, t: u32) -> Result<()> {
        let pool: Vec<KeywordList> = read_records(&self.path(0, files::KEYWORDS))?;
        let (prompts, stats) = generate_prompts(
            &pool,
            self.cfg.prompts_per_iteration,
            &self.cfg.models.generator,
            self.backend,
            &self.cfg.generation_params(),
            self.seed_for(t, Stage::Prompts.name()),
            &format!("t{t}-p"),
            self.cfg.max_in_flight,
        );
        if prompts.is_empty() {
            return Err(Error::NoOutput {
                backend: stats.parse_failures == 0,
                message: format!(
                    "generator produced no prompts ({} backend failures, {} parse failures)",
                    stats.backend_failures, stats.parse_failures
                ),
            });
        }
        write_records(&self.path(t, files::PROMPTS), &prompts)?;
        write_records(&self.path(t, files::PROMPT_STATS), std::slice::from_ref(&stats))
    }

    pub fn stage_improver_sft(&self, t: u32) -> Result<()> {
        let policy = self.cfg.models.policy(t);
        let params = self.cfg.generation_params();
        let outputs = dispatch(&self.seed, self.cfg.max_in_flight, |_, ex| {
            self.backend.generate(&policy, &ex.prompt, &params)
        });
        let mut records = Vec::with_capacity(outputs.len());
        for (ex, out) in self.seed.iter().zip(outputs) {
            let c = out?;
            records.push(SeedOutput {
                id: ex.id.clone(),
                model: policy.to_string(),
                text: c.text,
                truncated: c.truncated,
            });
        }
        let map: HashMap<String, String> =
            records.iter().map(|r| (r.id.clone(), r.text.clone())).collect();
        let sft = build_improver_sft(
            &self.seed,
            &map,
            self.backend,
            &self.cfg.scorer.scorer(),
            self.cfg.scorer.threshold(),
        )?;
        write_records(&self.path(t, files::POLICY_SEED_OUTPUTS), &records)?;
        write_records(&self.path(t, files::IMPROVER_SFT), &sft.records)?;
        write_records(&self.path(t, files::IMPROVER_DECISIONS), &sft.decisions)
    }

    pub fn stage_candidates(&self, t: u32) -> Result<()> {
        let prompts: Vec<SyntheticPrompt> = read_records(&self.path(t, files::PROMPTS))?;
        let models = CandidateModels {
            policy: self.cfg.models.policy(t),
            improver: self.cfg.models.improver(t),
            initial: self.cfg.models.initial.clone(),
        };
        let out = synthesize_candidates(
            &prompts,
            &models,
            self.backend,
            &self.cfg.generation_params(),
            t,
            self.cfg.max_in_flight,
        );
        if out.candidates.is_empty() && !prompts.is_empty() {
            let first = out.failures.first().map(|f| f.error.clone()).unwrap_or_default();
            return Err(Error::NoOutput {
                backend: true,
                message: format!("every candidate failed; first error: {first}"),
            });
        }
        write_records(&self.path(t, files::GENERATIONS), &out.records)?;
        write_records(&self.path(t, files::CANDIDATE_FAILURES), &out.failures)?;
        write_records(&self.path(t, files::CANDIDATES), &out.candidates)
    }

    pub fn stage_filter(&self, t: u32) -> Result<()> {
        let candidates: Vec<PreferenceCandidate> = read_records(&self.path(t, files::CANDIDATES))?;
        let out = filter_candidates(
            &candidates,
            self.backend,
            &self.cfg.scorer.scorer(),
            self.cfg.scorer.threshold(),
            self.cfg.max_in_flight,
        )?;
        write_records(&self.path(t, files::SCORED), &out.scored)?;
        write_records(&self.path(t, files::PAIRS), &out.pairs)?;
        write_records(&self.path(t, files::FILTER_STATS), std::slice::from_ref(&out.stats))
    }

    fn prior_dataset(&self, t: u32) -> Result<Vec<PreferencePair>> {
        if t <= 1 {
            return Ok(Vec::new());
        }
        read_records(&self.path(t - 1, files::DATASET))
    }

    pub fn stage_accumulate(&self, t: u32) -> Result<()> {
        let pairs: Vec<PreferencePair> = read_records(&self.path(t, files::PAIRS))?;
        let mut store = PreferenceStore::from_pairs(self.prior_dataset(t)?);
        let (added, report) = store.accumulate(
            &pairs,
            self.cfg.per_iter_cap,
            self.seed_for(t, Stage::Accumulate.name()),
        )?;
        write_records(&self.path(t, files::ACCEPTED), &added)?;
        write_records(&self.path(t, files::DATASET), store.pairs())?;
        write_records(&self.path(t, files::ACCUMULATE_REPORT), std::slice::from_ref(&report))
    }

    pub fn stage_optimize(&self, t: u32) -> Result<()> {
        let dataset: Vec<PreferencePair> = read_records(&self.path(t, files::DATASET))?;
        let s = &self.cfg.simpo;
        let mut report = SimpoReport {
            dataset_pairs: dataset.len(),
            vocab_size: s.vocab_size,
            gamma: s.gamma,
            ..Default::default()
        };
        let mut trace = String::new();
        let mut betas = String::new();
        if s.mode == OptimizeMode::Export {
            report.skipped_reason = Some("export-only mode".into());
        } else {
            let init_seed = derive_seed(self.cfg.master_seed, &["toy-policy-init"]);
            let init = ToyPolicy::random(s.vocab_size, s.context, s.init_scale, init_seed)?;
            let split_seed = self.seed_for(t, Stage::Optimize.name());
            let (train, val) = project_and_split(&dataset, s, split_seed);
            report.projected_pairs = train.len() + val.len();
            report.train_pairs = train.len();
            report.val_pairs = val.len();
            if train.is_empty() || val.is_empty() {
                report.skipped_reason = Some(format!(
                    "too few distinct projected pairs ({} train, {} validation)",
                    train.len(),
                    val.len()
                ));
            } else {
                let search = beta_search(&init, &train, &val, &s.beta_grid, &s.base())?;
                report.trained = true;
                report.best_beta = Some(search.best.beta);
                report.initial_train_loss = search.best_trace.first().map(|r| r.loss);
                report.final_train_loss = search.best_trace.last().map(|r| r.loss);
                report.best_val_loss = search
                    .report
                    .iter()
                    .find(|r| r.beta == search.best.beta)
                    .and_then(|r| r.val_loss);
                trace = trace_csv(&search.best_trace);
                betas = beta_report_csv(&search.report);
                report.betas = search.report;
            }
        }
        atomic_write(&self.path(t, files::LOSS_TRACE), trace.as_bytes())?;
        atomic_write(&self.path(t, files::BETA_REPORT), betas.as_bytes())?;
        write_records(&self.path(t, files::SIMPO_REPORT), std::slice::from_ref(&report))?;
        let improver_sft: Vec<SftRecord> = read_records(&self.path(t, files::IMPROVER_SFT))?;
        let mut delegation = vec![Delegation {
            purpose: "response improver fine-tuning".into(),
            dataset: self.rel(t, files::IMPROVER_SFT),
            sha256: sha256_file(&self.path(t, files::IMPROVER_SFT))?,
            records: improver_sft.len(),
            model_slot: format!("models.improvers[{}]", t - 1),
            configured: Some(self.cfg.models.improver(t).to_string()),
        }];
        if s.mode != OptimizeMode::Toy {
            delegation.push(Delegation {
                purpose: "policy preference optimization".into(),
                dataset: self.rel(t, files::DATASET),
                sha256: sha256_file(&self.path(t, files::DATASET))?,
                records: dataset.len(),
                model_slot: format!("models.policies[{t}]"),
                configured: (t < self.cfg.iterations).then(|| self.cfg.models.policy(t + 1).to_string()),
            });
        }
        write_records(&self.path(t, files::DELEGATION), &delegation)
    }

    fn finish_iteration(&self, t: u32) -> Result<IterationState> {
        let prompt_stats = read_one(&self.path(t, files::PROMPT_STATS))?;
        let filter_stats = read_one(&self.path(t, files::FILTER_STATS))?;
        let accumulate = read_one(&self.path(t, files::ACCUMULATE_REPORT))?;
        let simpo_report = read_one(&self.path(t, files::SIMPO_REPORT))?;
        let dataset_size = read_records::<PreferencePair>(&self.path(t, files::DATASET))?.len();
        let names = [
            files::PROMPTS,
            files::PROMPT_STATS,
            files::POLICY_SEED_OUTPUTS,
            files::IMPROVER_SFT,
            files::IMPROVER_DECISIONS,
            files::GENERATIONS,
            files::CANDIDATE_FAILURES,
            files::CANDIDATES,
            files::SCORED,
            files::PAIRS,
            files::FILTER_STATS,
            files::ACCEPTED,
            files::DATASET,
            files::ACCUMULATE_REPORT,
            files::SIMPO_REPORT,
            files::LOSS_TRACE,
            files::BETA_REPORT,
            files::DELEGATION,
        ];
        let artifacts = names
            .into_iter()
            .map(|n| self.entry(t, n))
            .collect::<Result<_>>()?;
        let mut state = IterationState {
            schema_version: SCHEMA_VERSION,
            t,
            prompts_file: self.rel(t, files::PROMPTS),
            candidates_file: self.rel(t, files::CANDIDATES),
            pairs_file: self.rel(t, files::PAIRS),
            improver_dataset_file: self.rel(t, files::IMPROVER_SFT),
            dataset_file: self.rel(t, files::DATASET),
            prompt_stats,
            filter_stats,
            accumulate,
            dataset_size,
            simpo_report,
            artifacts,
            config_hash: self.cfg.hash(),
            manifest_checksum: String::new(),
        };
        state.manifest_checksum = checksum(&state);
        let dataset = std::fs::read(self.path(t, files::DATASET))
            .map_err(|e| Error::io(self.path(t, files::DATASET), e))?;
        atomic_write(&self.run_dir.join(files::DATASET), &dataset)?;
        write_json(&self.path(t, files::MANIFEST), &state)?;
        Ok(state)
    }

    /// Runs bootstrap plus iterations `1..=T`, resuming from whatever is on
    /// disk.
    pub fn run_loop(&self, stop: Option<StopPoint>) -> Result<RunOutcome> {
        let bootstrap = self.bootstrap()?;
        let mut states: Vec<IterationState> = Vec::new();
        if stop == Some(StopPoint::Bootstrap) {
            return Ok(RunOutcome {
                bootstrap: Some(bootstrap),
                states,
                halted: true,
            });
        }
        for t in 1..=self.cfg.iterations {
            match self.run_iteration(t, states.last(), stop)? {
                Some(state) => states.push(state),
                None => {
                    return Ok(RunOutcome {
                        bootstrap: Some(bootstrap),
                        states,
                        halted: true,
                    })
                }
            }
        }
        let rows: Vec<SummaryRow> = states.iter().map(summary_row).collect();
        write_json(&self.run_dir.join(files::SUMMARY), &rows)?;
        Ok(RunOutcome {
            bootstrap: Some(bootstrap),
            states,
            halted: false,
        })
    }

    /// Completed iteration states found on disk, in order.
    pub fn completed_states(&self) -> Result<Vec<IterationState>> {
        let mut out = Vec::new();
        for t in 1..=self.cfg.iterations {
            match self.load_state(t)? {
                Some(s) => out.push(s),
                None => break,
            }
        }
        Ok(out)
    }

    pub fn prompts(&self, t: u32) -> Result<Vec<SyntheticPrompt>> {
        read_records(&self.path(t, files::PROMPTS))
    }

    /// Similarity and topic/intention reports over a sample of `prompts`,
    /// written to `out_dir`.
    pub fn analyze(&self, prompts: &[String], out_dir: &Path) -> Result<AnalysisOutput> {
        analyze_prompts(self.cfg, self.backend, prompts, out_dir)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    pub similarity: SimilarityReport,
    pub topics: TopicIntentReport,
}

/// Samples up to `analysis.sample_size` prompts, then writes
/// `similarity.ndjson`, `similarity_histogram.csv`, `similarity.svg` and
/// `topics.ndjson` into `out_dir`.
pub fn analyze_prompts(
    cfg: &RunConfig,
    backend: &dyn ModelBackend,
    prompts: &[String],
    out_dir: &Path,
) -> Result<AnalysisOutput> {
    let a = &cfg.analysis;
    let sample = sample_prompts(
        prompts,
        a.sample_size,
        derive_seed(cfg.master_seed, &["analysis-sample"]),
    );
    let spec = HistogramSpec {
        lo: a.lo,
        hi: a.hi,
        buckets: a.buckets,
    };
    let similarity = inter_prompt_similarity(&sample, backend, &a.embedder, spec, cfg.max_in_flight)?;
    let topics = classify_prompts(
        &sample,
        backend,
        &a.classifier,
        &cfg.generation_params(),
        cfg.max_in_flight,
    );
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_records(&out_dir.join("similarity.ndjson"), std::slice::from_ref(&similarity))?;
    atomic_write(
        &out_dir.join("similarity_histogram.csv"),
        similarity.histogram_csv().as_bytes(),
    )?;
    atomic_write(&out_dir.join("similarity.svg"), similarity.histogram_svg().as_bytes())?;
    write_records(&out_dir.join("topics.ndjson"), std::slice::from_ref(&topics))?;
    Ok(AnalysisOutput { similarity, topics })
}

/// Projects text pairs onto the toy vocabulary (keeping the first
/// `max_tokens_per_side` response tokens and the last prompt tokens), drops
/// projected duplicates, caps the count, and splits by a per-pair hash.
pub fn project_and_split(
    dataset: &[PreferencePair],
    s: &SimpoSection,
    seed: u64,
) -> (Vec<TokenPair>, Vec<TokenPair>) {
    let mut seen = std::collections::HashSet::new();
    let mut projected: Vec<TokenPair> = Vec::new();
    for p in dataset {
        let cap = s.max_tokens_per_side;
        let mut prompt = text_to_tokens(&p.prompt, s.vocab_size);
        prompt.drain(..prompt.len().saturating_sub(cap));
        let mut chosen = text_to_tokens(&p.chosen, s.vocab_size);
        chosen.truncate(cap);
        let mut rejected = text_to_tokens(&p.rejected, s.vocab_size);
        rejected.truncate(cap);
        let tp = TokenPair {
            prompt,
            chosen,
            rejected,
        };
        if tp.chosen != tp.rejected && seen.insert(tp.clone()) {
            projected.push(tp);
        }
    }
    let projected = sample_prompts(&projected, s.max_pairs, seed);
    let seed_bytes = seed.to_le_bytes();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for tp in projected {
        let key = serde_json::to_vec(&tp).expect("token pair serializes");
        let u = crate::rng::unit_float(hash_parts([&seed_bytes[..], b"split", &key[..]]));
        if u < s.validation_fraction {
            val.push(tp);
        } else {
            train.push(tp);
        }
    }
    (train, val)
}

pub fn summary_row(s: &IterationState) -> SummaryRow {
    SummaryRow {
        t: s.t,
        prompts: s.prompt_stats.generated,
        candidates: s.filter_stats.total,
        retained: s.filter_stats.retained,
        rejected_by_reason: s.filter_stats.rejected_by_reason.clone(),
        added: s.accumulate.added,
        dataset_size: s.dataset_size,
        best_beta: s.simpo_report.best_beta,
        best_val_loss: s.simpo_report.best_val_loss,
        manifest_checksum: s.manifest_checksum.clone(),
    }
}

/// Plain-text table of summary rows.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:>3} {:>8} {:>10} {:>8} {:>8} {:>7} {:>8} {:>6} {:>9}  rejected\n",
        "t", "prompts", "candidates", "retained", "rejected", "added", "|D|", "beta", "val_loss"
    );
    for r in rows {
        let rejected: usize = r.rejected_by_reason.values().sum();
        let reasons: Vec<String> = r
            .rejected_by_reason
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        out.push_str(&format!(
            "{:>3} {:>8} {:>10} {:>8} {:>8} {:>7} {:>8} {:>6} {:>9}  {}\n",
            r.t,
            r.prompts,
            r.candidates,
            r.retained,
            rejected,
            r.added,
            r.dataset_size,
            r.best_beta.map(|b| b.to_string()).unwrap_or_else(|| "-".into()),
            r.best_val_loss
                .map(|l| format!("{l:.4}"))
                .unwrap_or_else(|| "-".into()),
            reasons.join(" ")
        ));
    }
    out
}

/// Writes a fresh run scaffold next to `config_path`: the config file, a
/// seed set and a corpus.
pub fn scaffold(config_path: &Path, cfg: &RunConfig, seed_examples: usize, paragraphs: usize) -> Result<()> {
    let dir = config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let seed = crate::fixtures::seed_examples(seed_examples, cfg.master_seed);
    let corpus = crate::fixtures::corpus(paragraphs, cfg.master_seed);
    let cfg = cfg.clone().with_base_dir(dir);
    write_records(&cfg.resolve(&cfg.seed_data_path), &seed)?;
    write_records(&cfg.resolve(&cfg.corpus_path), &corpus)?;
    atomic_write(config_path, cfg.canonical().as_bytes())
}
