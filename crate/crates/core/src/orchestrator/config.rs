//! Run configuration, loaded from a TOML file. Relative paths resolve against
//! the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{
    GenerationParams, HttpConfig, ModelRef, ScoreKind, Scorer, DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
};
use crate::io::sha256_hex;
use crate::simpo::{ContextKind, SimpoConfig, DEFAULT_BETA_GRID, DEFAULT_GAMMA};
use crate::{Error, Result};

pub const DEFAULT_ITERATIONS: u32 = 4;
pub const DEFAULT_PROMPTS_PER_ITERATION: usize = 50_000;
pub const DEFAULT_PER_ITER_CAP: usize = 10_000;
pub const DEFAULT_PAIRWISE_THRESHOLD: f64 = 0.20;
pub const DEFAULT_SCALAR_THRESHOLD: f64 = 0.02;

/// Serializes a [`ModelRef`] as its compact `kind:target#name` string.
mod model_str {
    use super::ModelRef;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &ModelRef, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ModelRef, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

mod model_list_str {
    use super::ModelRef;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(refs: &[ModelRef], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(refs.iter().map(|r| r.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<ModelRef>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSection {
    pub kind: ScoreKind,
    #[serde(with = "model_str")]
    pub model: ModelRef,
    pub pairwise_threshold: f64,
    pub scalar_threshold: f64,
}

impl Default for ScorerSection {
    fn default() -> Self {
        ScorerSection {
            kind: ScoreKind::Pairwise,
            model: ModelRef::mock(1, "judge"),
            pairwise_threshold: DEFAULT_PAIRWISE_THRESHOLD,
            scalar_threshold: DEFAULT_SCALAR_THRESHOLD,
        }
    }
}

impl ScorerSection {
    pub fn scorer(&self) -> Scorer {
        Scorer {
            kind: self.kind,
            model: self.model.clone(),
        }
    }

    /// Threshold matching the scorer's output kind.
    pub fn threshold(&self) -> f64 {
        match self.kind {
            ScoreKind::Pairwise => self.pairwise_threshold,
            ScoreKind::Scalar => self.scalar_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizeMode {
    /// Train the toy policy on the token projection of the dataset.
    Toy,
    /// Only emit the dataset and a delegation record.
    Export,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimpoSection {
    pub beta_grid: Vec<f64>,
    pub gamma: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub vocab_size: usize,
    pub context: ContextKind,
    /// Upper bound on pairs used for toy training each iteration.
    pub max_pairs: usize,
    /// Responses are truncated to this many tokens after projection.
    pub max_tokens_per_side: usize,
    /// Share of projected pairs held out for choosing beta.
    pub validation_fraction: f64,
    pub init_scale: f64,
    pub mode: OptimizeMode,
}

impl Default for SimpoSection {
    fn default() -> Self {
        SimpoSection {
            beta_grid: DEFAULT_BETA_GRID.to_vec(),
            gamma: DEFAULT_GAMMA,
            learning_rate: 0.5,
            steps: 100,
            vocab_size: 16,
            context: ContextKind::Bigram,
            max_pairs: 256,
            max_tokens_per_side: 32,
            validation_fraction: 0.2,
            init_scale: 0.1,
            mode: OptimizeMode::Both,
        }
    }
}

impl SimpoSection {
    /// Base config; beta is replaced during the grid search.
    pub fn base(&self) -> SimpoConfig {
        SimpoConfig {
            beta: self.beta_grid.first().copied().unwrap_or(DEFAULT_BETA_GRID[0]),
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            steps: self.steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsSection {
    /// The starting policy; every rejected response comes from it.
    #[serde(with = "model_str")]
    pub initial: ModelRef,
    /// Question generator, fixed for the whole run.
    #[serde(with = "model_str")]
    pub generator: ModelRef,
    /// Entry `t-1` is the policy answering prompts in iteration `t`. Missing
    /// entries repeat the last one; an empty list means the initial model.
    #[serde(with = "model_list_str")]
    pub policies: Vec<ModelRef>,
    /// Entry `t-1` is the improver used in iteration `t`, same fallback rule.
    #[serde(with = "model_list_str")]
    pub improvers: Vec<ModelRef>,
}

impl Default for ModelsSection {
    fn default() -> Self {
        ModelsSection {
            initial: ModelRef::mock(1, "initial"),
            generator: ModelRef::mock(1, "generator"),
            policies: (1..=DEFAULT_ITERATIONS)
                .map(|t| match t {
                    1 => ModelRef::mock(1, "initial"),
                    _ => ModelRef::mock(1, format!("policy-{}", t - 1)),
                })
                .collect(),
            improvers: (1..=DEFAULT_ITERATIONS)
                .map(|t| ModelRef::mock(1, format!("improver-{t}")))
                .collect(),
        }
    }
}

impl ModelsSection {
    fn pick(list: &[ModelRef], t: u32, fallback: &ModelRef) -> ModelRef {
        let i = (t.max(1) - 1) as usize;
        list.get(i).or(list.last()).unwrap_or(fallback).clone()
    }

    pub fn policy(&self, t: u32) -> ModelRef {
        Self::pick(&self.policies, t, &self.initial)
    }

    pub fn improver(&self, t: u32) -> ModelRef {
        Self::pick(&self.improvers, t, &self.initial)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub sample_size: usize,
    pub buckets: usize,
    pub lo: f64,
    pub hi: f64,
    #[serde(with = "model_str")]
    pub embedder: ModelRef,
    #[serde(with = "model_str")]
    pub classifier: ModelRef,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            sample_size: crate::analysis::DEFAULT_SAMPLE_SIZE,
            buckets: crate::analysis::DEFAULT_BUCKETS,
            lo: 0.0,
            hi: 1.0,
            embedder: ModelRef::mock(1, "embedder"),
            classifier: ModelRef::mock(1, "classifier"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// Parent of the run directory `<run_root>/<name>`.
    pub run_root: PathBuf,
    pub seed_data_path: PathBuf,
    pub corpus_path: PathBuf,
    pub stopwords_path: Option<PathBuf>,
    pub names_path: Option<PathBuf>,
    pub iterations: u32,
    pub prompts_per_iteration: usize,
    pub per_iter_cap: usize,
    pub master_seed: u64,
    pub max_in_flight: usize,
    pub generation: GenerationSection,
    pub scorer: ScorerSection,
    pub simpo: SimpoSection,
    pub models: ModelsSection,
    pub analysis: AnalysisSection,
    pub http: HttpConfig,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "default".into(),
            run_root: "run".into(),
            seed_data_path: "seed.ndjson".into(),
            corpus_path: "corpus.ndjson".into(),
            stopwords_path: None,
            names_path: None,
            iterations: DEFAULT_ITERATIONS,
            prompts_per_iteration: DEFAULT_PROMPTS_PER_ITERATION,
            per_iter_cap: DEFAULT_PER_ITER_CAP,
            master_seed: 0,
            max_in_flight: 8,
            generation: GenerationSection::default(),
            scorer: ScorerSection::default(),
            simpo: SimpoSection::default(),
            models: ModelsSection::default(),
            analysis: AnalysisSection::default(),
            http: HttpConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    /// Small settings for a laptop-sized mock run.
    pub fn desk() -> Self {
        let mut cfg = RunConfig {
            name: "desk".into(),
            iterations: 2,
            prompts_per_iteration: 500,
            ..RunConfig::default()
        };
        cfg.simpo.steps = 60;
        cfg.simpo.max_pairs = 160;
        cfg
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(single_line(&e.to_string())))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    /// Reads, parses and validates (including path existence) a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty());
        let cfg = Self::parse(&text, base.unwrap_or(Path::new(".")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.resolve(&self.run_root).join(&self.name)
    }

    /// Checks value ranges only.
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation
    pub fn validate_values(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return fail(format!("run name `{}` must be a plain directory name", self.name));
        }
        if self.iterations < 1 {
            return fail("iterations must be >= 1".into());
        }
        if self.prompts_per_iteration < 1 {
            return fail("prompts_per_iteration must be >= 1".into());
        }
        if self.per_iter_cap < 1 {
            return fail("per_iter_cap must be >= 1".into());
        }
        if self.max_in_flight < 1 {
            return fail("max_in_flight must be >= 1".into());
        }
        for (label, th) in [
            ("pairwise_threshold", self.scorer.pairwise_threshold),
            ("scalar_threshold", self.scorer.scalar_threshold),
        ] {
            if !(th.is_finite() && th > 0.0) {
                return fail(format!("{label} must be a finite value > 0, got {th}"));
            }
        }
        self.generation_params()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let s = &self.simpo;
        if s.beta_grid.is_empty() {
            return fail("simpo.beta_grid must not be empty".into());
        }
        for &beta in &s.beta_grid {
            SimpoConfig { beta, ..s.base() }
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if s.steps < 1 || s.vocab_size < 2 || s.max_pairs < 2 || s.max_tokens_per_side < 1 {
            return fail(
                "simpo needs steps >= 1, vocab_size >= 2, max_pairs >= 2, max_tokens_per_side >= 1"
                    .into(),
            );
        }
        if !(s.validation_fraction > 0.0 && s.validation_fraction < 1.0) {
            return fail("simpo.validation_fraction must lie in (0, 1)".into());
        }
        if !(s.init_scale.is_finite() && s.init_scale >= 0.0) {
            return fail("simpo.init_scale must be finite and >= 0".into());
        }
        let a = &self.analysis;
        if a.buckets < 1 || !(a.lo < a.hi) || a.sample_size < 2 {
            return fail("analysis needs buckets >= 1, lo < hi, sample_size >= 2".into());
        }
        Ok(())
    }

    /// Full validation: value ranges plus existence of every input path.
    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        let mut paths = vec![("seed_data_path", &self.seed_data_path), ("corpus_path", &self.corpus_path)];
        if let Some(p) = &self.stopwords_path {
            paths.push(("stopwords_path", p));
        }
        if let Some(p) = &self.names_path {
            paths.push(("names_path", p));
        }
        for (label, p) in paths {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(Error::Config(format!("{label} {} does not exist", full.display())));
            }
        }
        Ok(())
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.generation.temperature,
            max_tokens: self.generation.max_tokens,
            seed: self.generation.seed,
        }
    }

    /// Canonical TOML text: every field explicit, fixed key order.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_round_trips() {
        let cfg = RunConfig::desk();
        let back = RunConfig::parse(&cfg.canonical(), Path::new(".")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse("iterationz = 3\n", Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(!err.to_string().contains('\n'));
    }

    #[test]
    fn value_ranges() {
        let mut cfg = RunConfig::default();
        cfg.iterations = 0;
        assert!(cfg.validate_values().is_err());
        let mut cfg = RunConfig::default();
        cfg.scorer.pairwise_threshold = 0.0;
        assert!(cfg.validate_values().is_err());
        let mut cfg = RunConfig::default();
        cfg.generation.temperature = -1.0;
        assert!(cfg.validate_values().is_err());
        assert!(RunConfig::default().validate_values().is_ok());
    }

    #[test]
    fn missing_paths_fail_load_validation() {
        let cfg = RunConfig::default().with_base_dir("/nonexistent-dir");
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn per_iteration_model_fallback() {
        let mut m = ModelsSection::default();
        m.policies.truncate(2);
        assert_eq!(m.policy(1), m.initial);
        assert_eq!(m.policy(4).model_name, "policy-1");
        m.policies.clear();
        assert_eq!(m.policy(3), m.initial);
    }

    #[test]
    fn threshold_follows_scorer_kind() {
        let mut s = ScorerSection::default();
        assert_eq!(s.threshold(), 0.20);
        s.kind = ScoreKind::Scalar;
        assert_eq!(s.threshold(), 0.02);
    }
}
