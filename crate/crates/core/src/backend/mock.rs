//! Deterministic seeded mock models.
//!
//! Every output is a pure function of the model seed, the model name and the
//! call inputs. Generation recognizes the three pipeline templates (question
//! generation, answer rewriting, topic classification) so the full loop can
//! run without a network; anything else is answered from a small phrase
//! grammar.
//!
//! Scoring uses a per-response quality
//!
//! ```text
//! q(p, r) = 0.4 * ln(1 + distinct_words(r))
//!         + 0.15 * min(shared_words(p, r), 4)
//!         - 2.0 * repetition_ratio(r)
//!         + 0.4 * (u - 0.5),  u = unit_float(hash_parts(["quality", seed, name, p, r]))
//! ```
//!
//! Pairwise scores are `q(p, a) - q(p, b)`; scalar scores are
//! `1 / (1 + exp(-(q(p, r) - 2)))`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    check_candidates, check_generate, check_kind, BackendError, Completion, GenerationParams,
    ModelBackend, ModelRef, ScoreKind, ScoreResult, Scorer,
};
use crate::rng::{hash_parts, seeded, unit_float};
use crate::synthesis::repetition_ratio;
use crate::templates;

/// Embedding dimension unless the model name ends in `-d<N>`.
pub const DEFAULT_EMBED_DIM: usize = 64;

const OPENERS: &[&str] = &[
    "Here is a careful answer.",
    "Let us work through this step by step.",
    "This question has a clear structure.",
    "A short overview helps first.",
    "There are a few things to keep in mind.",
];

const BODY: &[&str] = &[
    "The central idea behind {a} is how it shapes {b} in practice.",
    "When you look at {a} closely, {b} turns out to matter most.",
    "A common mistake is to treat {a} and {b} as unrelated.",
    "In most settings {a} depends on careful handling of {b}.",
    "One useful example compares {a} with {b} under simple conditions.",
    "Experts usually start from {a} and then refine {b}.",
    "The evidence suggests that {a} improves when {b} is measured.",
    "You can check the result by recomputing {a} from {b}.",
    "Historically {a} was studied long before {b} became common.",
    "The main trade-off is between {a} and the cost of {b}.",
];

const ADDITIONS: &[&str] = &[
    "To be precise, {a} should be defined before it is used.",
    "A worked example makes this concrete: start with {a}, then apply {b}.",
    "It is also worth correcting a subtle point about {a}.",
    "In addition, {b} provides a useful sanity check.",
    "For completeness, note the limits of {a} when {b} is large.",
    "Each step above follows directly from the definition of {b}.",
];

const QUESTION_FORMS: &[&str] = &[
    "Explain how {a} relates to {b}, and give an example involving {c}.",
    "Write a short guide on {a} that also covers {b} and {c}.",
    "What is the role of {a} in {b}? Discuss with reference to {c}.",
    "Design a lesson plan about {a} and {b} that uses {c}.",
    "Compare {a} and {b}, and describe where {c} fits in.",
];

const ODD_LABELS: &[&str] = &["Quantum gardening", "Miscellaneous", "Underwater basket weaving"];

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl MockBackend {
    fn seed_of(model: &ModelRef) -> Result<u64, BackendError> {
        model.mock_seed()
    }

    /// Quality used by both scoring routes; see the module docs.
    pub fn quality(seed: u64, model_name: &str, prompt: &str, response: &str) -> f64 {
        let words = content_words(response);
        let distinct: BTreeSet<&str> = words.iter().map(String::as_str).collect();
        let prompt_words: BTreeSet<String> = content_words(prompt).into_iter().collect();
        let shared = distinct.iter().filter(|w| prompt_words.contains(**w)).count();
        let seed_s = seed.to_string();
        let u = unit_float(hash_parts([
            "quality",
            seed_s.as_str(),
            model_name,
            prompt,
            response,
        ]));
        0.4 * (1.0 + distinct.len() as f64).ln() + 0.15 * shared.min(4) as f64
            - 2.0 * repetition_ratio(response)
            + 0.4 * (u - 0.5)
    }

    pub fn embed_dim(model_name: &str) -> usize {
        model_name
            .rsplit_once("-d")
            .and_then(|(_, n)| n.parse::<usize>().ok())
            .filter(|n| *n > 0)
            .unwrap_or(DEFAULT_EMBED_DIM)
    }
}

impl ModelBackend for MockBackend {
    fn generate(
        &self,
        model: &ModelRef,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<Completion, BackendError> {
        check_generate(prompt, params)?;
        let seed = Self::seed_of(model)?;
        let seed_s = seed.to_string();
        let temp = params.temperature.to_bits().to_le_bytes();
        let max = params.max_tokens.to_le_bytes();
        let call_seed = params.seed.unwrap_or(0).to_le_bytes();
        let h = hash_parts([
            b"generate".as_slice(),
            seed_s.as_bytes(),
            model.model_name.as_bytes(),
            prompt.as_bytes(),
            &temp,
            &max,
            &call_seed,
        ]);
        let text = if let Some(keywords) = promptgen_keywords(prompt) {
            question_and_solution(h, &keywords)
        } else if let Some((question, original)) = improver_slots(prompt) {
            rewrite(h, &question, &original)
        } else if let Some(given) = classifier_slot(prompt) {
            classify(h, &given)
        } else {
            answer(h, prompt)
        };
        let (text, truncated) = cap_tokens(text, params.max_tokens as usize);
        if text.trim().is_empty() {
            return Err(BackendError::EmptyOutput {
                model: model.model_name.clone(),
            });
        }
        Ok(Completion { text, truncated })
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
        let seed = Self::seed_of(&scorer.model)?;
        let name = &scorer.model.model_name;
        let value = if a == b {
            0.0
        } else {
            Self::quality(seed, name, prompt, a) - Self::quality(seed, name, prompt, b)
        };
        ScoreResult::new(ScoreKind::Pairwise, value)
    }

    fn score_single(
        &self,
        scorer: &Scorer,
        prompt: &str,
        response: &str,
    ) -> Result<ScoreResult, BackendError> {
        check_kind(scorer, ScoreKind::Scalar)?;
        check_candidates(&[response])?;
        let seed = Self::seed_of(&scorer.model)?;
        let q = Self::quality(seed, &scorer.model.model_name, prompt, response);
        ScoreResult::new(ScoreKind::Scalar, 1.0 / (1.0 + (-(q - 2.0)).exp()))
    }

    fn embed(&self, model: &ModelRef, text: &str) -> Result<Vec<f64>, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyText);
        }
        let seed = Self::seed_of(model)?.to_string();
        let dim = Self::embed_dim(&model.model_name);
        let mut v = vec![0.0; dim];
        for w in content_words(text) {
            let h = hash_parts(["embed", seed.as_str(), w.as_str()]);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % dim as u64) as usize] += sign;
        }
        let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            let h = hash_parts(["embed-text", seed.as_str(), text]);
            v[(h % dim as u64) as usize] = 1.0;
            norm = 1.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

/// Lowercased alphabetic words of length >= 3.
fn content_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|w| w.chars().count() >= 3)
        .map(str::to_lowercase)
        .collect()
}

fn topic_words(text: &str, limit: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for w in content_words(text) {
        if w.len() >= 4 && seen.insert(w.clone()) {
            out.push(w);
            if out.len() == limit {
                break;
            }
        }
    }
    if out.is_empty() {
        out.push("this topic".to_string());
    }
    out
}

fn fill(template: &str, words: &[String], rng: &mut impl Rng) -> String {
    let pick = |rng: &mut dyn rand::RngCore| words[rng.gen_range(0..words.len())].clone();
    let a = pick(rng);
    let b = pick(rng);
    let c = pick(rng);
    template.replace("{a}", &a).replace("{b}", &b).replace("{c}", &c)
}

fn answer(h: u64, prompt: &str) -> String {
    let mut rng = seeded(h);
    let words = topic_words(prompt, 6);
    if h.is_multiple_of(12) {
        return degenerate(&words[0]);
    }
    let mut parts = vec![OPENERS.choose(&mut rng).expect("non-empty").to_string()];
    for _ in 0..rng.gen_range(2..=5) {
        let t = BODY.choose(&mut rng).expect("non-empty");
        parts.push(fill(t, &words, &mut rng));
    }
    parts.join(" ")
}

fn degenerate(word: &str) -> String {
    format!("I think {word} is {word}. ").repeat(12).trim_end().to_string()
}

fn rewrite(h: u64, question: &str, original: &str) -> String {
    let mut rng = seeded(h);
    if h.is_multiple_of(15) {
        return original.to_string();
    }
    let words = topic_words(question, 6);
    if h % 25 == 1 {
        return degenerate(&words[0]);
    }
    let mut seen = BTreeSet::new();
    let mut parts: Vec<String> = original
        .split_inclusive(". ")
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty() && seen.insert(s.clone()))
        .collect();
    for _ in 0..rng.gen_range(2..=4) {
        let t = ADDITIONS.choose(&mut rng).expect("non-empty");
        parts.push(fill(t, &words, &mut rng));
    }
    let body = parts.join(" ");
    if h % 5 == 2 {
        format!("Rewritten Answer: {body}")
    } else {
        body
    }
}

fn question_and_solution(h: u64, keywords: &[String]) -> String {
    let mut rng = seeded(h);
    let mut kw = keywords.to_vec();
    while kw.len() < 3 {
        kw.push("ideas".to_string());
    }
    let form = QUESTION_FORMS.choose(&mut rng).expect("non-empty");
    let question = form
        .replace("{a}", &kw[0])
        .replace("{b}", &kw[1])
        .replace("{c}", &kw[2]);
    let mut solution = Vec::new();
    for _ in 0..rng.gen_range(2..=3) {
        let t = BODY.choose(&mut rng).expect("non-empty");
        solution.push(fill(t, &kw, &mut rng));
    }
    let opener = if h.is_multiple_of(6) { "</solution>" } else { "<solution>" };
    format!(
        "<question>\n{question}\n</question>\n\n{opener}\n{}\n</solution>",
        solution.join(" ")
    )
}

fn classify(h: u64, given: &str) -> String {
    if h.is_multiple_of(20) {
        return "I am not sure about this one.".to_string();
    }
    let words = topic_words(given, 3).join(" ");
    let g = hash_parts(["label", words.as_str()]);
    let topic = if h % 10 == 1 {
        ODD_LABELS[(g % ODD_LABELS.len() as u64) as usize]
    } else {
        templates::TOPICS[(g % templates::TOPICS.len() as u64) as usize]
    };
    let intention = templates::INTENTIONS[((g >> 8) % templates::INTENTIONS.len() as u64) as usize];
    if h.is_multiple_of(2) {
        format!("{{'topic': '{topic}', 'intention': '{intention}'}}")
    } else {
        format!("{{\"topic\": \"{topic}\", \"intention\": \"{intention}\"}}")
    }
}

fn promptgen_keywords(prompt: &str) -> Option<Vec<String>> {
    let (_, rest) = prompt.split_once("## Given Keywords\n\n")?;
    let line = rest.split("\n\n").next()?;
    Some(
        line.split(',')
            .map(|k| k.trim().to_string())
            .filter(|k| !k.is_empty())
            .collect(),
    )
}

fn improver_slots(prompt: &str) -> Option<(String, String)> {
    let (_, rest) = prompt.split_once("Given Question: ")?;
    let (question, rest) = rest.split_once("\n\nOriginal Answer: ")?;
    let original = rest.rsplit_once("\n\nRewritten Answer:")?.0;
    Some((question.to_string(), original.to_string()))
}

fn classifier_slot(prompt: &str) -> Option<String> {
    let (_, rest) = prompt.split_once("### Given Text\n\n")?;
    let given = rest.rsplit_once("\n\n### Topic List")?.0;
    Some(given.to_string())
}

fn cap_tokens(text: String, max_tokens: usize) -> (String, bool) {
    let count = text.split_whitespace().count();
    if count <= max_tokens {
        return (text, false);
    }
    let kept: Vec<&str> = text.split_whitespace().take(max_tokens).collect();
    (kept.join(" "), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::cosine;

    fn pairwise(seed: u64) -> Scorer {
        Scorer {
            kind: ScoreKind::Pairwise,
            model: ModelRef::mock(seed, "pairrm"),
        }
    }

    fn scalar(seed: u64) -> Scorer {
        Scorer {
            kind: ScoreKind::Scalar,
            model: ModelRef::mock(seed, "armo"),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let m = ModelRef::mock(7, "policy");
        let p = GenerationParams::default();
        let a = MockBackend.generate(&m, "hello", &p).unwrap();
        let b = MockBackend.generate(&m, "hello", &p).unwrap();
        assert_eq!(a, b);
        assert!(!a.text.is_empty());
    }

    #[test]
    fn seed_changes_output() {
        let p = GenerationParams::default();
        let prompt = "Describe the water cycle in detail.";
        let outs: BTreeSet<String> = (0..6)
            .map(|s| MockBackend.generate(&ModelRef::mock(s, "policy"), prompt, &p).unwrap().text)
            .collect();
        assert!(outs.len() > 1);
    }

    #[test]
    fn empty_prompt_rejected() {
        let err = MockBackend
            .generate(&ModelRef::mock(7, "p"), "", &GenerationParams::default())
            .unwrap_err();
        assert!(matches!(err, BackendError::EmptyPrompt));
    }

    #[test]
    fn token_cap_flags_truncation() {
        let mut p = GenerationParams::default();
        p.max_tokens = 3;
        let c = MockBackend
            .generate(&ModelRef::mock(1, "p"), "Explain photosynthesis please", &p)
            .unwrap();
        assert!(c.truncated);
        assert_eq!(c.text.split_whitespace().count(), 3);
    }

    #[test]
    fn pairwise_zero_on_identical_and_antisymmetric() {
        let s = pairwise(3);
        let z = MockBackend.score_pair(&s, "p", "same text", "same text").unwrap();
        assert_eq!(z.value, 0.0);
        let ab = MockBackend.score_pair(&s, "p", "first answer", "second reply").unwrap();
        let ba = MockBackend.score_pair(&s, "p", "second reply", "first answer").unwrap();
        assert_eq!(ab.value, -ba.value);
        assert_eq!(ab.kind, ScoreKind::Pairwise);
    }

    #[test]
    fn kind_mismatch_both_ways() {
        let err = MockBackend.score_pair(&scalar(1), "p", "a", "b").unwrap_err();
        assert!(matches!(err, BackendError::KindMismatch { .. }));
        let err = MockBackend.score_single(&pairwise(1), "p", "a").unwrap_err();
        assert!(matches!(err, BackendError::KindMismatch { .. }));
    }

    #[test]
    fn empty_candidates_rejected() {
        let err = MockBackend.score_pair(&pairwise(1), "p", "", "b").unwrap_err();
        assert!(matches!(err, BackendError::EmptyCandidate));
    }

    #[test]
    fn scalar_is_deterministic_in_unit_interval_and_gaps_antisymmetric() {
        let s = scalar(9);
        let a = MockBackend.score_single(&s, "p", "alpha beta gamma").unwrap();
        let b = MockBackend.score_single(&s, "p", "alpha beta gamma").unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.value));
        let c = MockBackend.score_single(&s, "p", "delta epsilon").unwrap();
        assert_eq!(a.value - c.value, -(c.value - a.value));
    }

    #[test]
    fn embeddings_unit_norm_and_self_similar() {
        let m = ModelRef::mock(5, "embed");
        let a = MockBackend.embed(&m, "volcanic basalt columns").unwrap();
        let b = MockBackend.embed(&m, "volcanic basalt columns").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), DEFAULT_EMBED_DIM);
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
        // punctuation-only text still embeds
        let p = MockBackend.embed(&m, "?!").unwrap();
        assert!((p.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn embed_dim_from_name() {
        assert_eq!(MockBackend::embed_dim("embed-d16"), 16);
        assert_eq!(MockBackend::embed_dim("embed"), DEFAULT_EMBED_DIM);
        let v = MockBackend.embed(&ModelRef::mock(1, "e-d8"), "words here").unwrap();
        assert_eq!(v.len(), 8);
    }

    #[test]
    fn recognizes_question_template() {
        let k = crate::keywords::KeywordList::new(
            ["quantum", "lattice", "annealing"],
            crate::keywords::KeywordSource::Corpus("p1".into()),
        )
        .unwrap();
        let prompt = templates::render_promptgen(&k);
        let out = MockBackend
            .generate(&ModelRef::mock(2, "gen"), &prompt, &GenerationParams::default())
            .unwrap();
        let qa = templates::parse_generated_qa(&out.text).unwrap();
        assert!(qa.question.contains("quantum"));
    }

    #[test]
    fn recognizes_classifier_template() {
        let prompt = templates::render_topic_intent("How do I fix my bike chain?");
        let mut parsed = 0;
        for seed in 0..20 {
            let out = MockBackend
                .generate(&ModelRef::mock(seed, "cls"), &prompt, &GenerationParams::default())
                .unwrap();
            if templates::parse_topic_intent(&out.text).is_ok() {
                parsed += 1;
            }
        }
        assert!(parsed > 10);
    }
}
