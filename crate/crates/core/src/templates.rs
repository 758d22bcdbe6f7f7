//! The three prompt templates and parsers for their expected outputs.
//!
//! Template text lives in `templates/*.txt` and is embedded at build time;
//! rendering only substitutes the placeholders.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::keywords::KeywordList;

pub const PROMPTGEN_TEMPLATE: &str = include_str!("../templates/promptgen.txt");
pub const IMPROVER_TEMPLATE: &str = include_str!("../templates/improver.txt");
pub const TOPIC_INTENT_TEMPLATE: &str = include_str!("../templates/topic_intent.txt");

/// Header line that precedes the question/solution block.
pub const QA_HEADER: &str = "== GENERATED QUESTION & CORRECT SOLUTION  ==";
/// Marker after which an improver's rewrite begins.
pub const REWRITE_MARKER: &str = "Rewritten Answer:";

pub const TOPICS: [&str; 30] = [
    "Technology",
    "Health and wellness",
    "Travel and adventure",
    "Food and drink",
    "Art and culture",
    "Science and innovation",
    "Fashion and style",
    "Relationships and dating",
    "Sports and fitness",
    "Nature and the environment",
    "Music and entertainment",
    "Politics and current events",
    "Education and learning",
    "Money and finance",
    "Work and career",
    "Philosophy and ethics",
    "History and nostalgia",
    "Social media and communication",
    "Creativity and inspiration",
    "Personal growth and development",
    "Spirituality and faith",
    "Pop culture and trends",
    "Beauty and self-care",
    "Family and parenting",
    "Entrepreneurship and business",
    "Literature and writing",
    "Gaming and technology",
    "Mindfulness and meditation",
    "Diversity and inclusion",
    "Travel and culture exchange",
];

pub const INTENTIONS: [&str; 40] = [
    "Seek advice",
    "Design help",
    "Plan something",
    "Discuss topics",
    "Analyze something",
    "Evaluate something",
    "Search help",
    "Learn something",
    "Writing/polishing help",
    "Quality chat",
    "Create something",
    "Fix something",
    "Compare something",
    "Transfer something",
    "Calculate something",
    "Navigate",
    "Explore something new",
    "Play a game",
    "Install/uninstall help",
    "Book/cancel help",
    "Buy/sell suggestions",
    "Register/enroll help",
    "Translation help",
    "Proofreading/editing help",
    "Mental health advice",
    "Recommendations",
    "Troubleshoot help",
    "Project feedback",
    "Creative brainstorming",
    "Time management help",
    "Organization help",
    "Public speaking help",
    "Job application help",
    "Networking help",
    "Language learning help",
    "Technology setup help",
    "Event coordination help",
    "Social media management help",
    "Conflict resolution help",
    "Sustainable living advice",
];

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("generated output lacks a non-empty {section} section")]
    MissingSection { section: &'static str, raw: String },
    #[error("cannot parse topic/intention dictionary")]
    Classification { raw: String },
}

impl ParseError {
    /// The unparsed model output, kept for auditing.
    pub fn raw(&self) -> &str {
        match self {
            ParseError::MissingSection { raw, .. } | ParseError::Classification { raw } => raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQA {
    pub question: String,
    pub solution: String,
}

impl GeneratedQA {
    /// Serializes into the output shape the question-generation template asks
    /// for (without the header line).
    pub fn to_output(&self) -> String {
        format!(
            "<question>\n{}\n</question>\n\n<solution>\n{}\n</solution>",
            self.question, self.solution
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicIntent {
    pub topic: String,
    pub intention: String,
}

pub fn render_promptgen(keywords: &KeywordList) -> String {
    PROMPTGEN_TEMPLATE.replace("{keywords}", &keywords.joined())
}

pub fn render_improver(question: &str, original_answer: &str) -> String {
    IMPROVER_TEMPLATE
        .replace("{self-generated_question}", question)
        .replace("{original_model_completion}", original_answer)
}

pub fn render_topic_intent(prompt_text: &str) -> String {
    TOPIC_INTENT_TEMPLATE.replace("{given_text}", prompt_text)
}

/// Extracts question and solution from generator output. A leading header
/// line is skipped, and either `<solution>` or `</solution>` opens the
/// solution block.
pub fn parse_generated_qa(raw: &str) -> Result<GeneratedQA, ParseError> {
    let missing = |section| ParseError::MissingSection {
        section,
        raw: raw.to_string(),
    };
    let mut body = raw.trim_start();
    if let Some(rest) = body.strip_prefix(QA_HEADER) {
        body = rest;
    }

    let q_close = body.find("</question>").ok_or_else(|| missing("question"))?;
    // innermost opener before the first closer
    let q_open = body[..q_close]
        .rfind("<question>")
        .ok_or_else(|| missing("question"))?;
    let question = body[q_open + "<question>".len()..q_close].trim();
    if question.is_empty() {
        return Err(missing("question"));
    }

    let rest = &body[q_close + "</question>".len()..];
    let open = match (rest.find("<solution>"), rest.find("</solution>")) {
        (Some(a), Some(b)) if a < b => a + "<solution>".len(),
        (Some(a), None) => a + "<solution>".len(),
        (_, Some(b)) => b + "</solution>".len(),
        (None, None) => return Err(missing("solution")),
    };
    let tail = &rest[open..];
    let close = tail.find("</solution>").ok_or_else(|| missing("solution"))?;
    let solution = tail[..close].trim();
    if solution.is_empty() || solution.contains("<question>") || solution.contains("</question>") {
        return Err(missing("solution"));
    }
    Ok(GeneratedQA {
        question: question.to_string(),
        solution: solution.to_string(),
    })
}

fn dict_field(key: &str) -> &'static Regex {
    static TOPIC: OnceLock<Regex> = OnceLock::new();
    static INTENTION: OnceLock<Regex> = OnceLock::new();
    let cell = if key == "topic" { &TOPIC } else { &INTENTION };
    cell.get_or_init(|| {
        Regex::new(&format!(
            r#"(?:"{key}"|'{key}')\s*:\s*(?:"([^"]*)"|'([^']*)')"#
        ))
        .expect("static regex")
    })
}

/// Parses a single dictionary literal with `topic` and `intention` keys,
/// quoted with either single or double quotes.
pub fn parse_topic_intent(raw: &str) -> Result<TopicIntent, ParseError> {
    let err = || ParseError::Classification {
        raw: raw.to_string(),
    };
    let start = raw.find('{').ok_or_else(err)?;
    let end = raw[start..].find('}').ok_or_else(err)? + start;
    let dict = &raw[start..=end];
    let field = |key| -> Option<String> {
        let caps = dict_field(key).captures(dict)?;
        let v = caps.get(1).or_else(|| caps.get(2))?.as_str().trim();
        (!v.is_empty()).then(|| v.to_string())
    };
    Ok(TopicIntent {
        topic: field("topic").ok_or_else(err)?,
        intention: field("intention").ok_or_else(err)?,
    })
}

/// Text after the last rewrite marker, or the whole output when absent.
pub fn extract_rewrite(output: &str) -> &str {
    match output.rfind(REWRITE_MARKER) {
        Some(i) => output[i + REWRITE_MARKER.len()..].trim(),
        None => output.trim(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keywords::KeywordSource;

    fn kw() -> KeywordList {
        KeywordList::new(
            ["quantum", "lattice", "annealing"],
            KeywordSource::Corpus("p".into()),
        )
        .unwrap()
    }

    #[test]
    fn promptgen_has_sections_and_keywords() {
        let out = render_promptgen(&kw());
        for header in ["## Background", "## Given Keywords", "## Output Format", "## Output"] {
            assert!(out.contains(header), "missing {header}");
        }
        assert!(out.contains("## Given Keywords\n\nquantum, lattice, annealing\n"));
        assert!(out.ends_with(QA_HEADER));
        assert_eq!(out, render_promptgen(&kw()));
    }

    #[test]
    fn improver_slots_and_ending() {
        let out = render_improver("What is 2+2?", "5");
        assert!(out.contains("Given Question: What is 2+2?"));
        assert!(out.contains("Original Answer: 5"));
        assert!(out.ends_with("Rewritten Answer:"));
    }

    #[test]
    fn topic_template_carries_full_lists() {
        let out = render_topic_intent("How do I bake bread?");
        assert!(out.contains("### Given Text\n\nHow do I bake bread?\n\n### Topic List"));
        for t in TOPICS {
            assert!(out.contains(&format!("\"{t}\"")));
        }
        for i in INTENTIONS {
            assert!(out.contains(&format!("\"{i}\"")));
        }
    }

    #[test]
    fn parse_well_formed() {
        let qa = parse_generated_qa("<question>Q1</question>\n<solution>S1</solution>").unwrap();
        assert_eq!(qa.question, "Q1");
        assert_eq!(qa.solution, "S1");
    }

    #[test]
    fn parse_closing_tag_as_opener() {
        let qa = parse_generated_qa("<question>Q</question>\n</solution> S2 </solution>").unwrap();
        assert_eq!(qa.solution, "S2");
    }

    #[test]
    fn parse_strips_header() {
        let raw = format!("{QA_HEADER}\n<question>\nQ\n</question>\n\n<solution>\nS\n</solution>");
        let qa = parse_generated_qa(&raw).unwrap();
        assert_eq!((qa.question.as_str(), qa.solution.as_str()), ("Q", "S"));
    }

    #[test]
    fn parse_failures_keep_raw() {
        let err = parse_generated_qa("no tags at all").unwrap_err();
        assert_eq!(err.raw(), "no tags at all");
        assert!(parse_generated_qa("<question> </question><solution>S</solution>").is_err());
        assert!(parse_generated_qa("<question>Q</question><solution>S").is_err());
        assert!(parse_generated_qa("<question>Q</question>").is_err());
    }

    #[test]
    fn topic_intent_quote_styles() {
        let t = parse_topic_intent("{'topic': 'Technology', 'intention': 'Seek advice'}").unwrap();
        assert_eq!(t.topic, "Technology");
        assert_eq!(t.intention, "Seek advice");
        let t = parse_topic_intent("{\"topic\": \"X\", \"intention\": \"Y\"}").unwrap();
        assert_eq!((t.topic.as_str(), t.intention.as_str()), ("X", "Y"));
        assert!(parse_topic_intent("garbage").is_err());
        assert!(parse_topic_intent("{'topic': 'X'}").is_err());
    }

    #[test]
    fn rewrite_extraction_uses_last_marker() {
        assert_eq!(extract_rewrite("a Rewritten Answer: b Rewritten Answer:  c "), "c");
        assert_eq!(extract_rewrite("  plain  "), "plain");
    }

    #[test]
    fn qa_output_round_trips() {
        let qa = GeneratedQA {
            question: "Why?".into(),
            solution: "Because.".into(),
        };
        assert_eq!(parse_generated_qa(&qa.to_output()).unwrap(), qa);
    }
}
