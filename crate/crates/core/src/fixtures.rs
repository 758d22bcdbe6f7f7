//! Deterministic desk-scale inputs: a seed SFT set, a corpus of paragraphs
//! and token-level preference data for the toy policy.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::keywords::CorpusParagraph;
use crate::rng::seeded;
use crate::simpo::TokenPair;
use crate::synthesis::SeedExample;

const SUBJECTS: &[(&str, &str, &str)] = &[
    ("photosynthesis", "chlorophyll", "sunlight"),
    ("volcanoes", "magma", "tectonics"),
    ("compilers", "parsing", "optimization"),
    ("vaccines", "antibodies", "immunity"),
    ("glaciers", "erosion", "valleys"),
    ("inflation", "interest", "savings"),
    ("bridges", "tension", "compression"),
    ("sourdough", "fermentation", "gluten"),
    ("telescopes", "mirrors", "galaxies"),
    ("batteries", "lithium", "electrodes"),
    ("rainforests", "canopy", "biodiversity"),
    ("encryption", "keys", "ciphers"),
    ("marathons", "endurance", "hydration"),
    ("orchestras", "harmony", "conductors"),
    ("democracy", "elections", "representation"),
    ("earthquakes", "faults", "seismographs"),
    ("gardening", "compost", "seedlings"),
    ("databases", "indexes", "transactions"),
    ("coral", "reefs", "bleaching"),
    ("chess", "openings", "endgames"),
    ("meditation", "breathing", "attention"),
    ("airplanes", "lift", "turbulence"),
    ("poetry", "meter", "imagery"),
    ("recycling", "plastics", "landfills"),
    ("genetics", "chromosomes", "mutations"),
    ("astronomy", "orbits", "eclipses"),
    ("budgeting", "expenses", "forecasts"),
    ("pottery", "glazes", "kilns"),
    ("hurricanes", "pressure", "forecasting"),
    ("robotics", "sensors", "actuators"),
    ("nutrition", "protein", "vitamins"),
    ("architecture", "arches", "foundations"),
    ("photography", "exposure", "lenses"),
    ("oceans", "currents", "salinity"),
    ("languages", "grammar", "vocabulary"),
    ("typography", "kerning", "serifs"),
    ("beekeeping", "hives", "pollination"),
    ("cartography", "projections", "latitude"),
    ("cycling", "gears", "cadence"),
    ("philosophy", "ethics", "arguments"),
];

const PROMPT_FORMS: &[&str] = &[
    "Explain how {a} works and why {b} matters for {c}.",
    "Write a short guide to {a} for beginners, covering {b} and {c}.",
    "What are common misconceptions about {a}, especially regarding {b}?",
    "Compare the roles of {b} and {c} in {a}.",
    "Design a weekend project that teaches {a} through {b}.",
];

const ANSWER_SENTENCES: &[&str] = &[
    "Start with the basics: {a} is best understood by looking at {b} first.",
    "The role of {b} is easy to overlook, yet it determines how {c} behaves.",
    "A concrete example helps: measure {c} before and after changing {b}.",
    "Experts usually describe {a} as a balance between {b} and {c}.",
    "One frequent error is assuming {c} is independent of {b}.",
    "In summary, {a} rewards patience, careful observation and clear notes.",
];

const CORPUS_LINKS: &[&str] = &[
    "Researchers studying {a} often measure {b} alongside {c}.",
    "Local guides describe {a} through stories about {b}.",
    "Recent reports link {b} with changes in {c} across several regions.",
    "Students learn {a} by comparing {b} with {c} in simple experiments.",
    "Historical accounts of {a} mention {b} only briefly.",
    "Engineers improved {c} by rethinking {b} from scratch.",
];

const NAMES: &[&str] = &["Marguerite", "Oswaldo", "Ingrid", "Tobias", "Alice"];

fn fill(t: &str, a: &str, b: &str, c: &str) -> String {
    t.replace("{a}", a).replace("{b}", b).replace("{c}", c)
}

/// `n` seed examples built from a fixed subject bank.
pub fn seed_examples(n: usize, seed: u64) -> Vec<SeedExample> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| {
            let (a, b, c) = SUBJECTS[i % SUBJECTS.len()];
            let form = PROMPT_FORMS[(i / SUBJECTS.len() + i) % PROMPT_FORMS.len()];
            let mut sentences: Vec<&str> = ANSWER_SENTENCES.to_vec();
            sentences.shuffle(&mut rng);
            let answer: Vec<String> = sentences[..4].iter().map(|s| fill(s, a, b, c)).collect();
            SeedExample {
                id: format!("seed-{i:04}"),
                prompt: fill(form, a, b, c),
                gold_response: answer.join(" "),
            }
        })
        .collect()
}

/// `n` corpus paragraphs mixing subjects. Roughly one in twenty is too short
/// to yield keywords and one in ten mentions a personal name.
pub fn corpus(n: usize, seed: u64) -> Vec<CorpusParagraph> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| {
            let text = if i % 20 == 7 {
                "It is what it is.".to_string()
            } else {
                let k = rng.gen_range(1..=3);
                let mut parts = Vec::with_capacity(k + 1);
                for _ in 0..k {
                    let (a, _, _) = SUBJECTS[rng.gen_range(0..SUBJECTS.len())];
                    let (_, b, c) = SUBJECTS[rng.gen_range(0..SUBJECTS.len())];
                    let t = CORPUS_LINKS[rng.gen_range(0..CORPUS_LINKS.len())];
                    let s = fill(t, a, b, c);
                    parts.push(s);
                }
                if i % 10 == 3 {
                    let name = NAMES[rng.gen_range(0..NAMES.len())];
                    parts.push(format!("Last spring {name} wrote about it."));
                }
                parts.join(" ")
            };
            CorpusParagraph {
                id: format!("para-{i:06}"),
                text,
            }
        })
        .collect()
}

/// Token-level preference pairs over a vocabulary of `vocab_size` tokens.
/// Chosen responses walk the lower half of the vocabulary in a mostly
/// ascending cycle; rejected responses draw from the upper half.
pub fn toy_preference_pairs(vocab_size: usize, n: usize, seed: u64) -> Vec<TokenPair> {
    assert!(vocab_size >= 4, "toy fixture needs at least 4 tokens");
    let half = (vocab_size / 2) as u32;
    let v = vocab_size as u32;
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let prompt = vec![rng.gen_range(0..v)];
            let len_c = rng.gen_range(3..=8);
            let mut chosen = vec![rng.gen_range(0..half)];
            while chosen.len() < len_c {
                let prev = *chosen.last().expect("non-empty");
                let next = if rng.gen_bool(0.7) {
                    (prev + 1) % half
                } else {
                    rng.gen_range(0..half)
                };
                chosen.push(next);
            }
            let len_r = rng.gen_range(3..=8);
            let rejected = (0..len_r).map(|_| rng.gen_range(half..v)).collect();
            TokenPair {
                prompt,
                chosen,
                rejected,
            }
        })
        .collect()
}
