//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use flywheel_core::analysis::{classify_prompts, inter_prompt_similarity, HistogramSpec};
use flywheel_core::backend::{
    GenerationParams, ModelBackend, ModelRef, MockBackend, ScoreKind, Scorer,
};
use flywheel_core::fixtures;
use flywheel_core::io::read_records;
use flywheel_core::keywords::{
    build_keyword_pool, candidates, capitalized_names, extract_seed_keywords, token_set,
    KeywordList, KeywordSource, Lexicon,
};
use flywheel_core::orchestrator::{files, scaffold, RunConfig, Runner, Stage, StopPoint};
use flywheel_core::rng::seeded;
use flywheel_core::simpo::{
    policy_grad, simpo_loss, train_simpo, ContextKind, ScoredSequence, SimpoConfig, TokenPair,
    ToyPolicy,
};
use flywheel_core::synthesis::{
    filter_candidates, generate_prompts, promptgen_completion, synthesize_candidates,
    CandidateModels, GenerationRecord, PreferencePair,
};
use flywheel_core::templates::{
    parse_generated_qa, render_improver, render_promptgen, render_topic_intent, GeneratedQA,
    QA_HEADER,
};
use rand::Rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let el = start.elapsed();
    ensure(el < budget, || format!("took {el:.2?}, budget {budget:?}"))
}

// ---------- oracles ----------

/// Log-softmax of one row, computed directly.
fn log_softmax(row: &[f64], k: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
    row[k] - m - z.ln()
}

/// Mean log-probability under a flat logit table; context row is the
/// previous token (bigram, start row = V) or row 0 (unigram).
fn oracle_avg_logprob(logits: &[f64], v: usize, bigram: bool, prompt: &[u32], seq: &[u32]) -> f64 {
    let mut prev = prompt.last().copied();
    let mut total = 0.0;
    for &tok in seq {
        let ctx = if bigram { prev.map(|p| p as usize).unwrap_or(v) } else { 0 };
        total += log_softmax(&logits[ctx * v..(ctx + 1) * v], tok as usize);
        prev = Some(tok);
    }
    total / seq.len() as f64
}

fn oracle_loss(logits: &[f64], v: usize, bigram: bool, pair: &TokenPair, beta: f64, gamma: f64) -> f64 {
    let w = oracle_avg_logprob(logits, v, bigram, &pair.prompt, &pair.chosen);
    let l = oracle_avg_logprob(logits, v, bigram, &pair.prompt, &pair.rejected);
    let m = beta * w - beta * l - gamma;
    (1.0 + (-m).exp()).ln()
}

/// Coverage of positions by 10-grams that appeared earlier, by direct scan.
fn oracle_repetition(text: &str) -> f64 {
    let c: Vec<char> = text.chars().collect();
    let n = 10;
    if c.len() < n {
        return 0.0;
    }
    let mut covered = vec![false; c.len()];
    for s in 0..=c.len() - n {
        let earlier = (0..s).any(|e| c[e..e + n] == c[s..s + n]);
        if earlier {
            for x in covered.iter_mut().skip(s).take(n) {
                *x = true;
            }
        }
    }
    covered.iter().filter(|x| **x).count() as f64 / c.len() as f64
}

// ---------- criteria ----------

fn simpo_correctness() -> Result<String, String> {
    let start = Instant::now();
    let cfg = SimpoConfig {
        beta: 2.0,
        gamma: 1.6,
        ..SimpoConfig::default()
    };
    // beta * (aw - al) = gamma gives a zero margin
    let w = ScoredSequence::with_average(4, -1.0).unwrap();
    let l = ScoredSequence::with_average(5, -1.8).unwrap();
    let zero = simpo_loss(&w, &l, &cfg).unwrap();
    let ln2 = std::f64::consts::LN_2;
    ensure((zero - ln2).abs() < 1e-9, || format!("zero-margin loss {zero} != ln 2"))?;

    let w = ScoredSequence::with_average(3, -0.5).unwrap();
    let l = ScoredSequence::with_average(7, -1.5).unwrap();
    let got = simpo_loss(&w, &l, &cfg).unwrap();
    let m: f64 = 2.0 * -0.5 - 2.0 * -1.5 - 1.6;
    let oracle = (1.0 + (-m).exp()).ln();
    ensure((got - oracle).abs() < 1e-12, || format!("loss {got} vs oracle {oracle}"))?;
    ensure((got - 0.513015).abs() < 1e-6, || format!("loss {got} vs 0.513015"))?;

    let mut rng = seeded(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let v = rng.gen_range(2..=6usize);
        let bigram = rng.gen_bool(0.5);
        let kind = if bigram { ContextKind::Bigram } else { ContextKind::Unigram };
        let rows = if bigram { v + 1 } else { 1 };
        let logits: Vec<f64> = (0..rows * v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let policy = ToyPolicy::from_logits(v, kind, logits.clone()).unwrap();
        let mut seq = |len: usize| -> Vec<u32> { (0..len).map(|_| rng.gen_range(0..v as u32)).collect() };
        let pair = TokenPair {
            prompt: seq(2),
            chosen: seq(6),
            rejected: seq(3),
        };
        let beta = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0][rng.gen_range(0..6)];
        let cfg = SimpoConfig {
            beta,
            gamma: 1.6,
            ..SimpoConfig::default()
        };
        let g = policy_grad(&policy, &pair, &cfg).unwrap();
        let l0 = oracle_loss(&logits, v, bigram, &pair, beta, 1.6);
        ensure((g.loss - l0).abs() < 1e-10, || format!("loss {} vs oracle {l0}", g.loss))?;
        let h = 1e-5;
        let mut diff2 = 0.0;
        let mut norm_a = 0.0;
        let mut norm_n = 0.0;
        for k in 0..logits.len() {
            let mut up = logits.clone();
            up[k] += h;
            let mut dn = logits.clone();
            dn[k] -= h;
            let num = (oracle_loss(&up, v, bigram, &pair, beta, 1.6)
                - oracle_loss(&dn, v, bigram, &pair, beta, 1.6))
                / (2.0 * h);
            diff2 += (g.grad[k] - num).powi(2);
            norm_a += g.grad[k].powi(2);
            norm_n += num * num;
        }
        // a floor on the scale keeps exactly-zero gradients (equal token
        // proportions under a unigram context) from reading as noise ratios
        let denom = (norm_a.sqrt() + norm_n.sqrt()).max(1e-3);
        let rel = diff2.sqrt() / denom;
        worst = worst.max(rel);
    }
    ensure(worst < 1e-5, || format!("worst relative gradient error {worst:e}"))?;
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!(
        "ln2 ok, example {got:.6}, worst grad rel err {worst:.1e} over 100 instances"
    ))
}

fn toy_convergence() -> Result<String, String> {
    let start = Instant::now();
    let data = fixtures::toy_preference_pairs(8, 200, 7);
    let init = ToyPolicy::uniform(8, ContextKind::Bigram).unwrap();
    let cfg = SimpoConfig {
        beta: 2.0,
        gamma: 1.6,
        learning_rate: 2.0,
        steps: 500,
    };
    let out = train_simpo(&init, &data, &cfg).map_err(|e| e.to_string())?;
    let first = out.trace[0].loss;
    let last = out.final_loss;
    ensure(last <= 0.5 * first, || format!("loss {first:.4} -> {last:.4}, less than 50% drop"))?;
    for w in out.trace[10..].windows(2) {
        ensure(w[1].margin >= w[0].margin, || {
            format!("margin fell at step {}: {} -> {}", w[1].step, w[0].margin, w[1].margin)
        })?;
    }
    within_budget(start, Duration::from_secs(30))?;
    Ok(format!(
        "loss {first:.4} -> {last:.4} ({:.0}% drop), margin monotone from step 10",
        100.0 * (1.0 - last / first)
    ))
}

fn filter_soundness() -> Result<String, String> {
    let start = Instant::now();
    let backend = MockBackend;
    let lex = Lexicon::bundled();
    let (pool, _) = build_keyword_pool(&fixtures::corpus(1000, 5), 5, &lex, 4);
    let params = GenerationParams::default();
    let (prompts, _) = generate_prompts(&pool, 5400, &ModelRef::mock(3, "gen"), &backend, &params, 9, "p", 4);
    let models = CandidateModels {
        policy: ModelRef::mock(3, "policy"),
        improver: ModelRef::mock(3, "improver"),
        initial: ModelRef::mock(3, "initial"),
    };
    let mut out = synthesize_candidates(&prompts, &models, &backend, &params, 1, 4);
    ensure(out.candidates.len() >= 5000, || format!("only {} candidates", out.candidates.len()))?;
    out.candidates.truncate(5000);
    let scorer = Scorer {
        kind: ScoreKind::Pairwise,
        model: ModelRef::mock(4, "judge"),
    };
    let threshold = 0.20;
    let res = filter_candidates(&out.candidates, &backend, &scorer, threshold, 4).map_err(|e| e.to_string())?;
    let records: HashMap<&str, &GenerationRecord> = out.records.iter().map(|r| (r.id.as_str(), r)).collect();

    // independent decision for every candidate
    let mut expected: HashSet<String> = HashSet::new();
    for c in &out.candidates {
        if c.refined == c.initial {
            continue;
        }
        let gap = backend
            .score_pair(&scorer, &c.prompt, &c.refined, &c.initial)
            .map_err(|e| e.to_string())?
            .value;
        let keep = gap > threshold
            && oracle_repetition(&c.refined) <= 0.5
            && oracle_repetition(&c.initial) <= 0.5;
        if keep {
            expected.insert(c.prompt_id.clone());
        }
    }
    let emitted: HashSet<String> = res.pairs.iter().map(|p| p.prompt_id.clone()).collect();
    ensure(emitted == expected, || {
        format!(
            "inclusion mismatch: {} emitted vs {} expected",
            emitted.len(),
            expected.len()
        )
    })?;
    for p in &res.pairs {
        let gap = backend
            .score_pair(&scorer, &p.prompt, &p.chosen, &p.rejected)
            .map_err(|e| e.to_string())?
            .value;
        ensure(gap == p.gap && gap > threshold, || format!("{}: rescored gap {gap} vs {}", p.prompt_id, p.gap))?;
        ensure(p.chosen != p.rejected, || format!("{}: chosen == rejected", p.prompt_id))?;
        let rec = records
            .get(p.rejected_record.as_str())
            .ok_or_else(|| format!("{}: rejected record missing", p.prompt_id))?;
        ensure(rec.model == models.initial.to_string() && rec.text == p.rejected, || {
            format!("{}: rejected side not from the initial model", p.prompt_id)
        })?;
    }
    let s = &res.stats;
    ensure(s.total == 5000 && s.retained + s.rejected() == s.total, || {
        format!("stats do not reconcile: {s:?}")
    })?;
    ensure(s.retained == res.pairs.len(), || "retained != pairs".into())?;
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!(
        "{} of 5000 retained, decisions reproduced, reasons {:?}",
        s.retained, s.rejected_by_reason
    ))
}

fn keyword_contract() -> Result<String, String> {
    let start = Instant::now();
    let lex = Lexicon::bundled();
    let seed = fixtures::seed_examples(40, 11);
    let cands: Vec<HashSet<String>> = seed
        .iter()
        .map(|s| candidates(&s.prompt, &lex.stopwords).into_iter().collect())
        .collect();
    for d in 0..10_000u64 {
        let i = (d % seed.len() as u64) as usize;
        let list = extract_seed_keywords(&seed, i, d, &lex).map_err(|e| e.to_string())?;
        let KeywordSource::Seed { i: si, j } = list.source else {
            return Err(format!("draw {d}: wrong source"));
        };
        ensure(si == i && j != i, || format!("draw {d}: source ({si},{j})"))?;
        let own = list.keywords.iter().filter(|k| cands[i].contains(*k)).count();
        let other = list
            .keywords
            .iter()
            .filter(|k| !cands[i].contains(*k) && cands[j].contains(*k))
            .count();
        ensure(own == 2 && other == 1, || format!("draw {d}: {own} own / {other} donor in {:?}", list.keywords))?;
    }

    let corpus = fixtures::corpus(10_000, 12);
    let by_id: HashMap<&str, &str> = corpus.iter().map(|p| (p.id.as_str(), p.text.as_str())).collect();
    let (pool, stats) = build_keyword_pool(&corpus, 12, &lex, 4);
    ensure(!pool.is_empty(), || "empty pool".into())?;
    for list in &pool {
        let KeywordSource::Corpus(id) = &list.source else {
            return Err("corpus list with seed source".into());
        };
        let text = by_id.get(id.as_str()).ok_or("unknown paragraph")?;
        let toks = token_set(text);
        let names = capitalized_names(text);
        for k in &list.keywords {
            ensure(toks.contains(k), || format!("{k} not in paragraph {id}"))?;
            ensure(!lex.stopwords.contains(k), || format!("stopword {k} accepted"))?;
            ensure(!lex.names.contains(k) && !names.contains(k), || format!("name {k} accepted"))?;
        }
        check_shape(list)?;
    }
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!(
        "10000 seed draws ok; {} corpus lists ok ({} rejected, {} duplicates)",
        pool.len(),
        stats.rejected.values().sum::<usize>(),
        stats.duplicates
    ))
}

fn check_shape(list: &KeywordList) -> Result<(), String> {
    let distinct: HashSet<&String> = list.keywords.iter().collect();
    ensure(list.keywords.len() == 3 && distinct.len() == 3, || format!("bad list {:?}", list.keywords))
}

fn template_fidelity() -> Result<String, String> {
    let kw = KeywordList::new(["quantum", "lattice", "annealing"], KeywordSource::Corpus("g".into()))
        .map_err(|e| e.to_string())?;
    let goldens = [
        ("promptgen", render_promptgen(&kw), include_str!("golden/promptgen.txt")),
        (
            "improver",
            render_improver("What is the capital of France?", "Paris is the capital of Germany."),
            include_str!("golden/improver.txt"),
        ),
        (
            "topic_intent",
            render_topic_intent("How do I bake sourdough bread at home?"),
            include_str!("golden/topic_intent.txt"),
        ),
    ];
    for (name, got, want) in &goldens {
        ensure(got == want, || format!("{name} differs from golden"))?;
    }

    let mut rng = seeded(77);
    let words = ["alpha", "beta", "x < y", "3 + 4 = 7", "café", "line\nbreak", "tag-like <b>", "end."];
    let phrase = |rng: &mut rand_chacha::ChaCha8Rng| -> String {
        let n = rng.gen_range(1..12);
        (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
    };
    let mut closing_variant = 0;
    for k in 0..1000 {
        let qa = GeneratedQA {
            question: phrase(&mut rng),
            solution: phrase(&mut rng),
        };
        let raw = match k % 3 {
            0 => qa.to_output(),
            1 => {
                closing_variant += 1;
                promptgen_completion(&qa.question, &qa.solution)
            }
            _ => format!("{QA_HEADER}\n{}", qa.to_output()),
        };
        let back = parse_generated_qa(&raw).map_err(|e| format!("fixture {k}: {e}"))?;
        ensure(back == qa, || format!("fixture {k} round-trip mismatch"))?;
    }
    Ok(format!(
        "3 goldens byte-identical; 1000/1000 round-trips ({closing_variant} with </solution> opener)"
    ))
}

fn default_constants() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("flywheel.toml");
    scaffold(&path, &RunConfig::default(), 4, 20).map_err(|e| e.to_string())?;
    let loaded = RunConfig::load(&path).map_err(|e| e.to_string())?;
    for cfg in [RunConfig::default(), loaded] {
        ensure(cfg.iterations == 4, || "T != 4".into())?;
        ensure(cfg.prompts_per_iteration == 50_000, || "m != 50000".into())?;
        ensure(cfg.per_iter_cap == 10_000, || "cap != 10000".into())?;
        ensure(cfg.scorer.pairwise_threshold == 0.20, || "pairwise threshold".into())?;
        ensure(cfg.scorer.scalar_threshold == 0.02, || "scalar threshold".into())?;
        ensure(cfg.simpo.beta_grid == vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0], || "beta grid".into())?;
        ensure(cfg.simpo.gamma == 1.6, || "gamma".into())?;
        ensure(cfg.generation.temperature == 0.7, || "temperature".into())?;
        ensure(cfg.generation.max_tokens == 2048, || "max_tokens".into())?;
    }
    Ok("T=4 m=50000 cap=10000 thresholds 0.20/0.02 beta {2..12} gamma 1.6 temp 0.7 max_tokens 2048".into())
}

fn desk_dir(root: &Path, label: &str) -> Result<std::path::PathBuf, String> {
    let dir = root.join(label);
    let path = dir.join("flywheel.toml");
    scaffold(&path, &RunConfig::desk(), 40, 1000).map_err(|e| e.to_string())?;
    Ok(path)
}

fn run_to(config: &Path, stop: Option<StopPoint>) -> Result<bool, String> {
    let cfg = RunConfig::load(config).map_err(|e| e.to_string())?;
    let backend = flywheel_core::orchestrator::backends_for(&cfg).map_err(|e| e.to_string())?;
    let runner = Runner::new(&cfg, &backend).map_err(|e| e.to_string())?;
    let out = runner.run_loop(stop).map_err(|e| e.to_string())?;
    Ok(out.halted)
}

fn manifests(config: &Path) -> Result<Vec<String>, String> {
    let cfg = RunConfig::load(config).map_err(|e| e.to_string())?;
    let backend = flywheel_core::orchestrator::backends_for(&cfg).map_err(|e| e.to_string())?;
    let runner = Runner::new(&cfg, &backend).map_err(|e| e.to_string())?;
    let states = runner.completed_states().map_err(|e| e.to_string())?;
    Ok(states.into_iter().map(|s| s.manifest_checksum).collect())
}

fn final_dataset(config: &Path) -> Result<Vec<u8>, String> {
    let cfg = RunConfig::load(config).map_err(|e| e.to_string())?;
    std::fs::read(cfg.run_dir().join(files::DATASET)).map_err(|e| e.to_string())
}

fn determinism_resumability() -> Result<String, String> {
    let start = Instant::now();
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = desk_dir(root.path(), "a")?;
    let b = desk_dir(root.path(), "b")?;
    run_to(&a, None)?;
    run_to(&b, None)?;
    let ma = manifests(&a)?;
    let mb = manifests(&b)?;
    ensure(ma.len() == 2 && ma == mb, || format!("manifest checksums differ: {ma:?} vs {mb:?}"))?;
    let reference = final_dataset(&a)?;

    // dataset sizes and rejected-side provenance in the reference run
    let cfg = RunConfig::load(&a).map_err(|e| e.to_string())?;
    let mut prev = 0;
    for t in 1..=2 {
        let dir = cfg.run_dir().join(format!("iter{t}"));
        let dataset: Vec<PreferencePair> = read_records(&dir.join(files::DATASET)).map_err(|e| e.to_string())?;
        ensure(dataset.len() >= prev, || format!("dataset shrank at t={t}"))?;
        prev = dataset.len();
        let gens: Vec<GenerationRecord> = read_records(&dir.join(files::GENERATIONS)).map_err(|e| e.to_string())?;
        let by_id: HashMap<&str, &GenerationRecord> = gens.iter().map(|g| (g.id.as_str(), g)).collect();
        let pairs: Vec<PreferencePair> = read_records(&dir.join(files::PAIRS)).map_err(|e| e.to_string())?;
        for p in &pairs {
            let rec = by_id.get(p.rejected_record.as_str()).ok_or("missing rejected record")?;
            ensure(rec.model == cfg.models.initial.to_string(), || {
                format!("t={t} {}: rejected from {}", p.prompt_id, rec.model)
            })?;
        }
    }

    let mut stops = vec![StopPoint::Bootstrap];
    for t in 1..=2 {
        stops.extend(Stage::ALL.iter().map(|&stage| StopPoint::After { t, stage }));
    }
    for (k, stop) in stops.iter().enumerate() {
        let c = desk_dir(root.path(), &format!("r{k}"))?;
        ensure(run_to(&c, Some(*stop))?, || format!("{stop:?}: run did not halt"))?;
        ensure(!run_to(&c, None)?, || format!("{stop:?}: resume halted"))?;
        ensure(final_dataset(&c)? == reference, || format!("{stop:?}: resumed dataset differs"))?;
        ensure(manifests(&c)? == ma, || format!("{stop:?}: resumed manifests differ"))?;
    }
    within_budget(start, Duration::from_secs(180))?;
    Ok(format!(
        "2 runs share manifests; {} stop points resume to identical dataset ({} pairs, {} bytes)",
        stops.len(),
        prev,
        reference.len()
    ))
}

fn analysis_sanity() -> Result<String, String> {
    let start = Instant::now();
    let backend = MockBackend;
    let prompts: Vec<String> = fixtures::seed_examples(1000, 3)
        .into_iter()
        .enumerate()
        .map(|(i, s)| format!("{} (variant {i})", s.prompt))
        .collect();
    let embedder = ModelRef::mock(1, "embedder");
    let report = inter_prompt_similarity(&prompts, &backend, &embedder, HistogramSpec::default(), 4)
        .map_err(|e| e.to_string())?;
    ensure(report.histogram.iter().sum::<usize>() == report.per_prompt_mean.len(), || {
        "histogram total != prompt count".into()
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("similarity took {elapsed:.2?}"))?;

    let same = vec!["Explain how tides work.".to_string(); 50];
    let r = inter_prompt_similarity(&same, &backend, &embedder, HistogramSpec::default(), 4)
        .map_err(|e| e.to_string())?;
    ensure(r.per_prompt_mean.iter().all(|m| (m - 1.0).abs() < 1e-9), || {
        "identical prompts not at similarity 1".into()
    })?;

    let topics = classify_prompts(&prompts, &backend, &ModelRef::mock(1, "cls"), &GenerationParams::default(), 4);
    let t_sum: usize = topics.topic_counts.values().sum();
    let i_sum: usize = topics.intention_counts.values().sum();
    ensure(topics.total() == 1000 && t_sum == topics.parsed && i_sum == topics.parsed, || {
        format!("classification totals: {} parsed, {} failed, {t_sum}/{i_sum}", topics.parsed, topics.parse_failures)
    })?;
    Ok(format!(
        "1000 prompts in {elapsed:.2?}, mean sim {:.3}; identical = 1.0; {} classified + {} failed = 1000",
        report.overall_mean, topics.parsed, topics.parse_failures
    ))
}

fn main() {
    let checks: [(&str, Check); 8] = [
        ("simpo_correctness", simpo_correctness),
        ("toy_convergence", toy_convergence),
        ("filter_soundness", filter_soundness),
        ("keyword_contract", keyword_contract),
        ("template_fidelity", template_fidelity),
        ("default_constants", default_constants),
        ("determinism_resumability", determinism_resumability),
        ("analysis_sanity", analysis_sanity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match res {
            Ok(detail) => println!("PASS {name} ({:.2?}): {detail}", t.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({:.2?}): {why}", t.elapsed());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
