//! Command-line entry points. Successful commands print one JSON line to
//! stdout; failures print one JSON line to stderr and exit with the error's
//! code.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::error::exit_code;
use crate::io::{read_records, write_records};
use crate::orchestrator::{
    backends_for, files, project_and_split, scaffold, summary_row,
    summary_table, OptimizeMode, RunConfig, Runner, Stage, StopPoint,
};
use crate::simpo::{beta_report_csv, beta_search, trace_csv, ToyPolicy};
use crate::synthesis::{filter_candidates, PreferenceCandidate, PreferencePair};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "flywheel", version, about = "Synthetic preference data loop")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, default_value = "flywheel.toml")]
    pub config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Validate inputs and print the plan without writing anything.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Args)]
pub struct IterArg {
    #[arg(long, default_value_t = 1)]
    pub iter: u32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Toy,
    Export,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a config plus seed and corpus fixtures.
    Init {
        #[command(flatten)]
        common: Common,
        /// Desk-scale settings instead of the full-scale defaults.
        #[arg(long)]
        desk: bool,
        #[arg(long, default_value_t = 40)]
        seed_examples: usize,
        #[arg(long, default_value_t = 1000)]
        paragraphs: usize,
        /// Overwrite an existing config file.
        #[arg(long)]
        force: bool,
    },
    /// Generate the iteration's synthetic prompts.
    GenPrompts {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        iter: IterArg,
    },
    /// Build the keyword pool and the prompt generator's SFT data.
    BuildPromptgenData {
        #[command(flatten)]
        common: Common,
    },
    /// Build the improver SFT data from the current policy's answers.
    BuildImproverData {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        iter: IterArg,
    },
    /// Produce policy, refined and initial responses for each prompt.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        iter: IterArg,
    },
    /// Score and filter candidates into preference pairs.
    Filter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        iter: IterArg,
        /// Filter this candidates file instead of the run's.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output directory for `--input` mode.
        #[arg(long, requires = "input")]
        out: Option<PathBuf>,
    },
    /// Accumulate pairs, then train the toy policy and/or export the dataset.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        iter: IterArg,
        /// Train on this dataset file instead of the run's.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, requires = "input")]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Similarity and topic/intention reports over prompts.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        iter: IterArg,
        /// Prompt records (with a `prompt` or `text` field) to analyze.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run (or resume) the full loop.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        halt_after: Option<String>,
    },
    /// Print summary tables from completed iterations.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Init { common, .. }
            | Command::GenPrompts { common, .. }
            | Command::BuildPromptgenData { common }
            | Command::BuildImproverData { common, .. }
            | Command::Synthesize { common, .. }
            | Command::Filter { common, .. }
            | Command::Optimize { common, .. }
            | Command::Analyze { common, .. }
            | Command::Run { common, .. }
            | Command::Report { common } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Init { .. } => "init",
            Command::GenPrompts { .. } => "gen-prompts",
            Command::BuildPromptgenData { .. } => "build-promptgen-data",
            Command::BuildImproverData { .. } => "build-improver-data",
            Command::Synthesize { .. } => "synthesize",
            Command::Filter { .. } => "filter",
            Command::Optimize { .. } => "optimize",
            Command::Analyze { .. } => "analyze",
            Command::Run { .. } => "run",
            Command::Report { .. } => "report",
        }
    }
}

/// One-line JSON error record.
pub fn error_line(kind: &str, code: i32, message: &str) -> String {
    json!({"error": {"kind": kind, "code": code, "message": message}}).to_string()
}

/// Parses `args`, runs the command, writes output, and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return exit_code::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", exit_code::CONFIG, first));
            return exit_code::CONFIG;
        }
    };
    match execute(&cli.command) {
        Ok(out) => {
            println!("{out}");
            exit_code::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}", error_line(e.kind(), code, &msg));
            code
        }
    }
}

fn load_config(common: &Common, check_paths: bool) -> Result<RunConfig> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let base = common
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut cfg = RunConfig::parse(&text, base)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if check_paths {
        cfg.validate()?;
    } else {
        cfg.validate_values()?;
    }
    Ok(cfg)
}

fn plan(cmd: &Command, cfg: &RunConfig, extra: Value) -> Value {
    json!({
        "command": cmd.name(),
        "dry_run": true,
        "config_hash": cfg.hash(),
        "master_seed": cfg.master_seed,
        "run_dir": cfg.run_dir(),
        "plan": extra,
    })
}

/// Runs one stage and records it in the iteration's progress file.
fn single_stage(runner: &Runner, t: u32, stage: Stage) -> Result<Value> {
    if t == 0 {
        return Err(Error::Config("iterations are numbered from 1".into()));
    }
    runner.bootstrap()?;
    let done = runner.load_progress(t)?.completed;
    if let Some(missing) = Stage::ALL.iter().take_while(|s| **s != stage).find(|s| !done.contains(s)) {
        return Err(Error::Stage {
            iteration: t,
            stage: stage.name().into(),
            code: exit_code::STAGE,
            message: format!("earlier stage `{missing}` has not completed for this iteration"),
        });
    }
    runner.run_stage(t, stage).map_err(|e| Error::Stage {
        iteration: t,
        stage: stage.name().into(),
        code: e.exit_code(),
        message: e.to_string(),
    })?;
    let mut progress = runner.load_progress(t)?;
    if !progress.completed.contains(&stage) {
        progress.completed.push(stage);
        progress.completed.sort();
    }
    progress.failed = None;
    crate::io::write_json(&runner.iter_dir(t).join(files::PROGRESS), &progress)?;
    Ok(json!({"stage": stage.name(), "iteration": t, "dir": runner.iter_dir(t)}))
}

fn prompt_texts(path: &Path) -> Result<Vec<String>> {
    let records: Vec<Value> = read_records(path)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.get("prompt")
                .or_else(|| r.get("text"))
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| Error::Record {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "record has no `prompt` or `text` string".into(),
                })
        })
        .collect()
}

pub fn execute(cmd: &Command) -> Result<Value> {
    let common = cmd.common();
    if let Command::Init {
        desk,
        seed_examples,
        paragraphs,
        force,
        ..
    } = cmd
    {
        let mut cfg = if *desk { RunConfig::desk() } else { RunConfig::default() };
        if let Some(seed) = common.seed {
            cfg.master_seed = seed;
        }
        if common.dry_run {
            return Ok(plan(cmd, &cfg, json!({"config": common.config, "seed_examples": seed_examples, "paragraphs": paragraphs})));
        }
        if common.config.exists() && !force {
            return Err(Error::Config(format!(
                "{} already exists (use --force to overwrite)",
                common.config.display()
            )));
        }
        scaffold(&common.config, &cfg, *seed_examples, *paragraphs)?;
        return Ok(json!({"config": common.config, "config_hash": cfg.hash()}));
    }

    let standalone = matches!(
        cmd,
        Command::Filter { input: Some(_), .. } | Command::Optimize { input: Some(_), .. }
    );
    let mut cfg = load_config(common, !standalone && !matches!(cmd, Command::Report { .. }))?;
    if let Command::Optimize { mode: Some(m), .. } = cmd {
        cfg.simpo.mode = match m {
            ModeArg::Toy => OptimizeMode::Toy,
            ModeArg::Export => OptimizeMode::Export,
            ModeArg::Both => OptimizeMode::Both,
        };
    }
    let backend = backends_for(&cfg)?;

    match cmd {
        Command::Filter {
            input: Some(input),
            out,
            ..
        } => {
            let out_dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
            if common.dry_run {
                return Ok(plan(cmd, &cfg, json!({"input": input, "out": out_dir})));
            }
            let candidates: Vec<PreferenceCandidate> = read_records(input)?;
            let res = filter_candidates(
                &candidates,
                &backend,
                &cfg.scorer.scorer(),
                cfg.scorer.threshold(),
                cfg.max_in_flight,
            )?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            write_records(&out_dir.join(files::SCORED), &res.scored)?;
            write_records(&out_dir.join(files::PAIRS), &res.pairs)?;
            write_records(&out_dir.join(files::FILTER_STATS), std::slice::from_ref(&res.stats))?;
            return Ok(json!({"pairs": out_dir.join(files::PAIRS), "stats": res.stats}));
        }
        Command::Optimize {
            input: Some(input),
            out,
            ..
        } => {
            let out_dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
            if common.dry_run {
                return Ok(plan(cmd, &cfg, json!({"input": input, "out": out_dir})));
            }
            return optimize_file(&cfg, input, &out_dir);
        }
        Command::Report { .. } => {
            let runner_cfg = cfg.clone();
            let states = completed_states_lenient(&runner_cfg)?;
            let rows: Vec<_> = states.iter().map(summary_row).collect();
            eprint!("{}", summary_table(&rows));
            return Ok(json!({"iterations": rows.len(), "summary": rows}));
        }
        _ => {}
    }

    let runner = Runner::new(&cfg, &backend)?;
    if common.dry_run {
        let extra = match cmd {
            Command::Run { .. } => json!({"iterations": cfg.iterations, "stages": Stage::ALL}),
            Command::BuildPromptgenData { .. } => json!({"writes": runner.iter_dir(0)}),
            _ => json!({"writes": runner.iter_dir(iter_of(cmd))}),
        };
        return Ok(plan(cmd, &cfg, extra));
    }
    match cmd {
        Command::BuildPromptgenData { .. } => {
            let state = runner.bootstrap()?;
            Ok(json!({"dir": runner.iter_dir(0), "keyword_stats": state.keyword_stats, "promptgen_records": state.promptgen_records}))
        }
        Command::GenPrompts { iter, .. } => single_stage(&runner, iter.iter, Stage::Prompts),
        Command::BuildImproverData { iter, .. } => single_stage(&runner, iter.iter, Stage::ImproverSft),
        Command::Synthesize { iter, .. } => single_stage(&runner, iter.iter, Stage::Candidates),
        Command::Filter { iter, .. } => single_stage(&runner, iter.iter, Stage::Filter),
        Command::Optimize { iter, .. } => {
            let progress = runner.load_progress(iter.iter)?;
            if !progress.completed.contains(&Stage::Accumulate) {
                single_stage(&runner, iter.iter, Stage::Accumulate)?;
            }
            single_stage(&runner, iter.iter, Stage::Optimize)
        }
        Command::Analyze { iter, input, out, .. } => {
            let prompts = match input {
                Some(p) => prompt_texts(p)?,
                None => runner.prompts(iter.iter)?.into_iter().map(|p| p.prompt).collect(),
            };
            let out_dir = out
                .clone()
                .unwrap_or_else(|| runner.iter_dir(iter.iter).join("analysis"));
            let res = runner.analyze(&prompts, &out_dir)?;
            Ok(json!({
                "dir": out_dir,
                "overall_mean_similarity": res.similarity.overall_mean,
                "classified": res.topics.parsed,
                "parse_failures": res.topics.parse_failures,
            }))
        }
        Command::Run { halt_after, .. } => {
            let stop = halt_after.as_deref().map(str::parse::<StopPoint>).transpose()?;
            let outcome = runner.run_loop(stop)?;
            let rows: Vec<_> = outcome.states.iter().map(summary_row).collect();
            Ok(json!({
                "run_dir": runner.run_dir(),
                "halted": outcome.halted,
                "completed_iterations": rows.len(),
                "summary": rows,
            }))
        }
        Command::Init { .. } | Command::Report { .. } => unreachable!("handled above"),
    }
}

fn iter_of(cmd: &Command) -> u32 {
    match cmd {
        Command::GenPrompts { iter, .. }
        | Command::BuildImproverData { iter, .. }
        | Command::Synthesize { iter, .. }
        | Command::Filter { iter, .. }
        | Command::Optimize { iter, .. }
        | Command::Analyze { iter, .. } => iter.iter,
        _ => 0,
    }
}

fn completed_states_lenient(cfg: &RunConfig) -> Result<Vec<crate::orchestrator::IterationState>> {
    let dir = cfg.run_dir();
    let mut out = Vec::new();
    for t in 1..=cfg.iterations {
        let p = dir.join(format!("iter{t}")).join(files::MANIFEST);
        if !p.is_file() {
            break;
        }
        out.push(crate::io::read_json(&p)?);
    }
    Ok(out)
}

/// Toy SimPO on a standalone dataset file, with reports written to `out_dir`.
fn optimize_file(cfg: &RunConfig, input: &Path, out_dir: &Path) -> Result<Value> {
    let dataset: Vec<PreferencePair> = read_records(input)?;
    let s = &cfg.simpo;
    let seed = crate::rng::derive_seed(cfg.master_seed, &["optimize-file"]);
    let (train, val) = project_and_split(&dataset, s, seed);
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!(
            "dataset projects to {} train / {} validation pairs; need both non-empty",
            train.len(),
            val.len()
        )));
    }
    let init = ToyPolicy::random(
        s.vocab_size,
        s.context,
        s.init_scale,
        crate::rng::derive_seed(cfg.master_seed, &["toy-policy-init"]),
    )?;
    let search = beta_search(&init, &train, &val, &s.beta_grid, &s.base())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    crate::io::atomic_write(&out_dir.join(files::LOSS_TRACE), trace_csv(&search.best_trace).as_bytes())?;
    crate::io::atomic_write(
        &out_dir.join(files::BETA_REPORT),
        beta_report_csv(&search.report).as_bytes(),
    )?;
    Ok(json!({
        "best_beta": search.best.beta,
        "final_train_loss": search.best_trace.last().map(|r| r.loss),
        "train_pairs": train.len(),
        "val_pairs": val.len(),
        "dir": out_dir,
    }))
}
