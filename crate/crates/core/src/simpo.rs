//! SimPO preference optimization on a token-level toy policy.
//!
//! For a pair `(y_w, y_l)` the margin is
//!
//! ```text
//! m = beta / |y_w| * log p(y_w | x) - beta / |y_l| * log p(y_l | x) - gamma
//! ```
//!
//! and the loss is `-log sigmoid(m) = log(1 + exp(-m))`. Its derivatives with
//! respect to the two sequence log-probabilities are
//! `(beta / |y_w|)(sigmoid(m) - 1)` and `-(beta / |y_l|)(sigmoid(m) - 1)`.
//!
//! [`ToyPolicy`] is a categorical next-token model with one logit row per
//! context class; the gradient of the loss with respect to every logit is
//! available in closed form, which makes the optimizer exactly checkable.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{hash_parts, seeded};

pub const DEFAULT_GAMMA: f64 = 1.6;
pub const DEFAULT_BETA_GRID: [f64; 6] = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0];

#[derive(Debug, thiserror::Error)]
pub enum SimpoError {
    #[error("non-finite log-probability {0}")]
    NonFinite(f64),
    #[error("sequence must contain at least one token")]
    EmptySequence,
    #[error("length {length} does not match {tokens} token(s)")]
    LengthMismatch { length: usize, tokens: usize },
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("training data is empty")]
    EmptyData,
    #[error("beta grid is empty")]
    EmptyGrid,
    #[error("train and validation splits share {0} pair(s)")]
    Overlap(usize),
    #[error("every beta in the grid diverged")]
    AllDiverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpoConfig {
    pub beta: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub steps: usize,
}

impl Default for SimpoConfig {
    fn default() -> Self {
        SimpoConfig {
            beta: DEFAULT_BETA_GRID[0],
            gamma: DEFAULT_GAMMA,
            learning_rate: 0.5,
            steps: 500,
        }
    }
}

impl SimpoConfig {
    pub fn validate(&self) -> Result<(), SimpoError> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(SimpoError::InvalidConfig(format!("beta {} must be > 0", self.beta)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(SimpoError::InvalidConfig(format!("gamma {} must be >= 0", self.gamma)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(SimpoError::InvalidConfig(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// A response with its total log-probability under some policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub tokens: Vec<u32>,
    pub total_logprob: f64,
    pub length: usize,
}

impl ScoredSequence {
    pub fn new(tokens: Vec<u32>, total_logprob: f64) -> Result<Self, SimpoError> {
        let s = ScoredSequence {
            length: tokens.len(),
            tokens,
            total_logprob,
        };
        s.validate()?;
        Ok(s)
    }

    /// A sequence of `length` placeholder tokens with the given average
    /// log-probability per token.
    pub fn with_average(length: usize, avg_logprob: f64) -> Result<Self, SimpoError> {
        Self::new(vec![0; length], avg_logprob * length as f64)
    }

    pub fn validate(&self) -> Result<(), SimpoError> {
        if self.length == 0 || self.tokens.is_empty() {
            return Err(SimpoError::EmptySequence);
        }
        if self.length != self.tokens.len() {
            return Err(SimpoError::LengthMismatch {
                length: self.length,
                tokens: self.tokens.len(),
            });
        }
        if !self.total_logprob.is_finite() {
            return Err(SimpoError::NonFinite(self.total_logprob));
        }
        Ok(())
    }

    pub fn average_logprob(&self) -> f64 {
        self.total_logprob / self.length as f64
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn margin(
    chosen: &ScoredSequence,
    rejected: &ScoredSequence,
    cfg: &SimpoConfig,
) -> Result<f64, SimpoError> {
    chosen.validate()?;
    rejected.validate()?;
    cfg.validate()?;
    Ok(cfg.beta / chosen.length as f64 * chosen.total_logprob
        - cfg.beta / rejected.length as f64 * rejected.total_logprob
        - cfg.gamma)
}

pub fn simpo_loss(
    chosen: &ScoredSequence,
    rejected: &ScoredSequence,
    cfg: &SimpoConfig,
) -> Result<f64, SimpoError> {
    Ok(softplus(-margin(chosen, rejected, cfg)?))
}

/// Derivatives of the loss with respect to the two total log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpoGrad {
    pub d_chosen: f64,
    pub d_rejected: f64,
}

pub fn simpo_grad(
    chosen: &ScoredSequence,
    rejected: &ScoredSequence,
    cfg: &SimpoConfig,
) -> Result<SimpoGrad, SimpoError> {
    let m = margin(chosen, rejected, cfg)?;
    // sigmoid(m) - 1 == -sigmoid(-m), the latter keeps precision for large m
    let slope = -sigmoid(-m);
    Ok(SimpoGrad {
        d_chosen: cfg.beta / chosen.length as f64 * slope,
        d_rejected: -cfg.beta / rejected.length as f64 * slope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    /// Context is the previous token (or a start-of-sequence class).
    #[default]
    Bigram,
    /// A single shared context.
    Unigram,
}

/// Categorical next-token policy with one logit row per context class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    vocab_size: usize,
    context: ContextKind,
    /// Row-major `num_contexts x vocab_size`.
    logits: Vec<f64>,
}

impl ToyPolicy {
    pub fn uniform(vocab_size: usize, context: ContextKind) -> Result<Self, SimpoError> {
        if vocab_size < 2 {
            return Err(SimpoError::InvalidConfig("vocabulary needs >= 2 tokens".into()));
        }
        let rows = Self::rows_for(vocab_size, context);
        Ok(ToyPolicy {
            vocab_size,
            context,
            logits: vec![0.0; rows * vocab_size],
        })
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(
        vocab_size: usize,
        context: ContextKind,
        scale: f64,
        seed: u64,
    ) -> Result<Self, SimpoError> {
        let mut p = Self::uniform(vocab_size, context)?;
        let mut rng = seeded(seed);
        p.logits
            .iter_mut()
            .for_each(|l| *l = rng.gen_range(-scale..=scale));
        Ok(p)
    }

    pub fn from_logits(
        vocab_size: usize,
        context: ContextKind,
        logits: Vec<f64>,
    ) -> Result<Self, SimpoError> {
        let mut p = Self::uniform(vocab_size, context)?;
        if logits.len() != p.logits.len() {
            return Err(SimpoError::InvalidConfig(format!(
                "expected {} logits, got {}",
                p.logits.len(),
                logits.len()
            )));
        }
        if let Some(bad) = logits.iter().find(|l| !l.is_finite()) {
            return Err(SimpoError::NonFinite(*bad));
        }
        p.logits = logits;
        Ok(p)
    }

    fn rows_for(vocab_size: usize, context: ContextKind) -> usize {
        match context {
            ContextKind::Bigram => vocab_size + 1,
            ContextKind::Unigram => 1,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn context_kind(&self) -> ContextKind {
        self.context
    }

    pub fn num_contexts(&self) -> usize {
        Self::rows_for(self.vocab_size, self.context)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Context class for the next token after `prefix`.
    pub fn context_of(&self, prefix: &[u32]) -> usize {
        match self.context {
            ContextKind::Unigram => 0,
            ContextKind::Bigram => match prefix.last() {
                Some(&t) => t as usize,
                None => self.vocab_size,
            },
        }
    }

    fn row(&self, ctx: usize) -> &[f64] {
        &self.logits[ctx * self.vocab_size..(ctx + 1) * self.vocab_size]
    }

    /// Softmax probabilities for a context class.
    pub fn probs(&self, ctx: usize) -> Vec<f64> {
        let row = self.row(ctx);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    fn log_prob(&self, ctx: usize, token: u32) -> f64 {
        let row = self.row(ctx);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row[token as usize] - lse
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), SimpoError> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(&token) => Err(SimpoError::TokenOutOfRange {
                token,
                vocab: self.vocab_size,
            }),
            None => Ok(()),
        }
    }
}

impl fmt::Display for ToyPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ToyPolicy(V={}, {:?}, {} contexts)",
            self.vocab_size,
            self.context,
            self.num_contexts()
        )
    }
}

/// Log-probability of `tokens` with no conditioning prefix.
pub fn seq_logprob(policy: &ToyPolicy, tokens: &[u32]) -> Result<ScoredSequence, SimpoError> {
    seq_logprob_given(policy, &[], tokens)
}

/// Log-probability of `tokens` following the conditioning `prompt` tokens
/// (which are not scored themselves).
pub fn seq_logprob_given(
    policy: &ToyPolicy,
    prompt: &[u32],
    tokens: &[u32],
) -> Result<ScoredSequence, SimpoError> {
    if tokens.is_empty() {
        return Err(SimpoError::EmptySequence);
    }
    policy.check_tokens(prompt)?;
    policy.check_tokens(tokens)?;
    let mut context: Vec<u32> = prompt.to_vec();
    let mut total = 0.0;
    for &t in tokens {
        total += policy.log_prob(policy.context_of(&context), t);
        context.push(t);
    }
    ScoredSequence::new(tokens.to_vec(), total)
}

/// A preference pair in token space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenPair {
    #[serde(default)]
    pub prompt: Vec<u32>,
    pub chosen: Vec<u32>,
    pub rejected: Vec<u32>,
}

/// Loss, margin and logit gradient for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub loss: f64,
    pub margin: f64,
    /// Same layout as [`ToyPolicy::logits`].
    pub grad: Vec<f64>,
}

fn accumulate_seq_grad(
    policy: &ToyPolicy,
    prompt: &[u32],
    tokens: &[u32],
    coeff: f64,
    grad: &mut [f64],
) {
    let v = policy.vocab_size;
    let mut context: Vec<u32> = prompt.to_vec();
    for &t in tokens {
        let ctx = policy.context_of(&context);
        let probs = policy.probs(ctx);
        let row = &mut grad[ctx * v..(ctx + 1) * v];
        for (k, p) in probs.iter().enumerate() {
            let indicator = if k == t as usize { 1.0 } else { 0.0 };
            row[k] += coeff * (indicator - p);
        }
        context.push(t);
    }
}

/// Gradient of the pair's SimPO loss with respect to every logit.
pub fn policy_grad(
    policy: &ToyPolicy,
    pair: &TokenPair,
    cfg: &SimpoConfig,
) -> Result<PairGradient, SimpoError> {
    let chosen = seq_logprob_given(policy, &pair.prompt, &pair.chosen)?;
    let rejected = seq_logprob_given(policy, &pair.prompt, &pair.rejected)?;
    let m = margin(&chosen, &rejected, cfg)?;
    let g = simpo_grad(&chosen, &rejected, cfg)?;
    let mut grad = vec![0.0; policy.logits.len()];
    accumulate_seq_grad(policy, &pair.prompt, &pair.chosen, g.d_chosen, &mut grad);
    accumulate_seq_grad(policy, &pair.prompt, &pair.rejected, g.d_rejected, &mut grad);
    Ok(PairGradient {
        loss: softplus(-m),
        margin: m,
        grad,
    })
}

/// Mean loss and mean margin over `data`.
pub fn evaluate(
    policy: &ToyPolicy,
    data: &[TokenPair],
    cfg: &SimpoConfig,
) -> Result<(f64, f64), SimpoError> {
    if data.is_empty() {
        return Err(SimpoError::EmptyData);
    }
    let mut loss = 0.0;
    let mut marg = 0.0;
    for pair in data {
        let c = seq_logprob_given(policy, &pair.prompt, &pair.chosen)?;
        let r = seq_logprob_given(policy, &pair.prompt, &pair.rejected)?;
        let m = margin(&c, &r, cfg)?;
        loss += softplus(-m);
        marg += m;
    }
    let n = data.len() as f64;
    Ok((loss / n, marg / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: ToyPolicy,
    /// Row `s` holds the mean loss and margin before update `s`; the final
    /// row (step = `cfg.steps`) is measured after the last update.
    pub trace: Vec<TraceRow>,
    pub final_loss: f64,
}

/// Full-batch gradient descent on the mean SimPO loss.
pub fn train_simpo(
    policy: &ToyPolicy,
    data: &[TokenPair],
    cfg: &SimpoConfig,
) -> Result<TrainOutcome, SimpoError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(SimpoError::EmptyData);
    }
    let mut policy = policy.clone();
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let n = data.len() as f64;
    for step in 0..=cfg.steps {
        let mut loss = 0.0;
        let mut marg = 0.0;
        let mut grad = vec![0.0; policy.logits.len()];
        for pair in data {
            let g = policy_grad(&policy, pair, cfg).map_err(|e| match e {
                SimpoError::NonFinite(v) => SimpoError::Diverged { step, loss: v },
                other => other,
            })?;
            loss += g.loss;
            marg += g.margin;
            grad.iter_mut().zip(&g.grad).for_each(|(a, b)| *a += b);
        }
        loss /= n;
        marg /= n;
        if !loss.is_finite() {
            return Err(SimpoError::Diverged { step, loss });
        }
        trace.push(TraceRow {
            step,
            loss,
            margin: marg,
        });
        if step == cfg.steps {
            break;
        }
        let lr = cfg.learning_rate / n;
        policy
            .logits
            .iter_mut()
            .zip(&grad)
            .for_each(|(l, g)| *l -= lr * g);
        if let Some(bad) = policy.logits.iter().find(|l| !l.is_finite()) {
            return Err(SimpoError::Diverged { step, loss: *bad });
        }
    }
    let final_loss = trace.last().map(|r| r.loss).unwrap_or(f64::NAN);
    Ok(TrainOutcome {
        policy,
        trace,
        final_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f64,
    /// `None` when training at this beta diverged.
    pub val_loss: Option<f64>,
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaSearch {
    pub best: SimpoConfig,
    pub best_policy: ToyPolicy,
    /// Training trace of the selected run.
    pub best_trace: Vec<TraceRow>,
    pub report: Vec<BetaRow>,
}

/// Trains one policy per beta (in parallel) and keeps the beta with the
/// lowest mean validation loss, breaking ties toward the smaller beta.
pub fn beta_search(
    policy_init: &ToyPolicy,
    train: &[TokenPair],
    val: &[TokenPair],
    grid: &[f64],
    base: &SimpoConfig,
) -> Result<BetaSearch, SimpoError> {
    if grid.is_empty() {
        return Err(SimpoError::EmptyGrid);
    }
    if train.is_empty() || val.is_empty() {
        return Err(SimpoError::EmptyData);
    }
    let train_set: std::collections::HashSet<&TokenPair> = train.iter().collect();
    let overlap = val.iter().filter(|p| train_set.contains(p)).count();
    if overlap > 0 {
        return Err(SimpoError::Overlap(overlap));
    }
    let runs: Vec<Result<(TrainOutcome, f64), SimpoError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = grid
            .iter()
            .map(|&beta| {
                let cfg = SimpoConfig { beta, ..*base };
                scope.spawn(move || {
                    let out = train_simpo(policy_init, train, &cfg)?;
                    let (val_loss, _) = evaluate(&out.policy, val, &cfg)?;
                    if !val_loss.is_finite() {
                        return Err(SimpoError::Diverged {
                            step: cfg.steps,
                            loss: val_loss,
                        });
                    }
                    Ok((out, val_loss))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("beta search worker panicked"))
            .collect()
    });
    let mut report = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, TrainOutcome)> = None;
    for (&beta, run) in grid.iter().zip(runs) {
        match run {
            Ok((out, val_loss)) => {
                report.push(BetaRow {
                    beta,
                    val_loss: Some(val_loss),
                    train_loss: Some(out.final_loss),
                });
                let better = match &best {
                    None => true,
                    Some((b_beta, b_loss, _)) => {
                        val_loss < *b_loss || (val_loss == *b_loss && beta < *b_beta)
                    }
                };
                if better {
                    best = Some((beta, val_loss, out));
                }
            }
            Err(_) => report.push(BetaRow {
                beta,
                val_loss: None,
                train_loss: None,
            }),
        }
    }
    let (beta, _, out) = best.ok_or(SimpoError::AllDiverged)?;
    Ok(BetaSearch {
        best: SimpoConfig { beta, ..*base },
        best_policy: out.policy,
        best_trace: out.trace,
        report,
    })
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,loss,margin\n");
    for r in trace {
        out.push_str(&format!("{},{},{}\n", r.step, r.loss, r.margin));
    }
    out
}

pub fn beta_report_csv(report: &[BetaRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("beta,val_loss,train_loss\n");
    for r in report {
        out.push_str(&format!("{},{},{}\n", r.beta, cell(r.val_loss), cell(r.train_loss)));
    }
    out
}

/// Projects text onto toy-vocabulary tokens by hashing each word.
pub fn text_to_tokens(text: &str, vocab_size: usize) -> Vec<u32> {
    let v = vocab_size.max(1) as u64;
    let mut tokens: Vec<u32> = text
        .split_whitespace()
        .map(|w| (hash_parts(["tok", w]) % v) as u32)
        .collect();
    if tokens.is_empty() {
        tokens.push((hash_parts(["tok", text]) % v) as u32);
    }
    tokens
}
