//! C ABI over the numeric and text pieces of `flywheel-core`.
//!
//! Every fallible function returns an [`FwStatus`]; on failure the message is
//! available from [`fw_last_error`] on the same thread. Strings handed out by
//! this library must be released with [`fw_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, UnwindSafe};

use flywheel_core::keywords::{KeywordList, KeywordSource};
use flywheel_core::simpo::{
    self, ContextKind, ScoredSequence, SimpoConfig, TokenPair, ToyPolicy,
};
use flywheel_core::synthesis::repetition_ratio;
use flywheel_core::templates;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseFailed = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwContext {
    Bigram = 0,
    Unigram = 1,
}

/// Opaque toy policy.
pub struct FwPolicy(ToyPolicy);

/// Opaque collection of token-id preference pairs.
pub struct FwDataset(Vec<TokenPair>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let mut bytes = msg.into().into_bytes();
    bytes.retain(|b| *b != 0);
    let c = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: FwStatus, msg: impl Into<String>) -> FwStatus {
    set_error(msg);
    status
}

fn guard<F: FnOnce() -> FwStatus + UnwindSafe>(f: F) -> FwStatus {
    match catch_unwind(f) {
        Ok(s) => {
            if s == FwStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(FwStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, FwStatus> {
    if p.is_null() {
        return Err(fail(FwStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FwStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn read_tokens(p: *const u32, len: usize, what: &str) -> Result<Vec<u32>, FwStatus> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(fail(FwStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len).to_vec())
}

fn to_c(s: String, out: *mut *mut c_char) -> FwStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            FwStatus::Ok
        }
        Err(_) => fail(FwStatus::InvalidArgument, "output contains a NUL byte"),
    }
}

fn sequence(length: usize, total_logprob: f64) -> Result<ScoredSequence, FwStatus> {
    ScoredSequence::new(vec![0; length], total_logprob)
        .map_err(|e| fail(FwStatus::InvalidArgument, e.to_string()))
}

fn config(beta: f64, gamma: f64) -> SimpoConfig {
    SimpoConfig {
        beta,
        gamma,
        ..SimpoConfig::default()
    }
}

/// Message for the most recent failure on this thread; empty after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn fw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// SimPO loss for a chosen/rejected pair given lengths and total
/// log-probabilities.
///
/// # Safety
/// `out_loss` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn fw_simpo_loss(
    chosen_len: usize,
    chosen_logprob: f64,
    rejected_len: usize,
    rejected_logprob: f64,
    beta: f64,
    gamma: f64,
    out_loss: *mut f64,
) -> FwStatus {
    guard(|| {
        if out_loss.is_null() {
            return fail(FwStatus::NullPointer, "out_loss is null");
        }
        let (w, l) = match (sequence(chosen_len, chosen_logprob), sequence(rejected_len, rejected_logprob)) {
            (Ok(w), Ok(l)) => (w, l),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match simpo::simpo_loss(&w, &l, &config(beta, gamma)) {
            Ok(v) => {
                *out_loss = v;
                FwStatus::Ok
            }
            Err(e) => fail(FwStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Derivatives of the loss with respect to the chosen and rejected total
/// log-probabilities.
///
/// # Safety
/// `out_d_chosen` and `out_d_rejected` must be valid pointers to doubles.
#[no_mangle]
pub unsafe extern "C" fn fw_simpo_grad(
    chosen_len: usize,
    chosen_logprob: f64,
    rejected_len: usize,
    rejected_logprob: f64,
    beta: f64,
    gamma: f64,
    out_d_chosen: *mut f64,
    out_d_rejected: *mut f64,
) -> FwStatus {
    guard(|| {
        if out_d_chosen.is_null() || out_d_rejected.is_null() {
            return fail(FwStatus::NullPointer, "output pointer is null");
        }
        let (w, l) = match (sequence(chosen_len, chosen_logprob), sequence(rejected_len, rejected_logprob)) {
            (Ok(w), Ok(l)) => (w, l),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match simpo::simpo_grad(&w, &l, &config(beta, gamma)) {
            Ok(g) => {
                *out_d_chosen = g.d_chosen;
                *out_d_rejected = g.d_rejected;
                FwStatus::Ok
            }
            Err(e) => fail(FwStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Share of characters covered by a 10-character window seen earlier in
/// the text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out_ratio` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fw_repetition_ratio(text: *const c_char, out_ratio: *mut f64) -> FwStatus {
    guard(|| {
        if out_ratio.is_null() {
            return fail(FwStatus::NullPointer, "out_ratio is null");
        }
        match read_str(text, "text") {
            Ok(t) => {
                *out_ratio = repetition_ratio(t);
                FwStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Renders the prompt-generation template for three keywords.
///
/// # Safety
/// Inputs must be NUL-terminated strings; `out` a valid pointer. The result
/// must be released with `fw_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fw_render_promptgen(
    k1: *const c_char,
    k2: *const c_char,
    k3: *const c_char,
    out: *mut *mut c_char,
) -> FwStatus {
    guard(|| {
        if out.is_null() {
            return fail(FwStatus::NullPointer, "out is null");
        }
        let mut kws = Vec::with_capacity(3);
        for (p, name) in [(k1, "k1"), (k2, "k2"), (k3, "k3")] {
            match read_str(p, name) {
                Ok(s) => kws.push(s.to_string()),
                Err(s) => return s,
            }
        }
        match KeywordList::new(kws, KeywordSource::Corpus("ffi".into())) {
            Ok(list) => to_c(templates::render_promptgen(&list), out),
            Err(e) => fail(FwStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Renders the answer-improvement template.
///
/// # Safety
/// Inputs must be NUL-terminated strings; `out` a valid pointer. The result
/// must be released with `fw_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fw_render_improver(
    question: *const c_char,
    answer: *const c_char,
    out: *mut *mut c_char,
) -> FwStatus {
    guard(|| {
        if out.is_null() {
            return fail(FwStatus::NullPointer, "out is null");
        }
        match (read_str(question, "question"), read_str(answer, "answer")) {
            (Ok(q), Ok(a)) => to_c(templates::render_improver(q, a), out),
            (Err(s), _) | (_, Err(s)) => s,
        }
    })
}

/// Renders the topic/intention classification template.
///
/// # Safety
/// `prompt` must be a NUL-terminated string; `out` a valid pointer. The
/// result must be released with `fw_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fw_render_topic_intent(prompt: *const c_char, out: *mut *mut c_char) -> FwStatus {
    guard(|| {
        if out.is_null() {
            return fail(FwStatus::NullPointer, "out is null");
        }
        match read_str(prompt, "prompt") {
            Ok(p) => to_c(templates::render_topic_intent(p), out),
            Err(s) => s,
        }
    })
}

/// Extracts the question and solution from generator output.
///
/// # Safety
/// `raw` must be a NUL-terminated string; both outputs valid pointers. On
/// success both strings must be released with `fw_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fw_parse_generated_qa(
    raw: *const c_char,
    out_question: *mut *mut c_char,
    out_solution: *mut *mut c_char,
) -> FwStatus {
    guard(|| {
        if out_question.is_null() || out_solution.is_null() {
            return fail(FwStatus::NullPointer, "output pointer is null");
        }
        let raw = match read_str(raw, "raw") {
            Ok(r) => r,
            Err(s) => return s,
        };
        let qa = match templates::parse_generated_qa(raw) {
            Ok(qa) => qa,
            Err(e) => return fail(FwStatus::ParseFailed, e.to_string()),
        };
        let (Ok(q), Ok(s)) = (CString::new(qa.question), CString::new(qa.solution)) else {
            return fail(FwStatus::InvalidArgument, "parsed text contains a NUL byte");
        };
        *out_question = q.into_raw();
        *out_solution = s.into_raw();
        FwStatus::Ok
    })
}

/// Creates a toy policy with all logits zero.
///
/// # Safety
/// `out` must be a valid pointer. Release the handle with `fw_policy_free`.
#[no_mangle]
pub unsafe extern "C" fn fw_policy_new(vocab_size: usize, context: FwContext, out: *mut *mut FwPolicy) -> FwStatus {
    guard(|| {
        if out.is_null() {
            return fail(FwStatus::NullPointer, "out is null");
        }
        let kind = match context {
            FwContext::Bigram => ContextKind::Bigram,
            FwContext::Unigram => ContextKind::Unigram,
        };
        match ToyPolicy::uniform(vocab_size, kind) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(FwPolicy(p)));
                FwStatus::Ok
            }
            Err(e) => fail(FwStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `policy` must come from `fw_policy_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fw_policy_free(policy: *mut FwPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Number of logits held by the policy.
///
/// # Safety
/// `policy` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fw_policy_num_logits(policy: *const FwPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.0.logits().len())
}

/// Total log-probability of `tokens` after `prompt`.
///
/// # Safety
/// `policy` must be a live handle; token arrays must hold the stated number
/// of elements; `out_logprob` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fw_policy_logprob(
    policy: *const FwPolicy,
    prompt: *const u32,
    prompt_len: usize,
    tokens: *const u32,
    tokens_len: usize,
    out_logprob: *mut f64,
) -> FwStatus {
    guard(|| {
        let Some(p) = policy.as_ref() else {
            return fail(FwStatus::NullPointer, "policy is null");
        };
        if out_logprob.is_null() {
            return fail(FwStatus::NullPointer, "out_logprob is null");
        }
        let (prompt, toks) = match (read_tokens(prompt, prompt_len, "prompt"), read_tokens(tokens, tokens_len, "tokens")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match simpo::seq_logprob_given(&p.0, &prompt, &toks) {
            Ok(s) => {
                *out_logprob = s.total_logprob;
                FwStatus::Ok
            }
            Err(e) => fail(FwStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `out` must be a valid pointer. Release with `fw_dataset_free`.
#[no_mangle]
pub unsafe extern "C" fn fw_dataset_new(out: *mut *mut FwDataset) -> FwStatus {
    guard(|| {
        if out.is_null() {
            return fail(FwStatus::NullPointer, "out is null");
        }
        *out = Box::into_raw(Box::new(FwDataset(Vec::new())));
        FwStatus::Ok
    })
}

/// # Safety
/// `dataset` must come from `fw_dataset_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fw_dataset_free(dataset: *mut FwDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Appends one preference pair of token ids.
///
/// # Safety
/// `dataset` must be a live handle; each array must hold its stated length.
#[no_mangle]
pub unsafe extern "C" fn fw_dataset_push(
    dataset: *mut FwDataset,
    prompt: *const u32,
    prompt_len: usize,
    chosen: *const u32,
    chosen_len: usize,
    rejected: *const u32,
    rejected_len: usize,
) -> FwStatus {
    guard(|| {
        let Some(d) = dataset.as_mut() else {
            return fail(FwStatus::NullPointer, "dataset is null");
        };
        let parts = (
            read_tokens(prompt, prompt_len, "prompt"),
            read_tokens(chosen, chosen_len, "chosen"),
            read_tokens(rejected, rejected_len, "rejected"),
        );
        let (prompt, chosen, rejected) = match parts {
            (Ok(p), Ok(c), Ok(r)) => (p, c, r),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        if chosen.is_empty() || rejected.is_empty() {
            return fail(FwStatus::InvalidArgument, "chosen and rejected must be non-empty");
        }
        d.0.push(TokenPair { prompt, chosen, rejected });
        FwStatus::Ok
    })
}

/// # Safety
/// `dataset` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fw_dataset_len(dataset: *const FwDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// Trains `policy` in place by full-batch gradient descent and reports the
/// loss before and after.
///
/// # Safety
/// Handles must be live; output pointers valid or null.
#[no_mangle]
pub unsafe extern "C" fn fw_policy_train(
    policy: *mut FwPolicy,
    dataset: *const FwDataset,
    beta: f64,
    gamma: f64,
    learning_rate: f64,
    steps: usize,
    out_initial_loss: *mut f64,
    out_final_loss: *mut f64,
) -> FwStatus {
    guard(|| {
        let (Some(p), Some(d)) = (policy.as_mut(), dataset.as_ref()) else {
            return fail(FwStatus::NullPointer, "policy or dataset is null");
        };
        let cfg = SimpoConfig {
            beta,
            gamma,
            learning_rate,
            steps,
        };
        match simpo::train_simpo(&p.0, &d.0, &cfg) {
            Ok(outcome) => {
                if let (Some(o), Some(first)) = (out_initial_loss.as_mut(), outcome.trace.first()) {
                    *o = first.loss;
                }
                if let Some(o) = out_final_loss.as_mut() {
                    *o = outcome.final_loss;
                }
                p.0 = outcome.policy;
                FwStatus::Ok
            }
            Err(e) => fail(FwStatus::InvalidArgument, e.to_string()),
        }
    })
}
