//! C ABI over `discourse-core`.
//!
//! Objects cross the boundary as opaque handles created by `dsc_*_new`,
//! `dsc_*_load` or `dsc_*_fit` functions and released with the matching
//! `dsc_*_free`. Every fallible function returns a [`DscStatus`]; on failure
//! `dsc_last_error()` describes the problem for the calling thread. Strings
//! returned through out-parameters are owned by the caller and must be
//! released with [`dsc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use discourse::coordination::{aggregated_coordination, CoordinationConfig};
use discourse::corpus::{tokenize, Corpus, Role};
use discourse::lexicon::LexiconSet;
use discourse::stages::{decode_corpus, em_fit, init_model, EmConfig, StageModel};
use discourse::stats::mann_whitney_u;
use discourse::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DscStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    InvalidInput = 4,
    InsufficientData = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DscRole {
    Counselor = 0,
    Texter = 1,
}

impl From<DscRole> for Role {
    fn from(r: DscRole) -> Self {
        match r {
            DscRole::Counselor => Role::Counselor,
            DscRole::Texter => Role::Texter,
        }
    }
}

/// Opaque corpus handle.
pub struct DscCorpus(Corpus);

/// Opaque stage model handle.
pub struct DscStageModel(StageModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> DscStatus {
    match e {
        Error::Io { .. } => DscStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => DscStatus::Parse,
        Error::InsufficientData(_) => DscStatus::InsufficientData,
        _ => DscStatus::InvalidInput,
    }
}

struct Fail(DscStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(DscStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DscStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DscStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal error");
            DscStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(DscStatus::Internal, "string contains NUL".into()))
}

fn to_json<T: serde::Serialize + ?Sized>(v: &T) -> Result<*mut c_char, Fail> {
    into_c_string(serde_json::to_string(v).map_err(|e| Fail(DscStatus::Internal, e.to_string()))?)
}

/// Message describing the last failure on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dsc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dsc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dsc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Tokenizes `text` and returns the tokens as a JSON array.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsc_tokenize_json(text: *const c_char, out_json: *mut *mut c_char) -> DscStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_arg(out_json, "out_json")?;
        *out = to_json(&tokenize(text))?;
        Ok(())
    })
}

/// Reads a transcript JSONL file. Rejected records are skipped.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsc_corpus_load(path: *const c_char, out: *mut *mut DscCorpus) -> DscStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let ingested = Corpus::from_jsonl_path(path)?;
        *out = Box::into_raw(Box::new(DscCorpus(ingested.corpus)));
        Ok(())
    })
}

/// Parses transcript JSONL held in memory.
///
/// # Safety
/// `jsonl` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsc_corpus_parse(jsonl: *const c_char, out: *mut *mut DscCorpus) -> DscStatus {
    guard(|| {
        let text = str_arg(jsonl, "jsonl")?;
        let out = out_arg(out, "out")?;
        let ingested = Corpus::from_jsonl_reader(text.as_bytes())?;
        *out = Box::into_raw(Box::new(DscCorpus(ingested.corpus)));
        Ok(())
    })
}

/// Number of conversations, or 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dsc_corpus_len(corpus: *const DscCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `corpus` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsc_corpus_free(corpus: *mut DscCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Fits a stage model by EM from the default initialization and writes the
/// final total log-likelihood to `out_loglik` when it is non-null.
///
/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsc_stage_model_fit(
    corpus: *const DscCorpus,
    stages: usize,
    vocab_min_count: usize,
    max_iter: usize,
    tol: f64,
    out: *mut *mut DscStageModel,
    out_loglik: *mut f64,
) -> DscStatus {
    guard(|| {
        let corpus = &corpus.as_ref().ok_or_else(|| invalid("corpus is null"))?.0;
        let out = out_arg(out, "out")?;
        let fit = em_fit(init_model(corpus, stages, vocab_min_count)?, corpus, EmConfig { max_iter, tol })?;
        if let Some(ll) = out_loglik.as_mut() {
            *ll = fit.trace.last().copied().unwrap_or(f64::NAN);
        }
        *out = Box::into_raw(Box::new(DscStageModel(fit.model)));
        Ok(())
    })
}

/// Loads a stage model JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsc_stage_model_load(path: *const c_char, out: *mut *mut DscStageModel) -> DscStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(DscStageModel(StageModel::load(path)?)));
        Ok(())
    })
}

/// Number of stages, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dsc_stage_model_stages(model: *const DscStageModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.stages())
}

/// Serializes the model to JSON.
///
/// # Safety
/// `model` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsc_stage_model_to_json(model: *const DscStageModel, out_json: *mut *mut c_char) -> DscStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| invalid("model is null"))?.0;
        *out_arg(out_json, "out_json")? = to_json(model)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsc_stage_model_free(model: *mut DscStageModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Viterbi paths of every conversation as a JSON object mapping conversation
/// id to 1-based stages.
///
/// # Safety
/// Both handles must be live; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsc_decode_json(
    model: *const DscStageModel,
    corpus: *const DscCorpus,
    out_json: *mut *mut c_char,
) -> DscStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| invalid("model is null"))?.0;
        let corpus = &corpus.as_ref().ok_or_else(|| invalid("corpus is null"))?.0;
        let out = out_arg(out_json, "out_json")?;
        let paths: std::collections::BTreeMap<String, Vec<usize>> =
            decode_corpus(model, corpus).into_iter().map(|(id, p)| (id, p.stages)).collect();
        *out = to_json(&paths)?;
        Ok(())
    })
}

/// Aggregated coordination of the replying role to `initiator` over the
/// bundled style markers.
///
/// # Safety
/// `corpus` must be a live handle; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsc_coordination(
    corpus: *const DscCorpus,
    initiator: DscRole,
    out_value: *mut f64,
) -> DscStatus {
    guard(|| {
        let corpus = &corpus.as_ref().ok_or_else(|| invalid("corpus is null"))?.0;
        let out = out_arg(out_value, "out_value")?;
        let lexicons = LexiconSet::bundled();
        let result = aggregated_coordination(
            corpus.conversations(),
            initiator.into(),
            &lexicons.style_markers(),
            CoordinationConfig::default(),
        )?;
        *out = result.group;
        Ok(())
    })
}

/// Two-sided Mann-Whitney U test of `xs` against `ys`.
///
/// # Safety
/// `xs` and `ys` must point to `nx` and `ny` doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsc_mann_whitney(
    xs: *const f64,
    nx: usize,
    ys: *const f64,
    ny: usize,
    out_u: *mut f64,
    out_p: *mut f64,
) -> DscStatus {
    guard(|| {
        let xs = slice_arg(xs, nx, "xs")?;
        let ys = slice_arg(ys, ny, "ys")?;
        let (u, p) = (out_arg(out_u, "out_u")?, out_arg(out_p, "out_p")?);
        let r = mann_whitney_u(xs, ys)?;
        *u = r.u;
        *p = r.p;
        Ok(())
    })
}

/// Area under the ROC curve; `labels` holds 0 for negatives and nonzero for
/// positives.
///
/// # Safety
/// `scores` and `labels` must point to `n` elements; `out_auc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsc_auc(scores: *const f64, labels: *const u8, n: usize, out_auc: *mut f64) -> DscStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        let labels: Vec<bool> = slice_arg(labels, n, "labels")?.iter().map(|l| *l != 0).collect();
        *out_arg(out_auc, "out_auc")? = discourse::predict::auc(scores, &labels)?;
        Ok(())
    })
}
