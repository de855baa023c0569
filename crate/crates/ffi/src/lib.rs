//! C interface to `xling`.
//!
//! Every function returns an [`XlingStatus`]; on failure the message is kept
//! per thread and read with [`xling_last_error`]. Objects are opaque handles
//! released with their `_free` function. Strings returned to the caller are
//! released with [`xling_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use xling::eval::{emergence_step, reach_ids, TokenTrie, DEFAULT_FRONTIER_CAP};
use xling::lm::{ngram_fit, NGram};
use xling::runner::{run_pipeline, ExperimentConfig, RunSpec, Stage};
use xling::tokenizer::{train_bpe, BpeTokenizer, Regime};
use xling::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XlingStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Config = 4,
    Io = 5,
    Parse = 6,
    Tokenizer = 7,
    Context = 8,
    Undefined = 9,
    Stage = 10,
    Other = 11,
    Panic = 12,
}

/// Trained BPE tokenizer.
pub struct XlingTokenizer(BpeTokenizer);

/// Smoothed n-gram model over token ids.
pub struct XlingNgram(NGram);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> XlingStatus {
    match e {
        Error::Config { .. } | Error::Usage(_) => XlingStatus::Config,
        Error::Io(_) => XlingStatus::Io,
        Error::Parse { .. } => XlingStatus::Parse,
        Error::Tokenizer(_) | Error::VocabUnreachable { .. } | Error::TokenRange { .. } => XlingStatus::Tokenizer,
        Error::Context { .. } => XlingStatus::Context,
        Error::Undefined(_) => XlingStatus::Undefined,
        Error::Stage { .. } => XlingStatus::Stage,
        _ => XlingStatus::Other,
    }
}

struct Fail(XlingStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> XlingStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            XlingStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside xling".into());
            XlingStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(XlingStatus::NullArgument, format!("`{name}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(XlingStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(name))
}

/// Splits a flat id array into sequences of the given lengths.
unsafe fn sequences(ids: *const u32, lens: *const usize, n: usize) -> Result<Vec<Vec<u32>>, Fail> {
    let lens = slice_arg(lens, n, "lens")?;
    let total = lens.iter().sum();
    let ids = slice_arg(ids, total, "ids")?;
    let mut out = Vec::with_capacity(n);
    let mut at = 0;
    for &l in lens {
        out.push(ids[at..at + l].to_vec());
        at += l;
    }
    Ok(out)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn xling_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn xling_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn xling_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Trains a tokenizer on `n_lines` lines over the a-z initial alphabet.
///
/// # Safety
/// `lines` must point to `n_lines` NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xling_tokenizer_train(
    lines: *const *const c_char,
    n_lines: usize,
    vocab_size: usize,
    balanced: bool,
    seed: u64,
    out: *mut *mut XlingTokenizer,
) -> XlingStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let lines: Vec<&str> = slice_arg(lines, n_lines, "lines")?
            .iter()
            .map(|&p| str_arg(p, "lines[i]"))
            .collect::<Result<_, _>>()?;
        let regime = if balanced { Regime::Balanced } else { Regime::Vanilla };
        let alphabet: String = ('a'..='z').collect();
        let t = train_bpe(&lines, vocab_size, regime, &alphabet, seed)?;
        *out = Box::into_raw(Box::new(XlingTokenizer(t)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xling_tokenizer_load(path: *const c_char, out: *mut *mut XlingTokenizer) -> XlingStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let t = BpeTokenizer::load(str_arg(path, "path")?.as_ref())?;
        *out = Box::into_raw(Box::new(XlingTokenizer(t)));
        Ok(())
    })
}

/// # Safety
/// `t` must be a live tokenizer handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn xling_tokenizer_save(t: *const XlingTokenizer, path: *const c_char) -> XlingStatus {
    guard(|| {
        handle(t, "t")?.0.save(str_arg(path, "path")?.as_ref())?;
        Ok(())
    })
}

/// Vocabulary size, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live tokenizer handle.
#[no_mangle]
pub unsafe extern "C" fn xling_tokenizer_vocab_size(t: *const XlingTokenizer) -> usize {
    t.as_ref().map_or(0, |t| t.0.vocab_size())
}

/// Encodes `text` into `ids`. `*n_ids` always receives the required length;
/// `BUFFER_TOO_SMALL` is returned when it exceeds `capacity`.
///
/// # Safety
/// `ids` must have room for `capacity` values (may be null when it is 0).
#[no_mangle]
pub unsafe extern "C" fn xling_tokenizer_encode(
    t: *const XlingTokenizer,
    text: *const c_char,
    ids: *mut u32,
    capacity: usize,
    n_ids: *mut usize,
) -> XlingStatus {
    guard(|| {
        let n_ids = out_arg(n_ids, "n_ids")?;
        let enc = handle(t, "t")?.0.encode(str_arg(text, "text")?)?;
        *n_ids = enc.len();
        if enc.len() > capacity {
            return Err(Fail(
                XlingStatus::BufferTooSmall,
                format!("{} ids do not fit in {capacity}", enc.len()),
            ));
        }
        if !enc.is_empty() {
            if ids.is_null() {
                return Err(null("ids"));
            }
            ptr::copy_nonoverlapping(enc.as_ptr(), ids, enc.len());
        }
        Ok(())
    })
}

/// Decodes ids into a newly allocated string.
///
/// # Safety
/// `ids` must hold `n_ids` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xling_tokenizer_decode(
    t: *const XlingTokenizer,
    ids: *const u32,
    n_ids: usize,
    out: *mut *mut c_char,
) -> XlingStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = handle(t, "t")?.0.decode(slice_arg(ids, n_ids, "ids")?)?;
        *out = CString::new(text)
            .map_err(|e| Fail(XlingStatus::Other, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn xling_tokenizer_free(t: *mut XlingTokenizer) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Fits an add-k n-gram model. Sequence `i` occupies the next `lens[i]`
/// entries of `ids`.
///
/// # Safety
/// `lens` must hold `n_seqs` values and `ids` their sum; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xling_ngram_fit(
    ids: *const u32,
    lens: *const usize,
    n_seqs: usize,
    order: usize,
    k: f64,
    vocab_size: usize,
    out: *mut *mut XlingNgram,
) -> XlingStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let seqs = sequences(ids, lens, n_seqs)?;
        let m = ngram_fit(&seqs, order, k, vocab_size)?;
        *out = Box::into_raw(Box::new(XlingNgram(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn xling_ngram_free(m: *mut XlingNgram) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Whether some target sequence can be produced from `prompt` by picking a
/// top-`k` token at every step. A `frontier_cap` of 0 uses the default.
///
/// # Safety
/// `prompt` must hold `n_prompt` ids; targets are laid out as in
/// [`xling_ngram_fit`]; `reached` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xling_ngram_reachable(
    m: *const XlingNgram,
    prompt: *const u32,
    n_prompt: usize,
    target_ids: *const u32,
    target_lens: *const usize,
    n_targets: usize,
    k: usize,
    frontier_cap: usize,
    reached: *mut bool,
) -> XlingStatus {
    guard(|| {
        let reached = out_arg(reached, "reached")?;
        let m = handle(m, "m")?;
        let prompt = slice_arg(prompt, n_prompt, "prompt")?;
        let targets = sequences(target_ids, target_lens, n_targets)?;
        let trie = TokenTrie::from_sequences(targets.iter().map(Vec::as_slice))?;
        let cap = if frontier_cap == 0 { DEFAULT_FRONTIER_CAP } else { frontier_cap };
        *reached = reach_ids(&m.0, prompt, &trie, k, cap, false)?.reached;
        Ok(())
    })
}

/// First step whose value exceeds `threshold`. `*found` is false when no
/// step does, in which case `*step` is left untouched.
///
/// # Safety
/// `steps` and `values` must hold `n` values; `step` and `found` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xling_emergence_step(
    steps: *const usize,
    values: *const f64,
    n: usize,
    threshold: f64,
    step: *mut usize,
    found: *mut bool,
) -> XlingStatus {
    guard(|| {
        let found = out_arg(found, "found")?;
        let step = out_arg(step, "step")?;
        let steps = slice_arg(steps, n, "steps")?;
        let values = slice_arg(values, n, "values")?;
        let traj: Vec<(usize, f64)> = steps.iter().copied().zip(values.iter().copied()).collect();
        match emergence_step(&traj, threshold)? {
            Some(s) => {
                *step = s;
                *found = true;
            }
            None => *found = false,
        }
        Ok(())
    })
}

/// Runs the full pipeline for one seed pair. `config_path` may be null for
/// the desk profile; `out_dir` may be null to keep the configured one. The
/// run directory is returned as a newly allocated string.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `run_dir` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xling_run_pipeline(
    config_path: *const c_char,
    out_dir: *const c_char,
    data_seed: u64,
    model_seed: u64,
    run_dir: *mut *mut c_char,
) -> XlingStatus {
    guard(|| {
        let run_dir = out_arg(run_dir, "run_dir")?;
        let mut cfg = if config_path.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::load(str_arg(config_path, "config_path")?.as_ref())?
        };
        if !out_dir.is_null() {
            cfg.out = PathBuf::from(str_arg(out_dir, "out_dir")?);
        }
        let run = RunSpec {
            point: cfg.point(),
            data_seed,
            model_seed,
        };
        let rep = run_pipeline(&cfg, run, Stage::Eval)?;
        let dir = rep.run_dir.to_string_lossy().into_owned();
        *run_dir = CString::new(dir)
            .map_err(|e| Fail(XlingStatus::Other, e.to_string()))?
            .into_raw();
        Ok(())
    })
}
