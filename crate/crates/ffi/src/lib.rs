//! C interface to the retrieval pipeline.
//!
//! Every fallible call returns a [`ConvirStatus`]; on failure the message is
//! available from [`convir_last_error`] on the same thread. Strings handed
//! out by the library must be released with [`convir_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use convir::config::Config;
use convir::data::Split;
use convir::eval::{mrr, recall_at_k, retrieve_topk, CandidateIndex, FusionResult, SessionPrefix};
use convir::pipeline::{self, RunPaths, Workspace};
use convir::scoring::Model;
use convir::synth::{generate_corpus, SynthConfig};
use convir::training::CheckpointManifest;
use convir::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvirStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    NotFound = 5,
    InvalidArgument = 6,
    Dimension = 7,
    Integrity = 8,
    Version = 9,
    ConfigHash = 10,
    InvalidSession = 11,
    Empty = 12,
    Diverged = 13,
    Image = 14,
    Panic = 15,
}

impl From<&Error> for ConvirStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => ConvirStatus::Io,
            Error::Schema { .. } | Error::Json(_) => ConvirStatus::Parse,
            Error::InvalidSession { .. } => ConvirStatus::InvalidSession,
            Error::NotFound(_) => ConvirStatus::NotFound,
            Error::Dimension(_) => ConvirStatus::Dimension,
            Error::Parameter(_) => ConvirStatus::InvalidArgument,
            Error::Image(_) => ConvirStatus::Image,
            Error::Integrity(_) => ConvirStatus::Integrity,
            Error::Version { .. } => ConvirStatus::Version,
            Error::ConfigHash { .. } => ConvirStatus::ConfigHash,
            Error::Diverged(_) => ConvirStatus::Diverged,
            Error::Empty(_) => ConvirStatus::Empty,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Failure(ConvirStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(ConvirStatus::from(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status plus the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ConvirStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            ConvirStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ConvirStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(ConvirStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(ConvirStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn opt_path(p: *const c_char, name: &str) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(|s| Some(PathBuf::from(s)))
    }
}

fn out_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| Failure(ConvirStatus::Parse, e.to_string()))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn null_out<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(ConvirStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library and valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn convir_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn convir_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn convir_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fraction of `ranks` (1-based) at most `k`.
///
/// # Safety
/// `ranks` must point to `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convir_recall_at_k(ranks: *const usize, n: usize, k: usize, out: *mut f64) -> ConvirStatus {
    guard(|| {
        null_out(out, "out")?;
        if n > 0 && ranks.is_null() {
            return Err(Failure(ConvirStatus::NullArgument, "ranks is null".into()));
        }
        let r = if n == 0 { &[][..] } else { std::slice::from_raw_parts(ranks, n) };
        if r.contains(&0) {
            return Err(Failure(ConvirStatus::InvalidArgument, "ranks are 1-based".into()));
        }
        *out = recall_at_k(r, k);
        Ok(())
    })
}

/// Mean reciprocal rank of `ranks` (1-based).
///
/// # Safety
/// `ranks` must point to `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convir_mrr(ranks: *const usize, n: usize, out: *mut f64) -> ConvirStatus {
    guard(|| {
        null_out(out, "out")?;
        if n > 0 && ranks.is_null() {
            return Err(Failure(ConvirStatus::NullArgument, "ranks is null".into()));
        }
        let r = if n == 0 { &[][..] } else { std::slice::from_raw_parts(ranks, n) };
        if r.contains(&0) {
            return Err(Failure(ConvirStatus::InvalidArgument, "ranks are 1-based".into()));
        }
        *out = mrr(r);
        Ok(())
    })
}

/// Writes a synthetic corpus to `out_dir`.
///
/// # Safety
/// `out_dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn convir_synth_corpus(out_dir: *const c_char, n_images: usize, seed: u64) -> ConvirStatus {
    guard(|| {
        let dir = str_arg(out_dir, "out_dir")?;
        let cfg = SynthConfig {
            n_images,
            seed,
            ..SynthConfig::default()
        };
        generate_corpus(&cfg)?.save(Path::new(dir))?;
        Ok(())
    })
}

/// A corpus plus trained checkpoints, index and fusion weights.
pub struct ConvirRetriever {
    ws: Workspace,
    models: Vec<(Model, CheckpointManifest)>,
    index: CandidateIndex,
    weights: FusionResult,
    run: RunPaths,
}

/// Opens a trained run. `config_path` may be null for the default config.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable. The
/// handle must be released with [`convir_retriever_free`].
#[no_mangle]
pub unsafe extern "C" fn convir_retriever_open(
    corpus_dir: *const c_char,
    run_dir: *const c_char,
    config_path: *const c_char,
    out: *mut *mut ConvirRetriever,
) -> ConvirStatus {
    guard(|| {
        null_out(out, "out")?;
        *out = ptr::null_mut();
        let corpus = PathBuf::from(str_arg(corpus_dir, "corpus_dir")?);
        let run = RunPaths::new(str_arg(run_dir, "run_dir")?);
        let cfg = match opt_path(config_path, "config_path")? {
            Some(p) => Config::load(&p)?,
            None => Config::default(),
        };
        let ws = Workspace::open(&corpus, None, &cfg)?;
        let models = pipeline::load_models(&run)?;
        let index = pipeline::load_index(&run)?;
        let weights = pipeline::load_weights(&run)?;
        *out = Box::into_raw(Box::new(ConvirRetriever {
            ws,
            models,
            index,
            weights,
            run,
        }));
        Ok(())
    })
}

/// Releases a retriever. Null is ignored.
///
/// # Safety
/// `h` must come from [`convir_retriever_open`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn convir_retriever_free(h: *mut ConvirRetriever) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of images in the retriever's corpus.
///
/// # Safety
/// `h` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn convir_retriever_image_count(h: *const ConvirRetriever) -> usize {
    h.as_ref().map_or(0, |r| r.ws.prepared.len())
}

/// Ranks the pool for a session given as JSON (`session_id`, `category`,
/// `turns`) and returns the top `k` with partial scores as JSON.
///
/// # Safety
/// `h` must be a live handle, `session_json` NUL-terminated, `out_json`
/// writable. Free the result with [`convir_string_free`].
#[no_mangle]
pub unsafe extern "C" fn convir_retriever_retrieve(
    h: *const ConvirRetriever,
    session_json: *const c_char,
    k: usize,
    out_json: *mut *mut c_char,
) -> ConvirStatus {
    guard(|| {
        null_out(out_json, "out_json")?;
        let r = h
            .as_ref()
            .ok_or_else(|| Failure(ConvirStatus::NullArgument, "handle is null".into()))?;
        let prefix: SessionPrefix = serde_json::from_str(str_arg(session_json, "session_json")?).map_err(Error::from)?;
        let models = [&r.models[0].0, &r.models[1].0, &r.models[2].0];
        let result = retrieve_topk(&prefix, k, models, &r.index, &r.weights.weights, &r.ws.prepared, &r.ws.corpus.text)?;
        out_string(out_json, serde_json::to_string(&result).map_err(Error::from)?)
    })
}

/// Evaluates a split (`"train"`, `"val"` or `"test"`) and returns the fused
/// report as JSON.
///
/// # Safety
/// `h` must be a live handle, `split` NUL-terminated, `out_json` writable.
/// Free the result with [`convir_string_free`].
#[no_mangle]
pub unsafe extern "C" fn convir_retriever_evaluate(
    h: *const ConvirRetriever,
    split: *const c_char,
    out_json: *mut *mut c_char,
) -> ConvirStatus {
    guard(|| {
        null_out(out_json, "out_json")?;
        let r = h
            .as_ref()
            .ok_or_else(|| Failure(ConvirStatus::NullArgument, "handle is null".into()))?;
        let split: Split = str_arg(split, "split")?.parse()?;
        let ev = pipeline::evaluate(&r.ws, split, &r.run)?;
        out_string(out_json, serde_json::to_string(&ev.fused).map_err(Error::from)?)
    })
}
